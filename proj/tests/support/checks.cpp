#include "checks.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "calm/alignment.hpp"
#include "calm/controller.hpp"
#include "oracles.hpp"

namespace calm::check {
namespace {

std::vector<double> random_simplex(std::mt19937_64& rng, std::size_t n, double zero_prob) {
  std::exponential_distribution<double> e(1.0);
  std::bernoulli_distribution zero(zero_prob);
  std::vector<double> p(n);
  double s = 0.0;
  for (auto& v : p) {
    v = zero(rng) ? 0.0 : e(rng);
    s += v;
  }
  if (s == 0.0) {
    p[n - 1] = 1.0;
    s = 1.0;
  }
  for (auto& v : p) v /= s;
  return p;
}

Point random_point(std::mt19937_64& rng, Eigen::Index dim, double scale) {
  std::normal_distribution<double> n01;
  Point p(dim);
  for (Eigen::Index d = 0; d < dim; ++d) p(d) = scale * n01(rng);
  return p;
}

}  // namespace

GradientReport gradient_vs_finite_differences(std::size_t configs, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> f_dist(2, 12);
  std::uniform_int_distribution<Eigen::Index> dim_dist(1, 4);
  GradientReport rep;
  for (std::size_t c = 0; c < configs; ++c) {
    const auto f = f_dist(rng);
    const auto dim = dim_dist(rng);
    std::vector<Point> states;
    Point walk = random_point(rng, dim, 1.0);
    for (std::size_t i = 0; i < f; ++i) {
      walk += random_point(rng, dim, 0.5);
      states.push_back(walk);
    }
    const Eigen::MatrixXd cov = oracle::random_spd(rng, dim, 0.05, 1.0);
    const MeanTrajectory mean(states, 0.1, cov);
    const auto pred = random_simplex(rng, f, 0.3);
    std::uniform_int_distribution<std::size_t> pick(0, f - 1);
    const Point x = states[pick(rng)] + random_point(rng, dim, 0.4);

    const Point analytic = control::g_gradient(x, pred, mean);
    const double h = 1e-3 * std::sqrt(cov.eigenvalues().real().minCoeff());
    const Point numeric =
        oracle::numeric_gradient([&](const Point& y) { return control::g_value(y, pred, mean); }, x, h);
    const double rel = (analytic - numeric).norm() / std::max(analytic.norm(), 1e-300);
    ++rep.configs;
    if (rel > rep.max_rel_error) {
      rep.max_rel_error = rel;
      std::ostringstream os;
      os << "config " << c << " F=" << f << " dim=" << dim << " |grad|=" << analytic.norm();
      rep.worst = os.str();
    }
  }
  return rep;
}

ForwardReport forward_vs_enumeration(std::size_t instances, std::uint64_t seed, std::size_t max_f,
                                     std::size_t max_k) {
  using align::KernelFamily;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> f_dist(2, max_f);
  std::uniform_int_distribution<std::size_t> k_dist(1, max_k);
  std::uniform_int_distribution<Eigen::Index> dim_dist(1, 3);
  std::uniform_real_distribution<double> delta_dist(0.3, 2.5);
  std::uniform_real_distribution<double> sigma_dist(0.2, 6.0);
  const double eps_choices[] = {0.0, 1e-6, 1e-3, 0.2};
  std::uniform_int_distribution<int> eps_pick(0, 3);
  std::bernoulli_distribution coin;

  ForwardReport rep;
  for (std::size_t n = 0; n < instances; ++n) {
    const auto f = f_dist(rng);
    const auto dim = dim_dist(rng);
    const int slot = static_cast<int>(n % 5);
    align::TransitionKernel kernel;
    kernel.family = slot == 0   ? KernelFamily::gradient_predict
                    : slot == 1 ? KernelFamily::stable_forward
                    : slot == 4 ? KernelFamily::periodic
                                : KernelFamily::backwards;
    kernel.reading = slot == 3 ? align::BackwardsReading::literal : align::BackwardsReading::forward_plus_epsilon;
    kernel.delta = delta_dist(rng);
    kernel.sigma = coin(rng) ? (2.0 * kernel.delta) * (2.0 * kernel.delta) : sigma_dist(rng);
    kernel.epsilon = eps_choices[eps_pick(rng)];
    if (kernel.family == KernelFamily::backwards && kernel.epsilon == 0.0) kernel.epsilon = 1e-6;

    std::vector<Point> states;
    Point walk = random_point(rng, dim, 1.0);
    for (std::size_t i = 0; i < f; ++i) {
      walk += random_point(rng, dim, 0.6);
      states.push_back(walk);
    }
    const Eigen::MatrixXd cov = oracle::random_spd(rng, dim, 0.1, 1.5);
    const MeanTrajectory mean(states, 0.1, cov);

    // Observations wander along the mean, sometimes backwards, with noise.
    const auto k = k_dist(rng);
    std::vector<Point> obs;
    std::uniform_int_distribution<std::size_t> pick(0, f - 1);
    for (std::size_t t = 0; t < k; ++t) obs.push_back(states[pick(rng)] + random_point(rng, dim, 0.5));

    const align::Aligner aligner(mean, kernel);
    auto state = aligner.init(obs[0]);
    for (std::size_t t = 1; t < k; ++t) state = aligner.update(state, obs[t]);
    const auto ref = oracle::forward_enumerate(states, cov, kernel, obs);

    double post_rel = 0.0;
    for (std::size_t i = 0; i < f; ++i) {
      const double a = state.posterior()[i];
      const double b = ref.posterior[i];
      const double rel = b > 0.0 ? std::abs(a - b) / b : (a == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
      post_rel = std::max(post_rel, rel);
    }
    const double lm_rel =
        std::abs(state.log_marginal() - ref.log_marginal) / std::max(1.0, std::abs(ref.log_marginal));

    ++rep.instances;
    ++rep.per_family[slot];
    if (post_rel > rep.max_posterior_rel || lm_rel > rep.max_log_marginal_rel) {
      std::ostringstream os;
      os << "instance " << n << " family=" << align::to_string(kernel.family) << " F=" << f << " k=" << k
         << " eps=" << kernel.epsilon;
      rep.worst = os.str();
    }
    rep.max_posterior_rel = std::max(rep.max_posterior_rel, post_rel);
    rep.max_log_marginal_rel = std::max(rep.max_log_marginal_rel, lm_rel);
  }
  return rep;
}

}  // namespace calm::check
