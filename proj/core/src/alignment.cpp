#include "calm/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "calm/errors.hpp"

namespace calm::align {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp(std::span<const double> v) {
  double m = kNegInf;
  for (double x : v) m = std::max(m, x);
  if (m == kNegInf || !std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

void check_kernel(const TransitionKernel& k) {
  if (!(k.sigma > 0.0) || !std::isfinite(k.sigma)) throw InvalidArgument("kernel sigma must be finite and > 0");
  if (!(k.delta > 0.0) || !std::isfinite(k.delta)) throw InvalidArgument("kernel delta must be finite and > 0");
  if (!(k.epsilon >= 0.0) || !std::isfinite(k.epsilon)) throw InvalidArgument("kernel epsilon must be >= 0");
}

}  // namespace

TransitionKernel make_kernel(KernelFamily family, double delta, std::optional<double> sigma, double epsilon) {
  TransitionKernel k;
  k.family = family;
  k.delta = delta;
  k.sigma = sigma.value_or((2.0 * delta) * (2.0 * delta));
  k.epsilon = epsilon;
  check_kernel(k);
  return k;
}

KernelFamily parse_kernel_family(std::string_view name) {
  if (name == "gradient" || name == "gradient_predict") return KernelFamily::gradient_predict;
  if (name == "stable" || name == "stable_forward") return KernelFamily::stable_forward;
  if (name == "backwards") return KernelFamily::backwards;
  if (name == "periodic") return KernelFamily::periodic;
  throw InvalidArgument("unknown kernel '" + std::string(name) + "' (expected gradient|stable|backwards|periodic)");
}

std::string_view to_string(KernelFamily family) {
  switch (family) {
    case KernelFamily::gradient_predict: return "gradient_predict";
    case KernelFamily::stable_forward: return "stable_forward";
    case KernelFamily::backwards: return "backwards";
    case KernelFamily::periodic: return "periodic";
  }
  return "unknown";
}

std::string_view cli_name(KernelFamily family) {
  switch (family) {
    case KernelFamily::gradient_predict: return "gradient";
    case KernelFamily::stable_forward: return "stable";
    case KernelFamily::backwards: return "backwards";
    case KernelFamily::periodic: return "periodic";
  }
  return "unknown";
}

double rbf(double a, double b, double sigma) { return std::exp(-(a - b) * (a - b) / (2.0 * sigma)); }

double rbf(const Point& a, const Point& b, double sigma) { return std::exp(-(a - b).squaredNorm() / (2.0 * sigma)); }

double emission(const Point& x, const MeanTrajectory& mean, std::size_t i) {
  if (i >= mean.size()) {
    throw InvalidArgument("emission: index " + std::to_string(i) + " out of range for " +
                          std::to_string(mean.size()) + " states");
  }
  if (x.size() != mean.dim()) throw InvalidArgument("emission: dimension mismatch");
  return std::exp(mean.log_emission(x, i));
}

std::vector<double> log_transition_row(const TransitionKernel& kernel, std::size_t j, std::size_t f) {
  check_kernel(kernel);
  if (j >= f) throw InvalidArgument("transition_row: j out of range");
  const std::size_t last = f - 1;
  std::vector<double> row(f, kNegInf);
  std::vector<bool> eps_slot(f, false);
  auto log_phi = [&](std::size_t i) {
    const double d = static_cast<double>(i) - (static_cast<double>(j) + kernel.delta);
    return -d * d / (2.0 * kernel.sigma);
  };

  switch (kernel.family) {
    case KernelFamily::gradient_predict:
      for (std::size_t i = j; i < f; ++i) row[i] = log_phi(i);
      break;
    case KernelFamily::stable_forward:
      if (j == last) {
        row[last] = 0.0;
      } else {
        for (std::size_t i = j + 1; i < f; ++i) row[i] = log_phi(i);
      }
      break;
    case KernelFamily::backwards:
      for (std::size_t i = 0; i < f; ++i) {
        const bool phi_branch =
            kernel.reading == BackwardsReading::forward_plus_epsilon ? i >= j : i <= j;
        if (phi_branch) {
          row[i] = log_phi(i);
        } else {
          eps_slot[i] = true;
        }
      }
      break;
    case KernelFamily::periodic:
      for (std::size_t i = 0; i < f; ++i) {
        if (i > j) {
          row[i] = log_phi(i);
        } else if (j == last && i == 0) {
          row[i] = 0.0;
        } else {
          eps_slot[i] = true;
        }
      }
      break;
  }

  if (kernel.epsilon > 0.0) {
    const double row_max = *std::max_element(row.begin(), row.end());
    const double log_eps = std::log(kernel.epsilon) + (row_max == kNegInf ? 0.0 : row_max);
    for (std::size_t i = 0; i < f; ++i) {
      if (eps_slot[i]) row[i] = log_eps;
    }
  }

  const double norm = log_sum_exp(row);
  if (!std::isfinite(norm)) {
    // Numeric floor: all mass on the smallest legal successor.
    std::fill(row.begin(), row.end(), kNegInf);
    row[std::min(j + 1, last)] = 0.0;
    return row;
  }
  for (double& v : row) v -= norm;
  return row;
}

std::vector<double> transition_row(const TransitionKernel& kernel, std::size_t j, std::size_t f) {
  auto row = log_transition_row(kernel, j, f);
  for (double& v : row) v = std::exp(v);
  return row;
}

std::size_t AlignmentState::mode() const {
  return static_cast<std::size_t>(std::distance(prob_.begin(), std::max_element(prob_.begin(), prob_.end())));
}

Aligner::Aligner(const MeanTrajectory& mean, const TransitionKernel& kernel)
    : mean_(mean), kernel_(kernel), f_(mean.size()) {
  check_kernel(kernel_);
  TransitionKernel predict_kernel = kernel_;
  predict_kernel.family = KernelFamily::gradient_predict;
  log_trans_.assign(f_ * f_, kNegInf);
  trans_.setZero(static_cast<Eigen::Index>(f_), static_cast<Eigen::Index>(f_));
  predict_.assign(f_ * f_, 0.0);
  for (std::size_t j = 0; j < f_; ++j) {
    const auto row = log_transition_row(kernel_, j, f_);
    const auto prow = transition_row(predict_kernel, j, f_);
    for (std::size_t i = 0; i < f_; ++i) {
      log_trans_[i * f_ + j] = row[i];
      trans_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = std::exp(row[i]);
      predict_[i * f_ + j] = prow[i];
    }
  }
}

void Aligner::check_point(const Point& x) const {
  if (x.size() != mean_.dim()) throw InvalidArgument("alignment: observation dimension mismatch");
  if (!x.allFinite()) throw InvalidArgument("alignment: non-finite observation");
}

AlignmentState Aligner::init(const Point& x_first) const {
  check_point(x_first);
  std::vector<double> log_joint(f_);
  const double log_prior = -std::log(static_cast<double>(f_));
  for (std::size_t i = 0; i < f_; ++i) log_joint[i] = log_prior + mean_.log_emission(x_first, i);
  return finish(std::move(log_joint), nullptr);
}

AlignmentState Aligner::update(const AlignmentState& state, const Point& x_new) const {
  if (state.size() != f_) throw InvalidArgument("alignment: state size does not match the mean");
  check_point(x_new);

  // Linear-domain product against the max-shifted prior. Rows whose sum is
  // close to underflow are redone exactly in log space.
  constexpr double kLinearFloor = 1e-250;
  const double top = *std::max_element(state.log_prob_.begin(), state.log_prob_.end());
  Eigen::VectorXd shifted(static_cast<Eigen::Index>(f_));
  for (std::size_t j = 0; j < f_; ++j) shifted(static_cast<Eigen::Index>(j)) = std::exp(state.log_prob_[j] - top);
  const Eigen::VectorXd mixed = trans_ * shifted;

  std::vector<double> log_joint(f_, kNegInf);
  for (std::size_t i = 0; i < f_; ++i) {
    const double lin = mixed(static_cast<Eigen::Index>(i));
    double log_s = kNegInf;
    if (lin >= kLinearFloor) {
      log_s = top + std::log(lin);
    } else {
      const double* col = &log_trans_[i * f_];
      double m = kNegInf;
      for (std::size_t j = 0; j < f_; ++j) m = std::max(m, col[j] + state.log_prob_[j]);
      if (m == kNegInf) continue;
      double acc = 0.0;
      for (std::size_t j = 0; j < f_; ++j) acc += std::exp(col[j] + state.log_prob_[j] - m);
      log_s = m + std::log(acc);
    }
    log_joint[i] = mean_.log_emission(x_new, i) + log_s;
  }
  return finish(std::move(log_joint), &state);
}

AlignmentState Aligner::finish(std::vector<double> log_joint, const AlignmentState* prev) const {
  AlignmentState out;
  out.steps_ = prev ? prev->steps_ + 1 : 1;
  const double prior_log_marginal = prev ? prev->log_marginal_ : 0.0;
  const double norm = log_sum_exp(log_joint);

  if (!std::isfinite(norm)) {
    // Nothing reachable: spread the smallest representable mass uniformly
    // over the states the kernel allows next.
    std::vector<bool> legal(f_, prev == nullptr);
    if (prev) {
      for (std::size_t j = 0; j < f_; ++j) {
        if (prev->log_prob_[j] == kNegInf) continue;
        for (std::size_t i = 0; i < f_; ++i) {
          if (log_trans_[i * f_ + j] != kNegInf) legal[i] = true;
        }
      }
    }
    const auto count = static_cast<double>(std::count(legal.begin(), legal.end(), true));
    for (std::size_t i = 0; i < f_; ++i) log_joint[i] = legal[i] ? -std::log(count) : kNegInf;
    out.degenerate_ = true;
    out.log_marginal_ = prior_log_marginal + std::log(std::numeric_limits<double>::denorm_min());
  } else {
    for (double& v : log_joint) v -= norm;
    out.log_marginal_ = prior_log_marginal + norm;
  }

  out.prob_.resize(f_);
  for (std::size_t i = 0; i < f_; ++i) out.prob_[i] = std::exp(log_joint[i]);
  out.log_prob_ = std::move(log_joint);
  return out;
}

std::vector<double> Aligner::predict(std::span<const double> posterior) const {
  if (posterior.size() != f_) throw InvalidArgument("predict: posterior size does not match the mean");
  std::vector<double> out(f_, 0.0);
  for (std::size_t i = 0; i < f_; ++i) {
    const double* col = &predict_[i * f_];
    double s = 0.0;
    for (std::size_t j = 0; j <= i; ++j) s += col[j] * posterior[j];
    out[i] = s;
  }
  return out;
}

AlignmentState init_alignment(const MeanTrajectory& mean, const TransitionKernel& kernel, const Point& x_first) {
  return Aligner(mean, kernel).init(x_first);
}

AlignmentState forward_update(const AlignmentState& state, const Point& x_new, const MeanTrajectory& mean,
                              const TransitionKernel& kernel) {
  return Aligner(mean, kernel).update(state, x_new);
}

std::vector<double> predict_next(std::span<const double> posterior, const TransitionKernel& predict_kernel) {
  TransitionKernel k = predict_kernel;
  k.family = KernelFamily::gradient_predict;
  const auto f = posterior.size();
  std::vector<double> out(f, 0.0);
  for (std::size_t j = 0; j < f; ++j) {
    if (posterior[j] == 0.0) continue;
    const auto row = transition_row(k, j, f);
    for (std::size_t i = j; i < f; ++i) out[i] += row[i] * posterior[j];
  }
  return out;
}

}  // namespace calm::align
