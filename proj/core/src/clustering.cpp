#include "calm/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <numeric>
#include <random>

#include "calm/errors.hpp"

namespace calm {
namespace {

using Matrix = std::vector<std::vector<double>>;

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) {
    m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
  }
  return m;
}

// dist[n][c] = dtwd(demo n, mean c).
Matrix distances(std::span<const Trajectory> demos, const std::vector<std::vector<Point>>& means, bool parallel) {
  auto row = [&](std::size_t n) {
    std::vector<double> r(means.size());
    for (std::size_t c = 0; c < means.size(); ++c) r[c] = dtwd(demos[n].states(), means[c]);
    return r;
  };
  Matrix out(demos.size());
  if (parallel && demos.size() > 1) {
    std::vector<std::future<std::vector<double>>> jobs;
    jobs.reserve(demos.size());
    for (std::size_t n = 0; n < demos.size(); ++n) jobs.push_back(std::async(std::launch::async, row, n));
    for (std::size_t n = 0; n < demos.size(); ++n) out[n] = jobs[n].get();
  } else {
    for (std::size_t n = 0; n < demos.size(); ++n) out[n] = row(n);
  }
  return out;
}

Matrix softmax_rows(const Matrix& dist, double temperature) {
  Matrix r(dist.size());
  for (std::size_t n = 0; n < dist.size(); ++n) {
    const double best = *std::min_element(dist[n].begin(), dist[n].end());
    r[n].resize(dist[n].size());
    double total = 0.0;
    for (std::size_t c = 0; c < dist[n].size(); ++c) {
      r[n][c] = std::exp(-(dist[n][c] - best) / temperature);
      total += r[n][c];
    }
    for (double& v : r[n]) v /= total;
  }
  return r;
}

double objective(const Matrix& r, const Matrix& dist) {
  double total = 0.0;
  for (std::size_t n = 0; n < r.size(); ++n) {
    for (std::size_t c = 0; c < r[n].size(); ++c) total += r[n][c] * dist[n][c];
  }
  return total;
}

std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::distance(v.begin(), std::max_element(v.begin(), v.end())));
}

std::vector<double> column(const Matrix& r, std::size_t c) {
  std::vector<double> col(r.size());
  for (std::size_t n = 0; n < r.size(); ++n) col[n] = r[n][c];
  return col;
}

struct EStep {
  Matrix dist;
  Matrix resp;
  double objective = 0.0;
};

class Fitter {
 public:
  Fitter(const Dataset& ds, const ClusterConfig& cfg) : ds_(ds), cfg_(cfg) {
    validate(ds_);
    std::vector<double> lengths;
    for (const auto& d : ds_.demos) lengths.push_back(static_cast<double>(d.size()));
    states_ = cfg_.states_per_mean.value_or(static_cast<std::size_t>(std::llround(median(lengths))));
    if (states_ < 2) throw InvalidArgument("fit: states_per_mean must be >= 2");

    const auto n = ds_.demos.size();
    pairwise_.assign(n, std::vector<double>(n, 0.0));
    std::vector<double> upper;
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t b = a + 1; b < n; ++b) {
        pairwise_[a][b] = pairwise_[b][a] = dtwd(ds_.demos[a], ds_.demos[b]);
        upper.push_back(pairwise_[a][b]);
      }
    }
    if (cfg_.temperature) {
      if (!(*cfg_.temperature > 0.0)) throw InvalidArgument("fit: temperature must be > 0");
      temperature_ = *cfg_.temperature;
    } else {
      const double med = median(upper);
      temperature_ = med > 0.0 ? med / cfg_.temperature_divisor : 1.0;
    }
  }

  ClusterModel run(std::size_t k) const {
    const auto n = ds_.demos.size();
    if (k == 0 || k > n) {
      throw InvalidArgument("fit: k must be in [1, " + std::to_string(n) + "], got " + std::to_string(k));
    }
    FitMeta meta;
    meta.k = k;
    meta.temperature = temperature_;
    meta.states_per_mean = states_;
    meta.seed = cfg_.seed;

    auto means = seed_means(k);
    EStep e = e_step(means, meta);
    std::vector<double> trace{e.objective};
    meta.stop_reason = "max_iters";
    for (std::size_t it = 1; it <= cfg_.max_iters; ++it) {
      auto candidate = m_step(means, e.resp);
      EStep next = e_step(candidate, meta);
      if (next.objective > e.objective) {
        meta.stop_reason = "objective_increase_rejected";
        break;
      }
      const double gain = e.objective - next.objective;
      const double prev = e.objective;
      means = std::move(candidate);
      e = std::move(next);
      trace.push_back(e.objective);
      meta.iterations = it;
      if (gain <= cfg_.tol * prev) {
        meta.stop_reason = "converged";
        break;
      }
    }

    ClusterModel model;
    for (std::size_t c = 0; c < k; ++c) {
      // Hard members only: a far demo with a tiny soft weight would still
      // dominate the squared residual.
      auto w = column(e.resp, c);
      std::vector<double> hard(w.size(), 0.0);
      for (std::size_t n = 0; n < w.size(); ++n) hard[n] = argmax(e.resp[n]) == c ? 1.0 : 0.0;
      if (std::accumulate(hard.begin(), hard.end(), 0.0) > 0.0) w = std::move(hard);
      auto cov = estimate_emission_cov(ds_.demos, w, means[c], cfg_);
      model.means.emplace_back(means[c], ds_.dt(), std::move(cov));
    }
    model.responsibilities = std::move(e.resp);
    model.objective_trace = std::move(trace);
    model.meta = std::move(meta);
    return model;
  }

  const std::vector<std::vector<double>>& pairwise() const { return pairwise_; }

 private:
  std::vector<Point> demo_as_mean(std::size_t n) const { return resample_count(ds_.demos[n], states_).states(); }

  // Farthest-point seeding in DTW distance from a seed-chosen first demo.
  std::vector<std::vector<Point>> seed_means(std::size_t k) const {
    const auto n = ds_.demos.size();
    std::mt19937_64 rng(cfg_.seed);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::vector<std::size_t> chosen{pick(rng)};
    std::vector<double> nearest(n);
    for (std::size_t i = 0; i < n; ++i) nearest[i] = pairwise_[i][chosen[0]];
    while (chosen.size() < k) {
      std::size_t best = 0;
      double best_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (std::find(chosen.begin(), chosen.end(), i) != chosen.end()) continue;
        if (nearest[i] > best_d) {
          best_d = nearest[i];
          best = i;
        }
      }
      chosen.push_back(best);
      for (std::size_t i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], pairwise_[i][best]);
    }
    std::vector<std::vector<Point>> means;
    for (auto idx : chosen) means.push_back(demo_as_mean(idx));
    return means;
  }

  EStep e_step(std::vector<std::vector<Point>>& means, FitMeta& meta) const {
    EStep e;
    for (std::size_t attempt = 0; attempt <= means.size(); ++attempt) {
      e.dist = distances(ds_.demos, means, cfg_.parallel);
      e.resp = softmax_rows(e.dist, temperature_);
      e.objective = objective(e.resp, e.dist);
      if (attempt == means.size()) break;

      std::vector<std::size_t> assign(e.resp.size());
      std::vector<std::size_t> count(means.size(), 0);
      for (std::size_t i = 0; i < e.resp.size(); ++i) ++count[assign[i] = argmax(e.resp[i])];
      const auto empty = std::find(count.begin(), count.end(), 0u);
      if (empty == count.end()) break;

      // Re-seed the empty cluster from the worst-fit demo of a shared cluster.
      std::size_t worst = e.resp.size();
      double worst_d = -1.0;
      for (std::size_t i = 0; i < e.resp.size(); ++i) {
        if (count[assign[i]] < 2) continue;
        if (e.dist[i][assign[i]] > worst_d) {
          worst_d = e.dist[i][assign[i]];
          worst = i;
        }
      }
      if (worst == e.resp.size()) break;
      const auto c = static_cast<std::size_t>(std::distance(count.begin(), empty));
      means[c] = demo_as_mean(worst);
      meta.reseeded.push_back(c);
    }
    return e;
  }

  std::vector<std::vector<Point>> m_step(const std::vector<std::vector<Point>>& means, const Matrix& resp) const {
    std::vector<std::vector<Point>> out;
    const auto d = ds_.dim();
    for (std::size_t c = 0; c < means.size(); ++c) {
      const auto w = column(resp, c);
      if (std::accumulate(w.begin(), w.end(), 0.0) <= 0.0) {
        out.push_back(means[c]);
        continue;
      }
      MeanTrajectory current(means[c], ds_.dt(), Eigen::MatrixXd::Identity(d, d));
      out.push_back(barycenter_update(ds_.demos, w, current).states());
    }
    return out;
  }

  const Dataset& ds_;
  const ClusterConfig& cfg_;
  std::size_t states_ = 0;
  double temperature_ = 1.0;
  std::vector<std::vector<double>> pairwise_;
};

}  // namespace

void validate(const ClusterModel& model) {
  if (model.means.empty()) throw InvalidArgument("model has no clusters");
  const auto d = model.means.front().dim();
  for (const auto& m : model.means) {
    if (m.dim() != d) throw InvalidArgument("model clusters differ in dimension");
  }
}

double weighted_dtw_cost(std::span<const Trajectory> demos, std::span<const double> weights,
                         std::span<const Point> mean_states) {
  double total = 0.0;
  for (std::size_t m = 0; m < demos.size(); ++m) {
    if (weights[m] > 0.0) total += weights[m] * dtwd(demos[m].states(), mean_states);
  }
  return total;
}

MeanTrajectory barycenter_update(std::span<const Trajectory> members, std::span<const double> weights,
                                 const MeanTrajectory& current_mean) {
  if (members.size() != weights.size()) throw InvalidArgument("barycenter_update: weights/members size mismatch");
  const auto& mean = current_mean.states();
  const auto f = mean.size();
  const auto d = current_mean.dim();
  std::vector<Point> sum(f, Point::Zero(d));
  std::vector<double> mass(f, 0.0);
  double old_cost = 0.0;
  for (std::size_t m = 0; m < members.size(); ++m) {
    if (!(weights[m] > 0.0)) continue;
    if (members[m].dim() != d) throw InvalidArgument("barycenter_update: dimension mismatch");
    auto [path, cost] = dtw_path(members[m].states(), mean);
    old_cost += weights[m] * cost;
    for (auto [t, i] : path) {
      sum[i] += weights[m] * members[m][t];
      mass[i] += weights[m];
    }
  }
  std::vector<Point> updated(f);
  for (std::size_t i = 0; i < f; ++i) updated[i] = mass[i] > 0.0 ? Point(sum[i] / mass[i]) : mean[i];

  if (weighted_dtw_cost(members, weights, updated) > old_cost) return current_mean;
  return MeanTrajectory(std::move(updated), current_mean.dt(), current_mean.emission_cov());
}

Eigen::MatrixXd estimate_emission_cov(std::span<const Trajectory> members, std::span<const double> weights,
                                      std::span<const Point> mean_states, const ClusterConfig& config) {
  if (mean_states.size() < 2) throw InvalidArgument("estimate_emission_cov: mean needs >= 2 states");
  const auto d = mean_states.front().size();
  double residual = 0.0;
  double mass = 0.0;
  for (std::size_t m = 0; m < members.size(); ++m) {
    if (!(weights[m] > 0.0)) continue;
    const auto [path, cost] = dtw_path(members[m].states(), mean_states);
    for (auto [t, i] : path) {
      residual += weights[m] * (members[m][t] - mean_states[i]).squaredNorm();
      mass += weights[m];
    }
  }
  const double spacing = path_length(mean_states) / static_cast<double>(mean_states.size() - 1);
  const double floor = std::max(config.var_floor, std::pow(config.var_spacing_factor * spacing, 2));
  const double var = mass > 0.0 ? std::max(residual / mass, floor) : floor;
  return var * Eigen::MatrixXd::Identity(d, d);
}

ClusterModel fit(const Dataset& dataset, std::optional<std::size_t> k, const ClusterConfig& config) {
  Fitter fitter(dataset, config);
  if (k) return fitter.run(*k);

  const auto k_max = std::max<std::size_t>(1, std::min(config.k_max, dataset.demos.size()));
  std::vector<ClusterModel> candidates;
  std::vector<double> finals;
  for (std::size_t kk = 1; kk <= k_max; ++kk) {
    candidates.push_back(fitter.run(kk));
    finals.push_back(candidates.back().objective_trace.back());
  }
  std::size_t chosen = k_max;
  for (std::size_t kk = 1; kk < k_max; ++kk) {
    if (finals[kk - 1] - finals[kk] < config.elbow_ratio * finals[0]) {
      chosen = kk;
      break;
    }
  }
  ClusterModel model = std::move(candidates[chosen - 1]);
  model.meta.auto_k = true;
  model.meta.elbow_objectives = finals;
  return model;
}

}  // namespace calm
