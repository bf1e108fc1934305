#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "calm/dataset.hpp"
#include "calm/trajectory.hpp"

namespace calm {

/// Bookkeeping from the clustering run that produced a model.
struct FitMeta {
  std::size_t k = 0;
  bool auto_k = false;
  double temperature = 0.0;
  std::size_t iterations = 0;
  std::size_t states_per_mean = 0;
  std::uint64_t seed = 0;
  std::string stop_reason;
  /// Cluster indices whose mean was re-seeded after an empty hard assignment.
  std::vector<std::size_t> reseeded;
  /// Final objective for each candidate k when k was chosen automatically.
  std::vector<double> elbow_objectives;

  friend bool operator==(const FitMeta&, const FitMeta&) = default;
};

/// The set of mean trajectories plus the clustering that produced them.
struct ClusterModel {
  std::vector<MeanTrajectory> means;
  /// One row per training demo, one column per cluster; rows sum to 1.
  std::vector<std::vector<double>> responsibilities;
  /// Total responsibility-weighted DTW cost after each accepted iteration.
  std::vector<double> objective_trace;
  FitMeta meta;

  std::size_t size() const noexcept { return means.size(); }
  Eigen::Index dim() const { return means.front().dim(); }

  friend bool operator==(const ClusterModel&, const ClusterModel&) = default;
};

/// Throws InvalidArgument unless the model has at least one mean and all
/// means share a dimension.
void validate(const ClusterModel& model);

struct ClusterConfig {
  /// Softmax temperature of the E-step. Default: median pairwise demo DTW
  /// divided by temperature_divisor.
  std::optional<double> temperature;
  double temperature_divisor = 5.0;
  std::size_t max_iters = 50;
  /// Stop once the relative objective improvement drops below this.
  double tol = 1e-6;
  /// States per mean. Default: median demo length.
  std::optional<std::size_t> states_per_mean;
  /// Emission variance floor: max(var_floor, (var_spacing_factor * spacing)^2).
  double var_floor = 1e-6;
  double var_spacing_factor = 1.0;
  /// Picks the first farthest-point seed.
  std::uint64_t seed = 0;
  /// Upper bound on k when k is inferred.
  std::size_t k_max = 6;
  /// Elbow rule: the smallest k whose step to k+1 gains less than this
  /// fraction of the single-cluster objective.
  double elbow_ratio = 0.5;
  /// Evaluate per-demo DTW distances on worker threads.
  bool parallel = true;
};

/// DTW k-means with a soft E-step and barycenter-averaging M-step. With
/// `k` unset the cluster count is chosen by an elbow rule over
/// [1, min(k_max, demos)] (experimental).
///
/// An iteration is kept only when it does not increase the objective, so
/// objective_trace is non-increasing.
ClusterModel fit(const Dataset& dataset, std::optional<std::size_t> k, const ClusterConfig& config = {});

/// One barycenter-averaging step: align each member to the current mean by
/// DTW and move every mean state to the weighted average of the member states
/// aligned to it. F, dt and the emission covariance are kept. When the step
/// would raise the weighted DTW cost the current mean is returned unchanged.
MeanTrajectory barycenter_update(std::span<const Trajectory> members, std::span<const double> weights,
                                 const MeanTrajectory& current_mean);

/// Isotropic sigma^2 * I where sigma^2 is the weighted mean squared distance
/// between member states and their DTW-aligned mean states, floored as
/// described on ClusterConfig.
Eigen::MatrixXd estimate_emission_cov(std::span<const Trajectory> members, std::span<const double> weights,
                                      std::span<const Point> mean_states, const ClusterConfig& config = {});

/// sum_m weights[m] * dtwd(demos[m], mean).
double weighted_dtw_cost(std::span<const Trajectory> demos, std::span<const double> weights,
                         std::span<const Point> mean_states);

}  // namespace calm
