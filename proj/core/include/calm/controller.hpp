#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "calm/alignment.hpp"
#include "calm/clustering.hpp"
#include "calm/trajectory.hpp"

namespace calm::control {

struct ControllerConfig {
  /// k_v^p: speed used far from every mean (units/second).
  double kv_perturbed = 10.0;
  /// Width of the blend between the aligned and the perturbed gain
  /// (squared-distance units).
  double blend_sigma = 0.25;
  /// delta^r, seconds per control tick.
  double control_dt = 0.05;
  /// Commands are zero when the gradient, rescaled by the largest mixture
  /// weight, falls below this.
  double grad_floor = 1e-10;
  /// Log-marginal margin another cluster must beat the active one by before
  /// the controller switches. 0 re-evaluates the argmax every tick.
  double hysteresis = 0.0;

  /// Scale-aware defaults: blend_sigma = (2 * spacing)^2, kv_perturbed =
  /// twice the median mean speed, control_dt = the first mean's dt.
  static ControllerConfig defaults_for(const ClusterModel& model);
};

void validate(const ControllerConfig& cfg);

/// HMM kernel used for every cluster. Delta is derived per cluster from
/// control_dt / mean.dt; sigma defaults to (2 * delta)^2.
struct KernelSettings {
  align::KernelFamily family = align::KernelFamily::stable_forward;
  std::optional<double> sigma;
  double epsilon = 1e-6;
  align::BackwardsReading reading = align::BackwardsReading::forward_plus_epsilon;
};

struct ControllerState {
  Point position;
  /// Observed positions, one per completed tick.
  std::vector<Point> history;
  /// One alignment per cluster; empty until the first tick.
  std::vector<align::AlignmentState> per_cluster;
  std::size_t active_cluster = 0;
  std::size_t tick = 0;
};

struct StepOutput {
  /// Position the tick observed (before integration).
  Point observed;
  Point velocity;
  double kv = 0.0;
  std::size_t active_cluster = 0;
  /// Next-step alignment prediction for the active cluster.
  std::vector<double> pred;
  /// True when the gradient was under grad_floor and the command is zero.
  bool below_floor = false;
  /// Some cluster's update had no reachable mass and was floored.
  bool degenerate = false;
};

/// sum_i N(x | x^m_i, Sigma_m) * pred[i].
double g_value(const Point& x, std::span<const double> pred, const MeanTrajectory& mean);

/// sum_i Sigma_m^{-1} (x^m_i - x) N(x | x^m_i, Sigma_m) pred[i].
Point g_gradient(const Point& x, std::span<const double> pred, const MeanTrajectory& mean);

/// g_gradient divided by max_i c_i, where c_i = N(x | x^m_i, Sigma_m) pred[i],
/// together with log max_i c_i. The direction is that of g_gradient but it
/// stays representable far from the mean. Returns a zero vector and -inf when
/// every c_i is zero.
std::pair<Point, double> scaled_gradient(const Point& x, std::span<const double> pred, const MeanTrajectory& mean);

/// w * k_v^a + (1 - w) * k_v^p with w = rbf(x, nearest mean state, blend_sigma)
/// and k_v^a the posterior-weighted mean speed.
double velocity_gain(const Point& x, const MeanTrajectory& mean, std::span<const double> posterior,
                     const ControllerConfig& cfg);

/// Posterior-weighted mean speed.
double aligned_speed(const MeanTrajectory& mean, std::span<const double> posterior);

/// argmax of log_marginal, lowest index on ties. Throws on an empty list.
std::size_t select_cluster(std::span<const align::AlignmentState> per_cluster);

/// sum_i c_i x^m_i / sum_i c_i with c_i = N(x | x^m_i, Sigma_m) pred[i].
/// Throws DegeneratePoint when every c_i is zero.
Point attractor(std::span<const double> pred, const MeanTrajectory& mean, const Point& x);

/// The control loop of one agent: per-cluster alignment, cluster selection,
/// normalized gradient command and explicit Euler integration.
class Controller {
 public:
  Controller(ClusterModel model, const KernelSettings& kernels, const ControllerConfig& cfg);

  ControllerState initial_state(const Point& start) const;

  /// Observes state.position, updates every alignment, commands a velocity
  /// and integrates the position by one control_dt.
  StepOutput step(ControllerState& state) const;

  std::pair<ControllerState, StepOutput> step(const ControllerState& state) const;

  const ClusterModel& model() const noexcept { return model_; }
  const ControllerConfig& config() const noexcept { return cfg_; }
  const KernelSettings& kernels() const noexcept { return kernels_; }
  const align::Aligner& aligner(std::size_t cluster) const { return aligners_.at(cluster); }
  std::size_t size() const noexcept { return aligners_.size(); }

 private:
  ClusterModel model_;
  KernelSettings kernels_;
  ControllerConfig cfg_;
  std::vector<align::Aligner> aligners_;
};

}  // namespace calm::control
