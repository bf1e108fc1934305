#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "calm/clustering.hpp"
#include "calm/controller.hpp"
#include "calm/dataset.hpp"

namespace calm::sim {

enum class PerturbationMode { set_position, offset };

PerturbationMode parse_perturbation_mode(std::string_view name);
std::string_view to_string(PerturbationMode mode);

/// Applied at `tick` before that tick's alignment update, so the jump is
/// observed exactly once.
struct PerturbationEvent {
  std::size_t tick = 0;
  PerturbationMode mode = PerturbationMode::set_position;
  Point vector;

  friend bool operator==(const PerturbationEvent&, const PerturbationEvent&) = default;
};

struct RolloutConfig {
  /// 0 means 10 * the longest mean.
  std::size_t max_ticks = 0;
  /// Converged when within this many mean spacings of the active cluster's
  /// final state...
  double convergence_factor = 0.5;
  /// ...and that state holds at least this much posterior mass.
  double absorb_threshold = 0.999;
  /// Stop at the first converged tick. Default: only for stable_forward;
  /// other kernels run the whole budget and are judged on its last
  /// `settle_window` ticks.
  std::optional<bool> stop_on_convergence;
  /// The normalized command circles its attractor in a two-tick cycle of
  /// length kv * control_dt, so a single final tick can land on either side
  /// of the tolerance.
  std::size_t settle_window = 2;
};

struct RolloutResult {
  /// Observed position per tick.
  std::vector<Point> positions;
  std::vector<Point> velocities;
  double dt = 0.0;
  std::vector<std::size_t> cluster_trace;
  std::vector<double> kv_trace;
  /// Posterior-mean index of the active cluster divided by F - 1.
  std::vector<double> phase_trace;
  /// Posterior mode of the active cluster.
  std::vector<std::size_t> mode_trace;
  /// Ticks on which some alignment update was floored.
  std::vector<std::size_t> degenerate_ticks;
  bool converged = false;
  std::optional<std::size_t> terminal_cluster;
  std::optional<std::size_t> converged_tick;

  /// Positions as a trajectory at dt. Needs at least two ticks.
  Trajectory trajectory() const;
};

/// Tick budget used when RolloutConfig::max_ticks is 0.
std::size_t default_tick_budget(const ClusterModel& model);

/// Whether `x` with the given alignment counts as converged on `cluster`.
bool is_converged(const ClusterModel& model, std::size_t cluster, const Point& x,
                  std::span<const double> posterior, const RolloutConfig& cfg);

RolloutResult rollout(const control::Controller& controller, const Point& start,
                      std::span<const PerturbationEvent> perturbations = {}, const RolloutConfig& cfg = {});

RolloutResult rollout(const ClusterModel& model, const Point& start, const control::KernelSettings& kernels,
                      const control::ControllerConfig& ccfg, std::span<const PerturbationEvent> perturbations = {},
                      const RolloutConfig& cfg = {});

struct DemoEvaluation {
  std::size_t demo = 0;
  double dtwd = 0.0;
  bool converged = false;
  std::optional<std::size_t> terminal_cluster;
  std::optional<int> label;
  /// Label that terminal_cluster maps to.
  std::optional<int> predicted_label;
  std::size_t ticks = 0;
  std::string error;
};

struct EvaluationReport {
  std::string dataset;
  std::vector<DemoEvaluation> demos;
  double mean_dtwd = 0.0;
  std::size_t labeled = 0;
  std::size_t label_matches = 0;
  /// cluster index -> label, by smallest mean DTW between the cluster's mean
  /// and that label's demos.
  std::vector<std::optional<int>> cluster_labels;
  control::KernelSettings kernels;
  control::ControllerConfig controller;
  RolloutConfig rollout;
};

/// Rolls out from every demo's first state and scores the rollout against
/// the demo by DTW. A failing demo records its error and the batch goes on.
EvaluationReport evaluate(const ClusterModel& model, const Dataset& dataset, const control::KernelSettings& kernels,
                          const control::ControllerConfig& ccfg, const RolloutConfig& cfg = {}, bool parallel = true);

struct HeadingCheck {
  bool pass = false;
  std::size_t passes = 0;
  /// Largest angle between two passes, degrees.
  double max_angle_deg = 0.0;
  std::string reason;
};

/// Splits the path into passes (maximal runs of samples inside the ball)
/// and passes when two of them head more than 90 degrees apart.
HeadingCheck overlap_heading_check(std::span<const Point> path, const Point& center, double radius);

}  // namespace calm::sim
