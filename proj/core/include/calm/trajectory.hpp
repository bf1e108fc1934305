#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace calm {

/// A state in R^d.
using Point = Eigen::VectorXd;

/// Ordered states sampled at a fixed interval. Immutable after construction.
///
/// Invariants: at least two states, one shared dimension, finite coordinates,
/// and dt > 0. The constructor throws calm::InvalidArgument otherwise.
class Trajectory {
 public:
  Trajectory(std::vector<Point> states, double dt);

  const std::vector<Point>& states() const noexcept { return states_; }
  const Point& operator[](std::size_t i) const { return states_[i]; }
  const Point& front() const { return states_.front(); }
  const Point& back() const { return states_.back(); }
  std::size_t size() const noexcept { return states_.size(); }
  Eigen::Index dim() const { return states_.front().size(); }
  double dt() const noexcept { return dt_; }
  double duration() const noexcept { return dt_ * static_cast<double>(states_.size() - 1); }

  friend bool operator==(const Trajectory& a, const Trajectory& b);

 private:
  std::vector<Point> states_;
  double dt_;
};

/// Representative path of one cluster: states x^m, the interval between them,
/// per-state speeds and the emission covariance shared by all states.
///
/// Speeds are derived from the states (forward differences over dt, the last
/// entry repeating its predecessor). The covariance must be symmetric
/// positive-definite; its inverse and log-normalizer are cached so the
/// per-state Gaussian can be evaluated cheaply in log space.
class MeanTrajectory {
 public:
  MeanTrajectory(std::vector<Point> states, double dt, Eigen::MatrixXd emission_cov);

  const std::vector<Point>& states() const noexcept { return states_; }
  const Point& operator[](std::size_t i) const { return states_[i]; }
  std::size_t size() const noexcept { return states_.size(); }
  Eigen::Index dim() const { return states_.front().size(); }
  double dt() const noexcept { return dt_; }
  const std::vector<double>& speeds() const noexcept { return speeds_; }
  const Eigen::MatrixXd& emission_cov() const noexcept { return cov_; }
  const Eigen::MatrixXd& cov_inverse() const noexcept { return cov_inv_; }

  /// log N(x | x^m_i, Sigma_m). Index and dimension are not range-checked.
  double log_emission(const Point& x, std::size_t i) const;

  /// Average distance between consecutive states.
  double mean_spacing() const noexcept { return mean_spacing_; }

  /// Index of the state closest to x (lowest index on ties).
  std::size_t nearest_state(const Point& x) const;

  friend bool operator==(const MeanTrajectory& a, const MeanTrajectory& b);

 private:
  std::vector<Point> states_;
  double dt_;
  std::vector<double> speeds_;
  Eigen::MatrixXd cov_;
  Eigen::MatrixXd cov_inv_;
  double log_norm_ = 0.0;
  double mean_spacing_ = 0.0;
};

/// True when every eigenvalue of the symmetric matrix is strictly positive.
bool is_symmetric_positive_definite(const Eigen::MatrixXd& m);

/// Forward differences ||x_{i+1} - x_i|| / dt; the final entry repeats the
/// previous one. Throws InvalidArgument on fewer than two states or dt <= 0.
std::vector<double> estimate_speeds(std::span<const Point> states, double dt);

/// Linear interpolation at t = k * dt_target. The output has
/// round(duration / dt_target) + 1 states; the last one is the input's last
/// state, so when the duration is not a multiple of dt_target the final
/// interval absorbs the remainder.
Trajectory resample_uniform(const Trajectory& traj, double dt_target);

/// Linear interpolation onto `count` evenly spaced times spanning the input.
/// The result's dt is duration / (count - 1).
Trajectory resample_count(const Trajectory& traj, std::size_t count);

/// Sum of segment lengths.
double path_length(std::span<const Point> states);

/// Dynamic time warping distance: Euclidean local cost, steps right/down/
/// diagonal with unit weights, boundary-matched at both ends. Returns the raw
/// accumulated cost (not normalized by path length).
double dtwd(std::span<const Point> a, std::span<const Point> b);
double dtwd(const Trajectory& a, const Trajectory& b);

using WarpingPath = std::vector<std::pair<std::size_t, std::size_t>>;

/// Optimal warping path of dtwd() from (0, 0) to (n-1, m-1) together with its
/// cost. Ties prefer the diagonal step, then the step that advances `a`.
std::pair<WarpingPath, double> dtw_path(std::span<const Point> a, std::span<const Point> b);

}  // namespace calm
