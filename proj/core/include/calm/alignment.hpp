#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "calm/trajectory.hpp"

// HMM alignment between a running agent and a mean trajectory.
//
// The hidden variable is the index of the mean state that best describes the
// agent's progress; observations are the agent's positions. Indices are
// zero-based throughout. The posterior is stored as log probabilities and
// renormalized every step. The transition sum runs as a matrix-vector product
// on the max-shifted posterior; entries that come out near underflow are
// recomputed with log-sum-exp, so far-away observations do not lose mass a
// later observation may need.

namespace calm::align {

enum class KernelFamily {
  /// phi(i, j + delta) for i >= j, 0 otherwise. Used for next-step prediction.
  gradient_predict,
  /// phi(i, j + delta) for i > j, 1 at (F-1 -> F-1), 0 otherwise. Absorbing.
  stable_forward,
  /// Forward branch plus epsilon mass on earlier states.
  backwards,
  /// phi(i, j + delta) for i > j, 1 for the wrap (F-1 -> 0), epsilon elsewhere.
  periodic,
};

/// How the backwards family's cases are read. `forward_plus_epsilon` puts
/// phi on i >= j and epsilon on i < j; `literal` puts phi on i <= j and
/// epsilon on i > j.
enum class BackwardsReading { forward_plus_epsilon, literal };

struct TransitionKernel {
  KernelFamily family = KernelFamily::stable_forward;
  /// RBF width in index units (divides the squared distance by 2 * sigma).
  double sigma = 4.0;
  /// Expected index advance per agent step: agent dt / mean dt.
  double delta = 1.0;
  /// Epsilon entries are epsilon times the largest non-epsilon entry of the row.
  double epsilon = 1e-6;
  BackwardsReading reading = BackwardsReading::forward_plus_epsilon;
};

/// Kernel with sigma defaulting to (2 * delta)^2.
TransitionKernel make_kernel(KernelFamily family, double delta, std::optional<double> sigma = std::nullopt,
                             double epsilon = 1e-6);

/// Accepts the CLI names (gradient, stable, backwards, periodic) as well as
/// the enumerator names. Throws calm::InvalidArgument otherwise.
KernelFamily parse_kernel_family(std::string_view name);
std::string_view to_string(KernelFamily family);
std::string_view cli_name(KernelFamily family);

/// exp(-|a - b|^2 / (2 sigma)).
double rbf(double a, double b, double sigma);
double rbf(const Point& a, const Point& b, double sigma);

/// N(x | x^m_i, Sigma_m). Throws InvalidArgument when i is out of range or x
/// has the wrong dimension.
double emission(const Point& x, const MeanTrajectory& mean, std::size_t i);

/// Normalized transition probabilities out of state j over F states.
std::vector<double> transition_row(const TransitionKernel& kernel, std::size_t j, std::size_t f);

/// Same row in log space (structural zeros are -inf).
std::vector<double> log_transition_row(const TransitionKernel& kernel, std::size_t j, std::size_t f);

/// Per-mean HMM state. `posterior()` is the scaled forward vector
/// P(tau_k = i, x_{1:k}) / P(x_{1:k}); `log_marginal()` is log P(x_{1:k}).
class AlignmentState {
 public:
  const std::vector<double>& posterior() const noexcept { return prob_; }
  const std::vector<double>& log_posterior() const noexcept { return log_prob_; }
  double log_marginal() const noexcept { return log_marginal_; }
  std::size_t step_count() const noexcept { return steps_; }
  std::size_t size() const noexcept { return prob_.size(); }
  /// Set when the last update had no reachable mass and was floored.
  bool degenerate() const noexcept { return degenerate_; }
  std::size_t mode() const;

 private:
  friend class Aligner;
  std::vector<double> log_prob_;
  std::vector<double> prob_;
  double log_marginal_ = 0.0;
  std::size_t steps_ = 0;
  bool degenerate_ = false;
};

/// Forward filter for one mean trajectory and one kernel. Precomputes the
/// transition matrices once; init/update/predict are then pure functions of
/// their arguments.
class Aligner {
 public:
  Aligner(const MeanTrajectory& mean, const TransitionKernel& kernel);

  /// Uniform prior over the F states times the first emission, rescaled.
  AlignmentState init(const Point& x_first) const;

  /// One forward step: new[i] = q_i(x) * sum_j theta(j -> i) * old[j],
  /// rescaled, with log of the rescale factor added to the log-marginal.
  AlignmentState update(const AlignmentState& state, const Point& x_new) const;

  /// P(tau_{k+1} = i) = sum_j theta(j -> i) P(tau_k = j) using the
  /// gradient_predict family with this aligner's sigma and delta.
  std::vector<double> predict(std::span<const double> posterior) const;

  const MeanTrajectory& mean() const noexcept { return mean_; }
  const TransitionKernel& kernel() const noexcept { return kernel_; }
  std::size_t size() const noexcept { return f_; }

 private:
  AlignmentState finish(std::vector<double> log_joint, const AlignmentState* prev) const;
  void check_point(const Point& x) const;

  MeanTrajectory mean_;
  TransitionKernel kernel_;
  std::size_t f_;
  std::vector<double> log_trans_;  // [i * F + j] = log theta(j -> i)
  Eigen::MatrixXd trans_;          // (i, j) = theta(j -> i)
  std::vector<double> predict_;    // [i * F + j] = theta_predict(j -> i)
};

/// Convenience wrappers; each builds an Aligner for the call.
AlignmentState init_alignment(const MeanTrajectory& mean, const TransitionKernel& kernel, const Point& x_first);
AlignmentState forward_update(const AlignmentState& state, const Point& x_new, const MeanTrajectory& mean,
                              const TransitionKernel& kernel);
std::vector<double> predict_next(std::span<const double> posterior, const TransitionKernel& predict_kernel);

inline const std::vector<double>& posterior(const AlignmentState& s) { return s.posterior(); }
inline double log_marginal(const AlignmentState& s) { return s.log_marginal(); }

}  // namespace calm::align
