#include "calm/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "calm/errors.hpp"

namespace calm {
namespace {

void check_states(std::span<const Point> states, std::size_t min_len, const char* what) {
  if (states.size() < min_len) {
    throw InvalidArgument(std::string(what) + ": need at least " + std::to_string(min_len) +
                          " states, got " + std::to_string(states.size()));
  }
  const auto d = states.front().size();
  if (d == 0) throw InvalidArgument(std::string(what) + ": states have dimension 0");
  for (const auto& s : states) {
    if (s.size() != d) throw InvalidArgument(std::string(what) + ": states differ in dimension");
    if (!s.allFinite()) throw InvalidArgument(std::string(what) + ": non-finite coordinate");
  }
}

void check_dt(double dt, const char* what) {
  if (!(dt > 0.0) || !std::isfinite(dt)) {
    throw InvalidArgument(std::string(what) + ": dt must be finite and > 0");
  }
}

Point lerp_at(const std::vector<Point>& s, double u) {
  const auto last = s.size() - 1;
  if (u <= 0.0) return s.front();
  if (u >= static_cast<double>(last)) return s.back();
  auto i = static_cast<std::size_t>(std::floor(u));
  if (i >= last) i = last - 1;
  const double f = u - static_cast<double>(i);
  return (1.0 - f) * s[i] + f * s[i + 1];
}

}  // namespace

Trajectory::Trajectory(std::vector<Point> states, double dt) : states_(std::move(states)), dt_(dt) {
  check_states(states_, 2, "Trajectory");
  check_dt(dt_, "Trajectory");
}

bool operator==(const Trajectory& a, const Trajectory& b) {
  return a.dt_ == b.dt_ && a.states_ == b.states_;
}

bool is_symmetric_positive_definite(const Eigen::MatrixXd& m) {
  if (m.rows() == 0 || m.rows() != m.cols() || !m.allFinite()) return false;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) return false;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m, Eigen::EigenvaluesOnly);
  return eig.info() == Eigen::Success && eig.eigenvalues().minCoeff() > 0.0;
}

MeanTrajectory::MeanTrajectory(std::vector<Point> states, double dt, Eigen::MatrixXd emission_cov)
    : states_(std::move(states)), dt_(dt), cov_(std::move(emission_cov)) {
  check_states(states_, 2, "MeanTrajectory");
  check_dt(dt_, "MeanTrajectory");
  const auto d = states_.front().size();
  if (cov_.rows() != d || cov_.cols() != d) {
    throw InvalidArgument("MeanTrajectory: emission_cov must be " + std::to_string(d) + "x" +
                          std::to_string(d));
  }
  if (!is_symmetric_positive_definite(cov_)) {
    throw InvalidArgument("MeanTrajectory: emission_cov is not symmetric positive-definite");
  }
  speeds_ = estimate_speeds(states_, dt_);

  Eigen::LLT<Eigen::MatrixXd> llt(cov_);
  cov_inv_ = llt.solve(Eigen::MatrixXd::Identity(d, d));
  const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  log_norm_ = 0.5 * (static_cast<double>(d) * std::log(2.0 * std::numbers::pi) + log_det);
  mean_spacing_ = path_length(states_) / static_cast<double>(states_.size() - 1);
}

double MeanTrajectory::log_emission(const Point& x, std::size_t i) const {
  const Point diff = x - states_[i];
  return -0.5 * diff.dot(cov_inv_ * diff) - log_norm_;
}

std::size_t MeanTrajectory::nearest_state(const Point& x) const {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < states_.size(); ++i) {
    const double d = (x - states_[i]).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

bool operator==(const MeanTrajectory& a, const MeanTrajectory& b) {
  return a.dt_ == b.dt_ && a.states_ == b.states_ && a.cov_ == b.cov_;
}

std::vector<double> estimate_speeds(std::span<const Point> states, double dt) {
  if (states.size() < 2) throw InvalidArgument("estimate_speeds: need at least 2 states");
  check_dt(dt, "estimate_speeds");
  std::vector<double> speeds(states.size());
  for (std::size_t i = 0; i + 1 < states.size(); ++i) {
    speeds[i] = (states[i + 1] - states[i]).norm() / dt;
  }
  speeds.back() = speeds[states.size() - 2];
  return speeds;
}

Trajectory resample_uniform(const Trajectory& traj, double dt_target) {
  check_dt(dt_target, "resample_uniform");
  const double steps = traj.duration() / dt_target;
  if (!std::isfinite(steps)) throw InvalidArgument("resample_uniform: dt_target too small");
  const auto count = std::max<std::size_t>(2, static_cast<std::size_t>(std::llround(steps)) + 1);
  const double ratio = dt_target / traj.dt();
  std::vector<Point> out;
  out.reserve(count);
  for (std::size_t k = 0; k + 1 < count; ++k) {
    out.push_back(lerp_at(traj.states(), static_cast<double>(k) * ratio));
  }
  out.push_back(traj.back());
  return Trajectory(std::move(out), dt_target);
}

Trajectory resample_count(const Trajectory& traj, std::size_t count) {
  if (count < 2) throw InvalidArgument("resample_count: count must be >= 2");
  const double last = static_cast<double>(traj.size() - 1);
  std::vector<Point> out;
  out.reserve(count);
  for (std::size_t k = 0; k + 1 < count; ++k) {
    out.push_back(lerp_at(traj.states(), last * static_cast<double>(k) / static_cast<double>(count - 1)));
  }
  out.push_back(traj.back());
  return Trajectory(std::move(out), traj.duration() / static_cast<double>(count - 1));
}

double path_length(std::span<const Point> states) {
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < states.size(); ++i) total += (states[i + 1] - states[i]).norm();
  return total;
}

double dtwd(std::span<const Point> a, std::span<const Point> b) {
  if (a.empty() || b.empty()) throw InvalidArgument("dtwd: empty sequence");
  if (a.front().size() != b.front().size()) throw InvalidArgument("dtwd: dimension mismatch");
  const auto m = b.size();
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> prev(m, inf), cur(m, inf);
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double cost = (a[i] - b[j]).norm();
      double best;
      if (i == 0 && j == 0) {
        best = 0.0;
      } else {
        best = inf;
        if (i > 0) best = std::min(best, prev[j]);
        if (j > 0) best = std::min(best, cur[j - 1]);
        if (i > 0 && j > 0) best = std::min(best, prev[j - 1]);
      }
      cur[j] = cost + best;
    }
    std::swap(prev, cur);
  }
  return prev[m - 1];
}

double dtwd(const Trajectory& a, const Trajectory& b) { return dtwd(a.states(), b.states()); }

std::pair<WarpingPath, double> dtw_path(std::span<const Point> a, std::span<const Point> b) {
  if (a.empty() || b.empty()) throw InvalidArgument("dtw_path: empty sequence");
  if (a.front().size() != b.front().size()) throw InvalidArgument("dtw_path: dimension mismatch");
  const auto n = a.size();
  const auto m = b.size();
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> acc(n * m, inf);
  auto at = [&](std::size_t i, std::size_t j) -> double& { return acc[i * m + j]; };
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double cost = (a[i] - b[j]).norm();
      double best;
      if (i == 0 && j == 0) {
        best = 0.0;
      } else {
        best = inf;
        if (i > 0 && j > 0) best = std::min(best, at(i - 1, j - 1));
        if (i > 0) best = std::min(best, at(i - 1, j));
        if (j > 0) best = std::min(best, at(i, j - 1));
      }
      at(i, j) = cost + best;
    }
  }

  WarpingPath path;
  path.reserve(n + m);
  std::size_t i = n - 1, j = m - 1;
  path.emplace_back(i, j);
  while (i > 0 || j > 0) {
    if (i == 0) {
      --j;
    } else if (j == 0) {
      --i;
    } else {
      const double diag = at(i - 1, j - 1);
      const double up = at(i - 1, j);
      const double left = at(i, j - 1);
      if (diag <= up && diag <= left) {
        --i;
        --j;
      } else if (up <= left) {
        --i;
      } else {
        --j;
      }
    }
    path.emplace_back(i, j);
  }
  std::reverse(path.begin(), path.end());
  return {std::move(path), at(n - 1, m - 1)};
}

}  // namespace calm
