#include "calm/controller.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "calm/errors.hpp"

namespace calm::control {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_inputs(const Point& x, std::span<const double> pred, const MeanTrajectory& mean) {
  if (x.size() != mean.dim()) throw InvalidArgument("controller: point dimension does not match the mean");
  if (pred.size() != mean.size()) throw InvalidArgument("controller: prediction length does not match the mean");
}

// log c_i = log N(x | x^m_i) + log pred[i]; -inf where pred is zero.
std::vector<double> log_weights(const Point& x, std::span<const double> pred, const MeanTrajectory& mean) {
  std::vector<double> lc(pred.size(), kNegInf);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] > 0.0) lc[i] = mean.log_emission(x, i) + std::log(pred[i]);
  }
  return lc;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

ControllerConfig ControllerConfig::defaults_for(const ClusterModel& model) {
  validate(model);
  double spacing = 0.0;
  std::vector<double> speeds;
  for (const auto& m : model.means) {
    spacing += m.mean_spacing();
    speeds.insert(speeds.end(), m.speeds().begin(), m.speeds().end());
  }
  spacing /= static_cast<double>(model.size());
  ControllerConfig cfg;
  cfg.control_dt = model.means.front().dt();
  if (spacing > 0.0) cfg.blend_sigma = (2.0 * spacing) * (2.0 * spacing);
  const double med = median(std::move(speeds));
  if (med > 0.0) cfg.kv_perturbed = 2.0 * med;
  return cfg;
}

void validate(const ControllerConfig& cfg) {
  auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
  if (!positive(cfg.kv_perturbed)) throw InvalidArgument("controller: kv_perturbed must be > 0");
  if (!positive(cfg.blend_sigma)) throw InvalidArgument("controller: blend_sigma must be > 0");
  if (!positive(cfg.control_dt)) throw InvalidArgument("controller: control_dt must be > 0");
  if (!positive(cfg.grad_floor)) throw InvalidArgument("controller: grad_floor must be > 0");
  if (!(cfg.hysteresis >= 0.0) || !std::isfinite(cfg.hysteresis)) {
    throw InvalidArgument("controller: hysteresis must be >= 0");
  }
}

double g_value(const Point& x, std::span<const double> pred, const MeanTrajectory& mean) {
  check_inputs(x, pred, mean);
  double g = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] != 0.0) g += std::exp(mean.log_emission(x, i)) * pred[i];
  }
  return g;
}

Point g_gradient(const Point& x, std::span<const double> pred, const MeanTrajectory& mean) {
  check_inputs(x, pred, mean);
  Point acc = Point::Zero(x.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == 0.0) continue;
    acc += (std::exp(mean.log_emission(x, i)) * pred[i]) * (mean[i] - x);
  }
  return mean.cov_inverse() * acc;
}

std::pair<Point, double> scaled_gradient(const Point& x, std::span<const double> pred, const MeanTrajectory& mean) {
  check_inputs(x, pred, mean);
  const auto lc = log_weights(x, pred, mean);
  const double top = *std::max_element(lc.begin(), lc.end());
  Point acc = Point::Zero(x.size());
  if (top == kNegInf) return {acc, kNegInf};
  for (std::size_t i = 0; i < lc.size(); ++i) {
    if (lc[i] == kNegInf) continue;
    acc += std::exp(lc[i] - top) * (mean[i] - x);
  }
  return {mean.cov_inverse() * acc, top};
}

double aligned_speed(const MeanTrajectory& mean, std::span<const double> posterior) {
  if (posterior.size() != mean.size()) throw InvalidArgument("velocity_gain: posterior length does not match the mean");
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < posterior.size(); ++i) {
    num += posterior[i] * mean.speeds()[i];
    den += posterior[i];
  }
  return den > 0.0 ? num / den : 0.0;
}

double velocity_gain(const Point& x, const MeanTrajectory& mean, std::span<const double> posterior,
                     const ControllerConfig& cfg) {
  if (x.size() != mean.dim()) throw InvalidArgument("velocity_gain: point dimension does not match the mean");
  const double kva = aligned_speed(mean, posterior);
  const double w = align::rbf(x, mean[mean.nearest_state(x)], cfg.blend_sigma);
  return w * kva + (1.0 - w) * cfg.kv_perturbed;
}

std::size_t select_cluster(std::span<const align::AlignmentState> per_cluster) {
  if (per_cluster.empty()) throw InvalidArgument("select_cluster: no clusters");
  std::size_t best = 0;
  for (std::size_t c = 1; c < per_cluster.size(); ++c) {
    if (per_cluster[c].log_marginal() > per_cluster[best].log_marginal()) best = c;
  }
  return best;
}

Point attractor(std::span<const double> pred, const MeanTrajectory& mean, const Point& x) {
  check_inputs(x, pred, mean);
  const auto lc = log_weights(x, pred, mean);
  const double top = *std::max_element(lc.begin(), lc.end());
  if (top == kNegInf || !std::isfinite(top)) throw DegeneratePoint("attractor: every mixture weight is zero");
  Point num = Point::Zero(x.size());
  double den = 0.0;
  for (std::size_t i = 0; i < lc.size(); ++i) {
    if (lc[i] == kNegInf) continue;
    const double c = std::exp(lc[i] - top);
    num += c * mean[i];
    den += c;
  }
  return num / den;
}

Controller::Controller(ClusterModel model, const KernelSettings& kernels, const ControllerConfig& cfg)
    : model_(std::move(model)), kernels_(kernels), cfg_(cfg) {
  validate(model_);
  validate(cfg_);
  aligners_.reserve(model_.size());
  for (const auto& mean : model_.means) {
    auto kernel = align::make_kernel(kernels_.family, cfg_.control_dt / mean.dt(), kernels_.sigma, kernels_.epsilon);
    kernel.reading = kernels_.reading;
    aligners_.emplace_back(mean, kernel);
  }
}

ControllerState Controller::initial_state(const Point& start) const {
  if (start.size() != model_.dim()) throw InvalidArgument("controller: start dimension does not match the model");
  if (!start.allFinite()) throw InvalidArgument("controller: start is not finite");
  ControllerState s;
  s.position = start;
  return s;
}

StepOutput Controller::step(ControllerState& state) const {
  if (state.position.size() != model_.dim()) throw InvalidArgument("controller: position dimension mismatch");
  if (!state.position.allFinite()) throw InvalidArgument("controller: position is not finite");

  StepOutput out;
  out.observed = state.position;
  state.history.push_back(state.position);

  const bool first = state.per_cluster.empty();
  if (first) {
    state.per_cluster.reserve(aligners_.size());
    for (const auto& a : aligners_) state.per_cluster.push_back(a.init(state.position));
  } else {
    for (std::size_t c = 0; c < aligners_.size(); ++c) {
      state.per_cluster[c] = aligners_[c].update(state.per_cluster[c], state.position);
    }
  }
  for (const auto& s : state.per_cluster) out.degenerate = out.degenerate || s.degenerate();

  const std::size_t best = select_cluster(state.per_cluster);
  if (first || cfg_.hysteresis == 0.0 ||
      state.per_cluster[best].log_marginal() - state.per_cluster[state.active_cluster].log_marginal() >
          cfg_.hysteresis) {
    state.active_cluster = best;
  }
  const std::size_t c = state.active_cluster;
  const auto& mean = model_.means[c];
  const auto& posterior = state.per_cluster[c].posterior();

  out.active_cluster = c;
  out.pred = aligners_[c].predict(posterior);
  out.kv = velocity_gain(state.position, mean, posterior, cfg_);

  const auto [grad, log_scale] = scaled_gradient(state.position, out.pred, mean);
  const double norm = grad.norm();
  if (!(norm >= cfg_.grad_floor) || !std::isfinite(norm)) {
    out.below_floor = true;
    out.velocity = Point::Zero(state.position.size());
  } else {
    out.velocity = (out.kv / norm) * grad;
  }

  state.position = state.position + cfg_.control_dt * out.velocity;
  ++state.tick;
  return out;
}

std::pair<ControllerState, StepOutput> Controller::step(const ControllerState& state) const {
  ControllerState next = state;
  StepOutput out = step(next);
  return {std::move(next), std::move(out)};
}

}  // namespace calm::control
