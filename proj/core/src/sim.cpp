#include "calm/sim.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <map>
#include <numbers>

#include "calm/errors.hpp"

namespace calm::sim {
namespace {

double phase_of(std::span<const double> posterior) {
  double e = 0.0;
  for (std::size_t i = 0; i < posterior.size(); ++i) e += static_cast<double>(i) * posterior[i];
  return posterior.size() > 1 ? e / static_cast<double>(posterior.size() - 1) : 0.0;
}

void apply(const PerturbationEvent& ev, Point& position) {
  if (ev.vector.size() != position.size()) {
    throw DimensionError("vector", "perturbation at tick " + std::to_string(ev.tick) + " has dimension " +
                                       std::to_string(ev.vector.size()) + ", expected " +
                                       std::to_string(position.size()));
  }
  if (!ev.vector.allFinite()) throw InvalidArgument("perturbation vector is not finite");
  if (ev.mode == PerturbationMode::set_position) {
    position = ev.vector;
  } else {
    position += ev.vector;
  }
}

std::vector<std::optional<int>> map_clusters_to_labels(const ClusterModel& model, const Dataset& dataset) {
  std::vector<std::optional<int>> out(model.size());
  if (!dataset.has_labels()) return out;
  for (std::size_t c = 0; c < model.size(); ++c) {
    std::map<int, std::pair<double, std::size_t>> by_label;
    for (std::size_t n = 0; n < dataset.demos.size(); ++n) {
      auto& acc = by_label[*dataset.labels[n]];
      acc.first += dtwd(dataset.demos[n].states(), model.means[c].states());
      acc.second += 1;
    }
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [label, acc] : by_label) {
      const double avg = acc.first / static_cast<double>(acc.second);
      if (avg < best) {
        best = avg;
        out[c] = label;
      }
    }
  }
  return out;
}

}  // namespace

PerturbationMode parse_perturbation_mode(std::string_view name) {
  if (name == "set_position") return PerturbationMode::set_position;
  if (name == "offset") return PerturbationMode::offset;
  throw InvalidArgument("unknown perturbation mode '" + std::string(name) + "' (expected set_position|offset)");
}

std::string_view to_string(PerturbationMode mode) {
  return mode == PerturbationMode::set_position ? "set_position" : "offset";
}

Trajectory RolloutResult::trajectory() const { return Trajectory(positions, dt); }

std::size_t default_tick_budget(const ClusterModel& model) {
  std::size_t f = 0;
  for (const auto& m : model.means) f = std::max(f, m.size());
  return 10 * f;
}

bool is_converged(const ClusterModel& model, std::size_t cluster, const Point& x, std::span<const double> posterior,
                  const RolloutConfig& cfg) {
  const auto& mean = model.means.at(cluster);
  if (posterior.size() != mean.size()) return false;
  return posterior.back() >= cfg.absorb_threshold &&
         (x - mean.states().back()).norm() < cfg.convergence_factor * mean.mean_spacing();
}

RolloutResult rollout(const control::Controller& controller, const Point& start,
                      std::span<const PerturbationEvent> perturbations, const RolloutConfig& cfg) {
  const auto& model = controller.model();
  auto state = controller.initial_state(start);
  const std::size_t budget = cfg.max_ticks ? cfg.max_ticks : default_tick_budget(model);
  const bool stop_early =
      cfg.stop_on_convergence.value_or(controller.kernels().family == align::KernelFamily::stable_forward);

  std::vector<PerturbationEvent> events(perturbations.begin(), perturbations.end());
  std::stable_sort(events.begin(), events.end(), [](const auto& a, const auto& b) { return a.tick < b.tick; });
  auto next_event = events.begin();

  RolloutResult r;
  r.dt = controller.config().control_dt;
  for (std::size_t k = 0; k < budget; ++k) {
    for (; next_event != events.end() && next_event->tick == k; ++next_event) apply(*next_event, state.position);

    const auto out = controller.step(state);
    const auto& post = state.per_cluster[out.active_cluster].posterior();
    r.positions.push_back(out.observed);
    r.velocities.push_back(out.velocity);
    r.cluster_trace.push_back(out.active_cluster);
    r.kv_trace.push_back(out.kv);
    r.phase_trace.push_back(phase_of(post));
    r.mode_trace.push_back(state.per_cluster[out.active_cluster].mode());
    if (out.degenerate) r.degenerate_ticks.push_back(k);

    const bool conv = is_converged(model, out.active_cluster, out.observed, post, cfg);
    if (stop_early && conv) {
      r.converged = true;
      r.converged_tick = k;
      break;
    }
    if (!stop_early && k + cfg.settle_window >= budget && conv && !r.converged) {
      r.converged = true;
      r.converged_tick = k;
    }
  }
  if (!r.cluster_trace.empty()) r.terminal_cluster = r.cluster_trace.back();
  return r;
}

RolloutResult rollout(const ClusterModel& model, const Point& start, const control::KernelSettings& kernels,
                      const control::ControllerConfig& ccfg, std::span<const PerturbationEvent> perturbations,
                      const RolloutConfig& cfg) {
  return rollout(control::Controller(model, kernels, ccfg), start, perturbations, cfg);
}

EvaluationReport evaluate(const ClusterModel& model, const Dataset& dataset, const control::KernelSettings& kernels,
                          const control::ControllerConfig& ccfg, const RolloutConfig& cfg, bool parallel) {
  validate(dataset);
  validate(model);
  if (dataset.dim() != model.dim()) {
    throw DimensionError("demos", "dataset dimension " + std::to_string(dataset.dim()) +
                                      " does not match model dimension " + std::to_string(model.dim()));
  }
  const control::Controller controller(model, kernels, ccfg);

  EvaluationReport report;
  report.dataset = dataset.name;
  report.kernels = kernels;
  report.controller = ccfg;
  report.rollout = cfg;
  report.cluster_labels = map_clusters_to_labels(model, dataset);

  auto run = [&](std::size_t n) {
    DemoEvaluation e;
    e.demo = n;
    if (dataset.has_labels()) e.label = dataset.labels[n];
    try {
      const auto r = rollout(controller, dataset.demos[n].front(), {}, cfg);
      e.converged = r.converged;
      e.terminal_cluster = r.terminal_cluster;
      e.ticks = r.positions.size();
      e.dtwd = dtwd(r.positions, dataset.demos[n].states());
      if (e.terminal_cluster) e.predicted_label = report.cluster_labels[*e.terminal_cluster];
    } catch (const std::exception& ex) {
      e.error = ex.what();
      e.dtwd = std::numeric_limits<double>::quiet_NaN();
    }
    return e;
  };

  const auto n_demos = dataset.demos.size();
  if (parallel && n_demos > 1) {
    std::vector<std::future<DemoEvaluation>> jobs;
    for (std::size_t n = 0; n < n_demos; ++n) jobs.push_back(std::async(std::launch::async, run, n));
    for (auto& j : jobs) report.demos.push_back(j.get());
  } else {
    for (std::size_t n = 0; n < n_demos; ++n) report.demos.push_back(run(n));
  }

  double total = 0.0;
  std::size_t finite = 0;
  for (const auto& e : report.demos) {
    if (std::isfinite(e.dtwd)) {
      total += e.dtwd;
      ++finite;
    }
    if (e.label) {
      ++report.labeled;
      if (e.predicted_label == e.label) ++report.label_matches;
    }
  }
  report.mean_dtwd = finite ? total / static_cast<double>(finite) : std::numeric_limits<double>::quiet_NaN();
  return report;
}

HeadingCheck overlap_heading_check(std::span<const Point> path, const Point& center, double radius) {
  if (!(radius > 0.0)) throw InvalidArgument("overlap_heading_check: radius must be > 0");
  HeadingCheck out;
  std::vector<Point> headings;
  std::size_t k = 0;
  while (k < path.size()) {
    if ((path[k] - center).norm() >= radius) {
      ++k;
      continue;
    }
    std::size_t end = k;
    while (end + 1 < path.size() && (path[end + 1] - center).norm() < radius) ++end;
    Point h = path[end] - path[k];
    if (end == k) {
      const std::size_t lo = k > 0 ? k - 1 : k;
      const std::size_t hi = k + 1 < path.size() ? k + 1 : k;
      h = path[hi] - path[lo];
    }
    if (h.norm() > 0.0) headings.push_back(h.normalized());
    k = end + 1;
  }
  out.passes = headings.size();
  if (headings.size() < 2) {
    out.reason = "path passes the region " + std::to_string(headings.size()) + " time(s); need 2";
    return out;
  }
  double min_cos = 1.0;
  for (std::size_t a = 0; a < headings.size(); ++a) {
    for (std::size_t b = a + 1; b < headings.size(); ++b) min_cos = std::min(min_cos, headings[a].dot(headings[b]));
  }
  out.max_angle_deg = std::acos(std::clamp(min_cos, -1.0, 1.0)) * 180.0 / std::numbers::pi;
  out.pass = min_cos < 0.0;
  if (!out.pass) out.reason = "no two passes head more than 90 degrees apart";
  return out;
}

}  // namespace calm::sim
