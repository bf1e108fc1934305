#include <cmath>

#include <json.hpp>

#include "calm/errors.hpp"
#include "calm/service.hpp"

namespace calm::service {
namespace {

using nlohmann::json;

CommandKind parse_kind(const std::string& s) {
  if (s == "start") return CommandKind::start;
  if (s == "pause") return CommandKind::pause;
  if (s == "reset") return CommandKind::reset;
  if (s == "set_position") return CommandKind::set_position;
  if (s == "drag_offset") return CommandKind::drag_offset;
  if (s == "set_kernel") return CommandKind::set_kernel;
  if (s == "set_start") return CommandKind::set_start;
  throw SchemaError("kind", "unknown command kind '" + s + "'");
}

json point_json(const Point& p) {
  json a = json::array();
  for (Eigen::Index i = 0; i < p.size(); ++i) a.push_back(p(i));
  return a;
}

std::vector<double> downsample(const std::vector<double>& p, std::size_t cells) {
  if (cells == 0 || p.size() <= cells) return p;
  std::vector<double> out(cells, 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) out[i * cells / p.size()] += p[i];
  double total = 0.0;
  for (double v : out) total += v;
  if (total > 0.0) {
    for (double& v : out) v /= total;
  }
  return out;
}

}  // namespace

std::string_view to_string(CommandKind kind) {
  switch (kind) {
    case CommandKind::start: return "start";
    case CommandKind::pause: return "pause";
    case CommandKind::reset: return "reset";
    case CommandKind::set_position: return "set_position";
    case CommandKind::drag_offset: return "drag_offset";
    case CommandKind::set_kernel: return "set_kernel";
    case CommandKind::set_start: return "set_start";
  }
  return "unknown";
}

Command parse_command(std::string_view text, Eigen::Index dim) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError("$", std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw SchemaError("$", "expected an object");
  if (!j.contains("kind") || !j["kind"].is_string()) throw SchemaError("kind", "missing or not a string");
  Command c;
  c.kind = parse_kind(j["kind"].get<std::string>());

  switch (c.kind) {
    case CommandKind::set_position:
    case CommandKind::drag_offset:
    case CommandKind::set_start: {
      if (!j.contains("payload") || !j["payload"].is_array()) throw SchemaError("payload", "expected an array");
      const auto& a = j["payload"];
      if (static_cast<Eigen::Index>(a.size()) != dim) {
        throw DimensionError("payload", "has " + std::to_string(a.size()) + " coordinates, model has " +
                                            std::to_string(dim));
      }
      Point p(dim);
      for (std::size_t i = 0; i < a.size(); ++i) {
        if (!a[i].is_number()) throw SchemaError("payload[" + std::to_string(i) + "]", "expected a number");
        p(static_cast<Eigen::Index>(i)) = a[i].get<double>();
      }
      if (!p.allFinite()) throw SchemaError("payload", "coordinates must be finite");
      c.point = std::move(p);
      break;
    }
    case CommandKind::set_kernel: {
      if (!j.contains("payload") || !j["payload"].is_string()) throw SchemaError("payload", "expected a kernel name");
      try {
        c.kernel = align::parse_kernel_family(j["payload"].get<std::string>());
      } catch (const InvalidArgument& e) {
        throw SchemaError("payload", e.what());
      }
      break;
    }
    default:
      break;
  }
  return c;
}

std::string to_json(const Snapshot& s) {
  json j{{"tick", s.tick},
         {"position", point_json(s.position)},
         {"velocity", point_json(s.velocity)},
         {"kv", s.kv},
         {"active_cluster", s.active_cluster},
         {"posteriors", s.posteriors},
         {"log_marginals", s.log_marginals},
         {"converged", s.converged}};
  return j.dump();
}

std::string error_json(std::string_view message, std::string_view field) {
  json j{{"error", message}};
  if (!field.empty()) j["field"] = field;
  return j.dump();
}

Session::Session(ClusterModel model, SessionConfig cfg)
    : cfg_(std::move(cfg)),
      controller_(std::make_shared<const control::Controller>(std::move(model), cfg_.kernels, cfg_.controller)) {
  reset();
}

void Session::reset() {
  state_ = controller_->initial_state(cfg_.start);
  pending_.reset();
  events_.clear();
}

void Session::apply(const Command& command) {
  log_.push_back({state_.tick, command});
  switch (command.kind) {
    case CommandKind::start:
      running_ = true;
      break;
    case CommandKind::pause:
      running_ = false;
      break;
    case CommandKind::reset:
      reset();
      break;
    case CommandKind::set_position:
      pending_ = sim::PerturbationEvent{state_.tick, sim::PerturbationMode::set_position, *command.point};
      break;
    case CommandKind::drag_offset:
      pending_ = sim::PerturbationEvent{state_.tick, sim::PerturbationMode::offset, *command.point};
      break;
    case CommandKind::set_kernel:
      cfg_.kernels.family = *command.kernel;
      controller_ = std::make_shared<const control::Controller>(controller_->model(), cfg_.kernels, cfg_.controller);
      reset();
      break;
    case CommandKind::set_start:
      if (command.point->size() != controller_->model().dim()) {
        throw DimensionError("payload", "start dimension does not match the model");
      }
      cfg_.start = *command.point;
      reset();
      break;
  }
}

std::optional<Snapshot> Session::tick() {
  if (!running_) return std::nullopt;
  if (pending_) {
    pending_->tick = state_.tick;
    if (pending_->mode == sim::PerturbationMode::set_position) {
      state_.position = pending_->vector;
    } else {
      state_.position += pending_->vector;
    }
    events_.push_back(std::move(*pending_));
    pending_.reset();
  }

  Snapshot s;
  s.tick = state_.tick;
  const auto out = controller_->step(state_);
  s.position = out.observed;
  s.velocity = out.velocity;
  s.kv = out.kv;
  s.active_cluster = out.active_cluster;
  for (const auto& a : state_.per_cluster) {
    s.posteriors.push_back(downsample(a.posterior(), cfg_.posterior_cells));
    s.log_marginals.push_back(a.log_marginal());
  }
  s.converged = sim::is_converged(controller_->model(), out.active_cluster, out.observed,
                                  state_.per_cluster[out.active_cluster].posterior(), cfg_.rollout);
  return s;
}

}  // namespace calm::service
