#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "calm/clustering.hpp"
#include "calm/controller.hpp"
#include "calm/sim.hpp"

// Live rollout service. `Session` is the whole control state and is driven
// one tick at a time; `Server` wraps it with a WebSocket/HTTP front end and a
// fixed-rate control loop.

namespace calm::service {

enum class CommandKind { start, pause, reset, set_position, drag_offset, set_kernel, set_start };

std::string_view to_string(CommandKind kind);

struct Command {
  CommandKind kind = CommandKind::start;
  /// set_position, drag_offset and set_start.
  std::optional<Point> point;
  /// set_kernel.
  std::optional<align::KernelFamily> kernel;
};

/// `{"kind": ..., "payload": ...}`. Throws SchemaError for malformed JSON or
/// unknown kinds and DimensionError when a point payload has the wrong size.
Command parse_command(std::string_view text, Eigen::Index dim);

struct SessionConfig {
  control::KernelSettings kernels;
  control::ControllerConfig controller;
  Point start;
  /// Only the convergence tolerances are used.
  sim::RolloutConfig rollout;
  /// Posterior vectors longer than this are summed into this many bins and
  /// renormalized. 0 sends them whole.
  std::size_t posterior_cells = 0;
};

struct Snapshot {
  std::size_t tick = 0;
  Point position;
  Point velocity;
  double kv = 0.0;
  std::size_t active_cluster = 0;
  std::vector<std::vector<double>> posteriors;
  std::vector<double> log_marginals;
  bool converged = false;
};

std::string to_json(const Snapshot& snapshot);
std::string error_json(std::string_view message, std::string_view field = {});

struct LoggedCommand {
  /// Tick the command was received before.
  std::size_t tick = 0;
  Command command;
};

class Session {
 public:
  Session(ClusterModel model, SessionConfig cfg);

  /// start, pause, reset, set_kernel and set_start act immediately (the last
  /// two also reset). Position commands wait for the next tick; the latest
  /// one wins.
  void apply(const Command& command);

  /// One controller step when running; nothing when paused.
  std::optional<Snapshot> tick();

  bool running() const noexcept { return running_; }
  std::size_t tick_count() const noexcept { return state_.tick; }
  const Point& start() const noexcept { return cfg_.start; }
  const control::KernelSettings& kernels() const noexcept { return cfg_.kernels; }
  const control::Controller& controller() const noexcept { return *controller_; }
  const ClusterModel& model() const noexcept { return controller_->model(); }

  /// Coalesced perturbations since the last reset, in the form sim::rollout
  /// takes, and the positions observed on each tick.
  const std::vector<sim::PerturbationEvent>& events() const noexcept { return events_; }
  const std::vector<Point>& positions() const noexcept { return state_.history; }
  /// Every command received, before coalescing.
  const std::vector<LoggedCommand>& command_log() const noexcept { return log_; }

 private:
  void reset();

  SessionConfig cfg_;
  std::shared_ptr<const control::Controller> controller_;
  control::ControllerState state_;
  std::optional<sim::PerturbationEvent> pending_;
  std::vector<sim::PerturbationEvent> events_;
  std::vector<LoggedCommand> log_;
  bool running_ = false;
};

struct ServerConfig {
  std::string address = "127.0.0.1";
  /// 0 picks a free port.
  std::uint16_t port = 8080;
  int tick_ms = 50;
};

/// WebSocket at any path, GET /model and GET /health. A single session is
/// shared by every connected client.
class Server {
 public:
  Server(ClusterModel model, SessionConfig session, ServerConfig cfg);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds and starts the network and control threads.
  void start();
  void stop();
  /// Blocks until stop() is called from another thread or a signal handler.
  void wait();
  std::uint16_t port() const;

  /// Copy of the session taken between ticks.
  Session session() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace calm::service
