#include "calm/cli.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <thread>

#include <CLI11.hpp>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "calm/clustering.hpp"
#include "calm/controller.hpp"
#include "calm/dataset.hpp"
#include "calm/errors.hpp"
#include "calm/io.hpp"
#include "calm/sim.hpp"
#ifdef CALM_WITH_SERVICE
#include "calm/service.hpp"
#endif

namespace calm::cli {
namespace {

/// A flag value that parsed but is not acceptable.
struct FlagError : std::runtime_error {
  FlagError(std::string flag_name, const std::string& what) : std::runtime_error(what), flag(std::move(flag_name)) {}
  std::string flag;
};

std::shared_ptr<spdlog::logger> make_logger(std::ostream& err) {
  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err);
  auto log = std::make_shared<spdlog::logger>("calm", sink);
  log->set_pattern("[%l] %v");
  log->set_level(spdlog::level::warn);
  if (const char* env = std::getenv("CALM_LOG")) {
    const auto lvl = spdlog::level::from_str(env);
    // from_str maps anything unknown to off; only accept exact names.
    if (lvl != spdlog::level::off || std::string_view(env) == "off") log->set_level(lvl);
  }
  return log;
}

align::KernelFamily kernel_flag(const std::string& name) {
  try {
    return align::parse_kernel_family(name);
  } catch (const InvalidArgument& e) {
    throw FlagError("--kernel", e.what());
  }
}

Point point_flag(const std::string& flag, const std::string& text, Eigen::Index dim) {
  std::vector<double> values;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto comma = std::min(text.find(',', pos), text.size());
    std::string_view part(text.data() + pos, comma - pos);
    while (!part.empty() && part.front() == ' ') part.remove_prefix(1);
    while (!part.empty() && part.back() == ' ') part.remove_suffix(1);
    double v = 0.0;
    const auto [end, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
    if (part.empty() || ec != std::errc() || end != part.data() + part.size() || !std::isfinite(v)) {
      throw FlagError(flag, "'" + text + "' is not a comma-separated list of numbers");
    }
    values.push_back(v);
    pos = comma + 1;
  }
  if (static_cast<Eigen::Index>(values.size()) != dim) {
    throw FlagError(flag, "has " + std::to_string(values.size()) + " coordinates, model has " + std::to_string(dim));
  }
  return Eigen::Map<const Eigen::VectorXd>(values.data(), dim);
}

template <class F>
auto with_flag(const std::string& flag, F&& f) {
  try {
    return f();
  } catch (const SchemaError& e) {
    throw FlagError(flag, e.what());
  } catch (const DimensionError& e) {
    throw FlagError(flag, e.what());
  }
}

ClusterModel load_model_flag(const std::string& path) {
  return with_flag("--model", [&] { return io::load_model(path); });
}

Dataset load_dataset_flag(const std::string& path) {
  return with_flag("--input", [&] { return io::load_dataset(path); });
}

struct ControlFlags {
  std::string kernel = "stable";
  std::optional<double> sigma;
  double epsilon = 1e-6;
  std::optional<double> kv;
  std::optional<double> blend_sigma;
  double hysteresis = 0.0;
  std::size_t max_ticks = 0;

  void add(CLI::App& app) {
    app.add_option("--kernel", kernel, "gradient|stable|backwards|periodic")
        ->capture_default_str()
        ->check(CLI::Validator(
            [](const std::string& v) {
              try {
                align::parse_kernel_family(v);
                return std::string();
              } catch (const InvalidArgument& e) {
                return std::string(e.what());
              }
            },
            "KERNEL"));
    app.add_option("--sigma", sigma, "Transition kernel width (default (2*delta)^2)");
    app.add_option("--epsilon", epsilon, "Relative mass on non-kernel transitions")->capture_default_str();
    app.add_option("--kv", kv, "Speed far from every mean");
    app.add_option("--blend-sigma", blend_sigma, "Width of the speed blend");
    app.add_option("--hysteresis", hysteresis, "Log-marginal margin for switching clusters")->capture_default_str();
    app.add_option("--max-ticks", max_ticks, "Tick budget, 0 = 10 x longest mean")->capture_default_str();
  }

  control::KernelSettings kernels() const {
    control::KernelSettings k;
    k.family = kernel_flag(kernel);
    if (sigma && !(*sigma > 0.0)) throw FlagError("--sigma", "must be > 0");
    if (!(epsilon >= 0.0)) throw FlagError("--epsilon", "must be >= 0");
    k.sigma = sigma;
    k.epsilon = epsilon;
    return k;
  }

  control::ControllerConfig controller(const ClusterModel& model) const {
    auto cfg = control::ControllerConfig::defaults_for(model);
    if (kv) {
      if (!(*kv > 0.0)) throw FlagError("--kv", "must be > 0");
      cfg.kv_perturbed = *kv;
    }
    if (blend_sigma) {
      if (!(*blend_sigma > 0.0)) throw FlagError("--blend-sigma", "must be > 0");
      cfg.blend_sigma = *blend_sigma;
    }
    if (!(hysteresis >= 0.0)) throw FlagError("--hysteresis", "must be >= 0");
    cfg.hysteresis = hysteresis;
    return cfg;
  }

  sim::RolloutConfig rollout() const {
    sim::RolloutConfig r;
    r.max_ticks = max_ticks;
    return r;
  }
};

#ifdef CALM_WITH_SERVICE
std::atomic<bool> g_interrupted{false};
extern "C" void on_signal(int) { g_interrupted = true; }
#endif

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  auto log = make_logger(err);

  CLI::App app{"Learning from demonstration with clustered, aligned mean trajectories"};
  app.name("calm");
  app.set_config("--config", "", "Read flags from a key = value file");
  app.require_subcommand(1);

  // gen
  std::string gen_kind;
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  std::optional<std::size_t> gen_demos;
  std::optional<double> gen_noise;
  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  gen->add_option("--kind", gen_kind, "overlap|multi_motion|snake|loop")->required();
  gen->add_option("--seed", gen_seed, "Random seed")->capture_default_str();
  gen->add_option("--out", gen_out, "Dataset JSON to write")->required();
  gen->add_option("--demos", gen_demos, "Number of demos (default per kind)");
  gen->add_option("--noise", gen_noise, "Per-state noise standard deviation");

  // cluster
  std::string cl_input, cl_out;
  std::optional<std::size_t> cl_k;
  bool cl_auto = false;
  ClusterConfig cl_cfg;
  auto* cluster = app.add_subcommand("cluster", "Fit mean trajectories to a dataset");
  cluster->add_option("--input", cl_input, "Dataset JSON")->required();
  auto* k_opt = cluster->add_option("--k", cl_k, "Number of clusters");
  auto* auto_opt = cluster->add_flag("--auto", cl_auto, "Choose k by the elbow rule");
  k_opt->excludes(auto_opt);
  cluster->add_option("--out", cl_out, "Model JSON to write")->required();
  cluster->add_option("--seed", cl_cfg.seed, "Seeding choice")->capture_default_str();
  cluster->add_option("--max-iters", cl_cfg.max_iters, "EM iteration cap")->capture_default_str();
  cluster->add_option("--k-max", cl_cfg.k_max, "Largest k tried by --auto")->capture_default_str();
  cluster->add_option("--states", cl_cfg.states_per_mean, "States per mean (default median demo length)");

  // rollout
  std::string ro_model, ro_start, ro_perturb, ro_out;
  ControlFlags ro_flags;
  auto* rollout = app.add_subcommand("rollout", "Run the controller from a start position");
  rollout->add_option("--model", ro_model, "Model JSON")->required();
  rollout->add_option("--start", ro_start, "Start position \"x,y\" (default first mean's first state)");
  rollout->add_option("--perturb", ro_perturb, "Perturbation script JSON");
  rollout->add_option("--out", ro_out, "CSV to write (default standard output)");
  ro_flags.add(*rollout);

  // eval
  std::string ev_model, ev_input, ev_report;
  ControlFlags ev_flags;
  bool ev_serial = false;
  auto* eval = app.add_subcommand("eval", "Roll out from every demo start and score against the demos");
  eval->add_option("--model", ev_model, "Model JSON")->required();
  eval->add_option("--input", ev_input, "Dataset JSON")->required();
  eval->add_option("--report", ev_report, "Report JSON to write");
  eval->add_flag("--serial", ev_serial, "Run rollouts on one thread");
  ev_flags.add(*eval);

  // serve
  std::string sv_model, sv_start, sv_address = "127.0.0.1";
  int sv_port = 8080;
  int sv_tick_ms = 50;
  std::size_t sv_cells = 0;
  ControlFlags sv_flags;
  auto* serve = app.add_subcommand("serve", "Serve live rollouts over WebSocket");
  serve->add_option("--model", sv_model, "Model JSON")->required();
  serve->add_option("--port", sv_port, "TCP port, 0 for any")->capture_default_str();
  serve->add_option("--tick-ms", sv_tick_ms, "Control period in milliseconds")->capture_default_str();
  serve->add_option("--address", sv_address, "Bind address")->capture_default_str();
  serve->add_option("--start", sv_start, "Start position (default first mean's first state)");
  serve->add_option("--posterior-cells", sv_cells, "Downsample posteriors to this many bins, 0 = off");
  sv_flags.add(*serve);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? ok : validation_error;
  }

  try {
    if (gen->parsed()) {
      DatasetKind kind;
      try {
        kind = parse_dataset_kind(gen_kind);
      } catch (const InvalidArgument& e) {
        throw FlagError("--kind", e.what());
      }
      GeneratorParams p;
      if (gen_demos) {
        if (*gen_demos == 0) throw FlagError("--demos", "must be > 0");
        p.num_demos = gen_demos;
      }
      if (gen_noise) {
        if (!(*gen_noise >= 0.0)) throw FlagError("--noise", "must be >= 0");
        p.noise = *gen_noise;
      }
      const auto ds = generate_dataset(kind, gen_seed, p);
      io::save_dataset(ds, gen_out);
      log->info("wrote {} demos to {}", ds.demos.size(), gen_out);
    } else if (cluster->parsed()) {
      if (!cl_k && !cl_auto) throw FlagError("--k", "one of --k or --auto is required");
      if (cl_k && *cl_k == 0) throw FlagError("--k", "must be > 0");
      if (cl_cfg.states_per_mean && *cl_cfg.states_per_mean < 2) throw FlagError("--states", "must be >= 2");
      const auto ds = load_dataset_flag(cl_input);
      if (cl_k && *cl_k > ds.demos.size()) {
        throw FlagError("--k", std::to_string(*cl_k) + " clusters but only " + std::to_string(ds.demos.size()) +
                                   " demos");
      }
      const auto model = fit(ds, cl_k, cl_cfg);
      io::save_model(model, cl_out);
      log->info("k={} after {} iterations ({}), wrote {}", model.size(), model.meta.iterations,
                model.meta.stop_reason, cl_out);
    } else if (rollout->parsed()) {
      const auto kernels = ro_flags.kernels();
      const auto model = load_model_flag(ro_model);
      const auto ccfg = ro_flags.controller(model);
      const Point start =
          ro_start.empty() ? model.means.front().states().front() : point_flag("--start", ro_start, model.dim());
      std::vector<sim::PerturbationEvent> events;
      if (!ro_perturb.empty()) {
        events = with_flag("--perturb", [&] { return io::load_perturbations(ro_perturb, model.dim()); });
      }
      const auto r = sim::rollout(model, start, kernels, ccfg, events, ro_flags.rollout());
      if (ro_out.empty()) {
        out << io::rollout_to_csv(r);
      } else {
        io::save_rollout_csv(r, ro_out);
      }
      log->info("{} ticks, converged={}, terminal cluster {}", r.positions.size(), r.converged,
                r.terminal_cluster ? std::to_string(*r.terminal_cluster) : "none");
    } else if (eval->parsed()) {
      const auto kernels = ev_flags.kernels();
      const auto model = load_model_flag(ev_model);
      const auto ds = load_dataset_flag(ev_input);
      if (ds.dim() != model.dim()) throw FlagError("--input", "dataset dimension does not match the model");
      const auto ccfg = ev_flags.controller(model);
      const auto report = sim::evaluate(model, ds, kernels, ccfg, ev_flags.rollout(), !ev_serial);
      if (!ev_report.empty()) io::save_report(report, ev_report);
      out << "mean_dtwd " << io::format_double(report.mean_dtwd) << "\n";
      std::size_t converged = 0;
      for (const auto& d : report.demos) converged += d.converged ? 1 : 0;
      out << "converged " << converged << "/" << report.demos.size() << "\n";
      if (report.labeled) {
        out << "terminal_cluster_accuracy " << report.label_matches << "/" << report.labeled << "\n";
      }
      for (const auto& d : report.demos) {
        if (!d.error.empty()) log->warn("demo {}: {}", d.demo, d.error);
      }
    } else if (serve->parsed()) {
#ifdef CALM_WITH_SERVICE
      if (sv_port < 0 || sv_port > 65535) throw FlagError("--port", "must be in [0, 65535]");
      if (sv_tick_ms <= 0) throw FlagError("--tick-ms", "must be > 0");
      const auto kernels = sv_flags.kernels();
      auto model = load_model_flag(sv_model);
      service::SessionConfig scfg;
      scfg.kernels = kernels;
      scfg.controller = sv_flags.controller(model);
      scfg.rollout = sv_flags.rollout();
      scfg.posterior_cells = sv_cells;
      scfg.start =
          sv_start.empty() ? model.means.front().states().front() : point_flag("--start", sv_start, model.dim());
      service::ServerConfig cfg;
      cfg.address = sv_address;
      cfg.port = static_cast<std::uint16_t>(sv_port);
      cfg.tick_ms = sv_tick_ms;
      service::Server server(std::move(model), std::move(scfg), cfg);
      server.start();
      out << "listening on " << sv_address << ":" << server.port() << std::endl;
      g_interrupted = false;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
      server.stop();
#else
      throw FlagError("serve", "this build has no service support");
#endif
    }
  } catch (const FlagError& e) {
    err << "error: " << e.flag << ": " << e.what() << "\n";
    return validation_error;
  } catch (const SchemaError& e) {
    err << "error: " << e.what() << "\n";
    return validation_error;
  } catch (const DimensionError& e) {
    err << "error: " << e.what() << "\n";
    return validation_error;
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << "\n";
    return validation_error;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return runtime_error;
  }
  return ok;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace calm::cli
