// Acceptance runner. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "calm/clustering.hpp"
#include "calm/controller.hpp"
#include "calm/sim.hpp"
#include "checks.hpp"

#ifdef CALM_WITH_CLI
#include <nlohmann/json.hpp>

#include "calm/cli.hpp"
#endif

namespace {

using namespace calm;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  double budget_s;  // 0 = no runtime limit
  std::function<Outcome()> run;
};

std::string fmt(double v, int precision = 3) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

struct Fitted {
  Dataset ds;
  ClusterModel model;
  control::ControllerConfig cfg;
};

std::size_t default_k(DatasetKind kind) { return kind == DatasetKind::multi_motion ? 2 : 1; }

Fitted fitted(DatasetKind kind, std::uint64_t seed, std::optional<std::size_t> k = std::nullopt) {
  Fitted f;
  f.ds = generate_dataset(kind, seed);
  ClusterConfig cc;
  cc.seed = seed;
  f.model = fit(f.ds, k.value_or(default_k(kind)), cc);
  f.cfg = control::ControllerConfig::defaults_for(f.model);
  return f;
}

const std::vector<DatasetKind> kSynthetic{DatasetKind::overlap, DatasetKind::multi_motion, DatasetKind::snake};

double endpoint_distance(const ClusterModel& m, std::size_t c, const Point& x) {
  return (x - m.means[c].states().back()).norm();
}

std::size_t lowest_support(const align::AlignmentState& s) {
  const auto& lp = s.log_posterior();
  std::size_t i = 0;
  while (i < lp.size() && std::isinf(lp[i])) ++i;
  return i;
}

Outcome gradient() {
  const auto r = check::gradient_vs_finite_differences(200, 2024);
  return {r.configs == 200 && r.max_rel_error < 1e-6,
          std::to_string(r.configs) + " configs, max rel error " + fmt(r.max_rel_error) + " (< 1e-6)"};
}

Outcome forward_oracle() {
  const auto r = check::forward_vs_enumeration(500, 2024, 6, 6);
  const bool pass = r.instances == 500 && r.max_posterior_rel < 1e-10 && r.max_log_marginal_rel < 1e-8;
  std::string d = std::to_string(r.instances) + " instances, posterior rel " + fmt(r.max_posterior_rel) +
                  " (< 1e-10), log-marginal rel " + fmt(r.max_log_marginal_rel) + " (< 1e-8)";
  if (!pass) d += "; worst: " + r.worst;
  return {pass, d};
}

// Random starts over each dataset's bounding box. Every rollout must end
// within half a state spacing of its cluster's last state inside 10 F ticks,
// and on every cluster the lowest supported state must advance by one per
// tick until it reaches the end.
Outcome stable_forward() {
  std::size_t rollouts = 0, converged = 0, monotone_violations = 0;
  std::string first_failure;
  for (auto kind : kSynthetic) {
    const auto f = fitted(kind, 0);
    const control::Controller ctl(f.model, {}, f.cfg);
    Point lo = f.ds.demos[0].front(), hi = lo;
    for (const auto& d : f.ds.demos) {
      for (const auto& p : d.states()) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
      }
    }
    std::mt19937_64 rng(7);
    for (int s = 0; s < 50; ++s) {
      Point x(lo.size());
      for (Eigen::Index d = 0; d < x.size(); ++d) x(d) = std::uniform_real_distribution<double>(lo(d), hi(d))(rng);
      ++rollouts;
      auto st = ctl.initial_state(x);
      std::size_t max_f = 0;
      for (const auto& m : f.model.means) max_f = std::max(max_f, m.size());
      bool done = false;
      std::vector<std::size_t> prev(f.model.size(), 0);
      for (std::size_t t = 0; t < 10 * max_f && !done; ++t) {
        const auto out = ctl.step(st);
        for (std::size_t c = 0; c < f.model.size(); ++c) {
          const std::size_t fc = f.model.means[c].size();
          const std::size_t low = lowest_support(st.per_cluster[c]);
          const bool ok = t == 0 ? true : (prev[c] + 1 < fc ? low > prev[c] : low == fc - 1);
          if (!ok || low < std::min(t, fc - 1)) ++monotone_violations;
          prev[c] = low;
        }
        const auto c = out.active_cluster;
        if (sim::is_converged(f.model, c, out.observed, st.per_cluster[c].posterior(), {})) {
          done = true;
          const auto& m = f.model.means[c];
          const bool near = endpoint_distance(f.model, c, out.observed) < 0.5 * m.mean_spacing();
          const bool in_time = st.tick <= 10 * m.size();
          if (near && in_time) {
            ++converged;
          } else if (first_failure.empty()) {
            first_failure = std::string(to_string(kind)) + " start " + fmt(x(0)) + "," + fmt(x(1));
          }
        }
      }
      if (!done && first_failure.empty()) {
        first_failure = std::string(to_string(kind)) + " start " + fmt(x(0)) + "," + fmt(x(1)) + " did not converge";
      }
    }
  }
  std::string d = std::to_string(converged) + "/" + std::to_string(rollouts) +
                  " random starts converged within 0.5 spacing in <= 10 F ticks, " +
                  std::to_string(monotone_violations) + " support monotonicity violations";
  if (!first_failure.empty()) d += "; first failure: " + first_failure;
  return {converged == rollouts && monotone_violations == 0, d};
}

// Follow one corridor until x >= 12, then teleport into the other corridor at
// x near 14.
Outcome multi_motion_switch() {
  std::size_t seeds_ok = 0, converged_runs = 0, off_endpoint = 0;
  std::string fails;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto f = fitted(DatasetKind::multi_motion, seed);
    const control::Controller ctl(f.model, {}, f.cfg);
    auto check_endpoint = [&](const sim::RolloutResult& r) {
      if (!r.converged) return;
      ++converged_runs;
      bool near_any = false;
      for (std::size_t c = 0; c < f.model.size(); ++c) {
        near_any |= endpoint_distance(f.model, c, r.positions.back()) < 0.5 * f.model.means[c].mean_spacing();
      }
      if (!near_any) ++off_endpoint;
    };
    for (const auto& d : f.ds.demos) check_endpoint(sim::rollout(ctl, d.front()));

    const auto base = sim::rollout(ctl, f.ds.demos[0].front());
    std::size_t tp = 0;
    while (tp + 1 < base.positions.size() && base.positions[tp](0) < 12.0) ++tp;
    const std::size_t a = base.cluster_trace[tp];
    const std::size_t b = 1 - a;
    const auto& mb = f.model.means[b];
    std::size_t j = 0;
    for (std::size_t i = 0; i < mb.size(); ++i) {
      if (std::abs(mb[i](0) - 14.0) < std::abs(mb[j](0) - 14.0)) j = i;
    }
    const sim::PerturbationEvent ev{tp, sim::PerturbationMode::set_position, mb[j]};
    const auto r = sim::rollout(ctl, f.ds.demos[0].front(), std::span(&ev, 1));
    check_endpoint(r);
    std::optional<std::size_t> flip;
    for (std::size_t k = tp; k < r.cluster_trace.size() && !flip; ++k) {
      if (r.cluster_trace[k] == b) flip = k;
    }
    bool stays = flip.has_value();
    for (std::size_t k = flip.value_or(0); stays && k < r.cluster_trace.size(); ++k) stays = r.cluster_trace[k] == b;
    const bool ok = flip && *flip - tp <= 25 && stays && r.converged && r.terminal_cluster == b &&
                    endpoint_distance(f.model, b, r.positions.back()) < 0.5 * mb.mean_spacing();
    if (ok) {
      ++seeds_ok;
    } else {
      fails += " " + std::to_string(seed);
    }
  }
  std::string d = std::to_string(seeds_ok) + "/20 seeds flip within 25 ticks and converge to the new endpoint (>= 95%), " +
                  std::to_string(off_endpoint) + "/" + std::to_string(converged_runs) +
                  " converged rollouts off every endpoint";
  if (!fails.empty()) d += "; failing seeds:" + fails;
  return {seeds_ok >= 19 && off_endpoint == 0, d};
}

Outcome overlap() {
  std::size_t ok = 0;
  double min_angle = 180.0;
  std::string fails;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto f = fitted(DatasetKind::overlap, seed);
    const auto r = sim::rollout(f.model, f.ds.demos[0].front(), {}, f.cfg);
    const auto h = sim::overlap_heading_check(r.positions, overlap_crossing_point(), 1.0);
    min_angle = std::min(min_angle, h.max_angle_deg);
    if (h.pass && h.passes >= 2 && h.max_angle_deg > 90.0) {
      ++ok;
    } else {
      fails += " " + std::to_string(seed) + "(" + h.reason + ")";
    }
  }
  std::string d = std::to_string(ok) + "/10 seeds pass the crossing twice at > 90 deg, smallest angle " +
                  fmt(min_angle, 4) + " deg";
  if (!fails.empty()) d += "; failing:" + fails;
  return {ok == 10, d};
}

Outcome clustering() {
  std::size_t recovered = 0, increases = 0, iterations = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto ds = generate_dataset(DatasetKind::multi_motion, seed);
    ClusterConfig cc;
    cc.seed = seed;
    const auto m = fit(ds, 2, cc);
    std::size_t same = 0;
    for (std::size_t n = 0; n < ds.demos.size(); ++n) {
      const auto& r = m.responsibilities[n];
      same += (r[1] > r[0] ? 1 : 0) == *ds.labels[n] ? 1 : 0;
    }
    if (same == ds.demos.size() || same == 0) ++recovered;
    for (std::size_t i = 1; i < m.objective_trace.size(); ++i) {
      ++iterations;
      if (m.objective_trace[i] > m.objective_trace[i - 1]) ++increases;
    }
  }
  return {recovered >= 19 && increases == 0,
          std::to_string(recovered) + "/20 runs recover the labels (>= 95%), " + std::to_string(increases) +
              " objective increases over " + std::to_string(iterations) + " iterations"};
}

// A tick is on-trajectory when the nearest state of the active mean is within
// one state spacing.
Outcome velocity() {
  std::size_t on_total = 0, good_total = 0;
  double worst = 1.0;
  std::string per;
  for (auto kind : kSynthetic) {
    const auto f = fitted(kind, 0);
    const control::Controller ctl(f.model, {}, f.cfg);
    std::size_t on = 0, good = 0;
    for (const auto& d : f.ds.demos) {
      auto st = ctl.initial_state(d.front());
      for (std::size_t t = 0; t < sim::default_tick_budget(f.model); ++t) {
        const auto out = ctl.step(st);
        const auto& m = f.model.means[out.active_cluster];
        const auto& post = st.per_cluster[out.active_cluster].posterior();
        if ((out.observed - m[m.nearest_state(out.observed)]).norm() < m.mean_spacing()) {
          ++on;
          const double ka = control::aligned_speed(m, post);
          if (std::abs(out.velocity.norm() - ka) <= 0.1 * ka) ++good;
        }
        if (sim::is_converged(f.model, out.active_cluster, out.observed, post, {})) break;
      }
    }
    const double frac = on ? static_cast<double>(good) / static_cast<double>(on) : 0.0;
    worst = std::min(worst, frac);
    per += " " + std::string(to_string(kind)) + " " + std::to_string(good) + "/" + std::to_string(on);
    on_total += on;
    good_total += good;
  }
  return {worst >= 0.9 && on_total > 0, "speed within 10% of aligned speed on" + per + " on-trajectory ticks (>= 90% each)"};
}

// Ball of four state spacings around the first mean state; a rollout of five
// cycles' worth of ticks.
Outcome periodic() {
  std::size_t ok = 0;
  std::string per;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto f = fitted(DatasetKind::loop, seed, 1);
    control::KernelSettings ks;
    ks.family = align::KernelFamily::periodic;
    const auto& m = f.model.means[0];
    sim::RolloutConfig rc;
    rc.max_ticks = 5 * m.size();
    const auto r = sim::rollout(f.model, m[0], ks, f.cfg, {}, rc);
    const double radius = 4.0 * m.mean_spacing();
    int entries = 0;
    bool inside = true;
    for (const auto& p : r.positions) {
      const bool now = (p - m[0]).norm() < radius;
      if (now && !inside) ++entries;
      inside = now;
    }
    if (entries >= 4) ++ok;
    per += " " + std::to_string(entries);
  }
  return {ok == 5, std::to_string(ok) + "/5 seeds re-enter the start ball >= 4 times; entries:" + per};
}

// Halfway through the active mean, teleport back to its first quarter.
Outcome backwards() {
  std::size_t runs = 0, decreased = 0, converged = 0;
  std::string fails;
  for (auto kind : kSynthetic) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto f = fitted(kind, seed);
      control::KernelSettings ks;
      ks.family = align::KernelFamily::backwards;
      const control::Controller ctl(f.model, ks, f.cfg);
      for (std::size_t n = 0; n < f.ds.demos.size(); ++n) {
        const auto base = sim::rollout(ctl, f.ds.demos[n].front());
        const auto& m = f.model.means[base.cluster_trace[0]];
        const std::size_t tp = m.size() / 2;
        const sim::PerturbationEvent ev{tp, sim::PerturbationMode::set_position, m[m.size() / 4]};
        const auto r = sim::rollout(ctl, f.ds.demos[n].front(), std::span(&ev, 1));
        ++runs;
        const bool dec = r.mode_trace.size() > tp && r.mode_trace[tp] < r.mode_trace[tp - 1];
        decreased += dec ? 1 : 0;
        const bool conv = r.converged && base.converged;
        converged += conv ? 1 : 0;
        if ((!dec || !conv) && fails.size() < 200) {
          fails += " " + std::string(to_string(kind)) + "/s" + std::to_string(seed) + "/d" + std::to_string(n);
        }
      }
    }
  }
  std::string d = std::to_string(decreased) + "/" + std::to_string(runs) + " perturbations lower the mode, " +
                  std::to_string(converged) + "/" + std::to_string(runs) + " perturbed and unperturbed rollouts converge";
  if (!fails.empty()) d += "; failing:" + fails;
  return {decreased == runs && converged == runs, d};
}

Outcome pipeline() {
#ifdef CALM_WITH_CLI
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "calm_acceptance_pipeline";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto p = [&](const char* name) { return (dir / name).string(); };
  std::ostringstream out, err;
  int code = cli::run({"gen", "--kind", "multi_motion", "--seed", "0", "--out", p("d.json")}, out, err);
  if (code == 0) code = cli::run({"cluster", "--input", p("d.json"), "--k", "2", "--out", p("m.json")}, out, err);
  if (code == 0) {
    out.str("");
    code = cli::run({"eval", "--model", p("m.json"), "--input", p("d.json"), "--report", p("r.json")}, out, err);
  }
  if (code != 0) return {false, "exit code " + std::to_string(code) + ": " + err.str()};
  const auto text = out.str();
  const auto pos = text.find("terminal_cluster_accuracy ");
  if (pos == std::string::npos) return {false, "no accuracy line in eval output"};
  std::size_t m = 0, n = 0;
  std::sscanf(text.c_str() + pos, "terminal_cluster_accuracy %zu/%zu", &m, &n);
  std::ifstream in(p("r.json"));
  const auto report = nlohmann::json::parse(in);
  std::size_t finite = 0;
  for (const auto& d : report["demos"]) finite += d["dtwd"].is_number() && std::isfinite(d["dtwd"].get<double>()) ? 1 : 0;
  const std::size_t demos = report["demos"].size();
  fs::remove_all(dir);
  return {n == 6 && m >= 5 && finite == demos && demos == 6,
          "accuracy " + std::to_string(m) + "/" + std::to_string(n) + " (>= 5/6), finite DTWD on " +
              std::to_string(finite) + "/" + std::to_string(demos) + " demos"};
#else
  return {false, "built without the command-line tool"};
#endif
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {"gradient_vs_finite_differences", 5.0, gradient},
      {"forward_vs_path_enumeration", 30.0, forward_oracle},
      {"stable_forward_convergence", 60.0, stable_forward},
      {"multi_motion_switch", 0.0, multi_motion_switch},
      {"overlap_crossing", 0.0, overlap},
      {"clustering_labels_and_objective", 0.0, clustering},
      {"velocity_matching", 0.0, velocity},
      {"periodic_reentry", 0.0, periodic},
      {"backwards_perturbation", 0.0, backwards},
      {"gen_cluster_eval_pipeline", 0.0, pipeline},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    std::string timing = fmt(secs, 3) + " s";
    if (c.budget_s > 0.0) {
      timing += " (< " + fmt(c.budget_s) + " s)";
      if (secs >= c.budget_s) o.pass = false;
    }
    std::cout << (o.pass ? "PASS " : "FAIL ") << c.name << ": " << o.detail << " [" << timing << "]" << std::endl;
    failed += o.pass ? 0 : 1;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failed == 0 ? 0 : 1;
}
