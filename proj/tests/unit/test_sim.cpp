#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "calm/errors.hpp"
#include "calm/sim.hpp"

namespace calm::sim {
namespace {

struct Fixture {
  Dataset ds;
  ClusterModel model;
  control::ControllerConfig cfg;
};

const Fixture& multi() {
  static const Fixture f = [] {
    Fixture x;
    x.ds = generate_dataset(DatasetKind::multi_motion, 0);
    x.model = fit(x.ds, 2);
    x.cfg = control::ControllerConfig::defaults_for(x.model);
    return x;
  }();
  return f;
}

TEST(Rollout, ConvergesFromDemoStarts) {
  const auto& f = multi();
  const control::Controller c(f.model, {}, f.cfg);
  for (const auto& d : f.ds.demos) {
    const auto r = rollout(c, d.front());
    ASSERT_TRUE(r.converged);
    ASSERT_TRUE(r.terminal_cluster);
    const auto& end = f.model.means[*r.terminal_cluster].states().back();
    EXPECT_LT((r.positions.back() - end).norm(), 0.5 * f.model.means[*r.terminal_cluster].mean_spacing());
    EXPECT_LE(r.positions.size(), default_tick_budget(f.model));
    EXPECT_EQ(*r.converged_tick + 1, r.positions.size());
  }
}

TEST(Rollout, TracesLineUp) {
  const auto& f = multi();
  const auto r = rollout(f.model, f.ds.demos[0].front(), {}, f.cfg);
  const auto n = r.positions.size();
  EXPECT_EQ(r.velocities.size(), n);
  EXPECT_EQ(r.cluster_trace.size(), n);
  EXPECT_EQ(r.kv_trace.size(), n);
  EXPECT_EQ(r.phase_trace.size(), n);
  EXPECT_EQ(r.mode_trace.size(), n);
  EXPECT_DOUBLE_EQ(r.dt, f.cfg.control_dt);
  EXPECT_EQ(r.positions.front(), f.ds.demos[0].front());
  for (std::size_t k = 1; k < n; ++k) {
    EXPECT_TRUE(r.positions[k].isApprox(r.positions[k - 1] + r.velocities[k - 1] * r.dt, 1e-12));
    EXPECT_GE(r.phase_trace[k], 0.0);
    EXPECT_LE(r.phase_trace[k], 1.0);
  }
  EXPECT_EQ(r.trajectory().size(), n);
}

TEST(Rollout, IsDeterministic) {
  const auto& f = multi();
  const auto a = rollout(f.model, f.ds.demos[2].front(), {}, f.cfg);
  const auto b = rollout(f.model, f.ds.demos[2].front(), {}, f.cfg);
  EXPECT_EQ(a.positions, b.positions);
}

TEST(Rollout, BudgetAndEarlyStop) {
  const auto& f = multi();
  RolloutConfig rc;
  rc.max_ticks = 7;
  EXPECT_EQ(rollout(f.model, f.ds.demos[0].front(), {}, f.cfg, {}, rc).positions.size(), 7u);
  rc = {};
  rc.stop_on_convergence = false;
  const auto full = rollout(f.model, f.ds.demos[0].front(), {}, f.cfg, {}, rc);
  EXPECT_EQ(full.positions.size(), default_tick_budget(f.model));
  EXPECT_TRUE(full.converged);
}

TEST(Perturbation, SetPositionAndOffsetApplyOnTheirTick) {
  const auto& f = multi();
  const Point start = f.ds.demos[0].front();
  const Point target = Eigen::Vector2d(3.0, -1.0);
  const std::vector<PerturbationEvent> set{{5, PerturbationMode::set_position, target}};
  RolloutConfig rc;
  rc.max_ticks = 10;
  const auto r = rollout(f.model, start, {}, f.cfg, set, rc);
  EXPECT_EQ(r.positions[5], target);

  const auto base = rollout(f.model, start, {}, f.cfg, {}, rc);
  const Point shift = Eigen::Vector2d(0.0, 0.7);
  const std::vector<PerturbationEvent> off{{4, PerturbationMode::offset, shift}};
  const auto o = rollout(f.model, start, {}, f.cfg, off, rc);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(o.positions[k], base.positions[k]);
  EXPECT_TRUE(o.positions[4].isApprox(base.positions[4] + shift, 1e-14));
}

TEST(Perturbation, UnsortedEventsAndValidation) {
  const auto& f = multi();
  const Point start = f.ds.demos[0].front();
  RolloutConfig rc;
  rc.max_ticks = 12;
  const std::vector<PerturbationEvent> a{{8, PerturbationMode::offset, Eigen::Vector2d(0.1, 0.0)},
                                         {3, PerturbationMode::offset, Eigen::Vector2d(0.0, 0.1)}};
  std::vector<PerturbationEvent> b{a[1], a[0]};
  EXPECT_EQ(rollout(f.model, start, {}, f.cfg, a, rc).positions, rollout(f.model, start, {}, f.cfg, b, rc).positions);
  const std::vector<PerturbationEvent> bad{{1, PerturbationMode::offset, Eigen::Vector3d(0, 0, 0)}};
  EXPECT_THROW(rollout(f.model, start, {}, f.cfg, bad, rc), DimensionError);
  EXPECT_EQ(parse_perturbation_mode("offset"), PerturbationMode::offset);
  EXPECT_THROW(parse_perturbation_mode("teleport"), InvalidArgument);
}

TEST(Convergence, RequiresMassAndDistance) {
  const auto& f = multi();
  const auto& m = f.model.means[0];
  std::vector<double> post(m.size(), 0.0);
  post.back() = 1.0;
  EXPECT_TRUE(is_converged(f.model, 0, m.states().back(), post, {}));
  EXPECT_FALSE(is_converged(f.model, 0, m.states().back() + Eigen::Vector2d(m.mean_spacing(), 0.0), post, {}));
  post.back() = 0.5;
  post[0] = 0.5;
  EXPECT_FALSE(is_converged(f.model, 0, m.states().back(), post, {}));
}

TEST(Evaluate, ScoresEveryDemo) {
  const auto& f = multi();
  const auto rep = evaluate(f.model, f.ds, {}, f.cfg);
  EXPECT_EQ(rep.demos.size(), 6u);
  EXPECT_EQ(rep.labeled, 6u);
  EXPECT_GE(rep.label_matches, 5u);
  EXPECT_TRUE(std::isfinite(rep.mean_dtwd));
  for (const auto& d : rep.demos) {
    EXPECT_TRUE(d.error.empty());
    EXPECT_TRUE(std::isfinite(d.dtwd));
    EXPECT_TRUE(d.converged);
  }
  ASSERT_EQ(rep.cluster_labels.size(), 2u);
  EXPECT_NE(rep.cluster_labels[0], rep.cluster_labels[1]);
  const auto serial = evaluate(f.model, f.ds, {}, f.cfg, {}, false);
  EXPECT_EQ(serial.mean_dtwd, rep.mean_dtwd);
}

TEST(Evaluate, RejectsDimensionMismatch) {
  const auto& f = multi();
  Dataset ds;
  ds.demos.push_back(Trajectory({Eigen::Vector3d(0, 0, 0), Eigen::Vector3d(1, 0, 0)}, 0.05));
  EXPECT_THROW(evaluate(f.model, ds, {}, f.cfg), DimensionError);
}

std::vector<Point> line(Point from, Point to, int n) {
  std::vector<Point> out;
  for (int i = 0; i <= n; ++i) out.push_back(from + (to - from) * (static_cast<double>(i) / n));
  return out;
}

TEST(HeadingCheck, CrossingPassesFarApart) {
  auto path = line(Eigen::Vector2d(-2, 0), Eigen::Vector2d(2, 0), 20);
  for (auto& p : line(Eigen::Vector2d(2, 0), Eigen::Vector2d(2, 2), 5)) path.push_back(p);
  // Come back through the origin going down and to the left: 135 degrees.
  for (auto& p : line(Eigen::Vector2d(2, 2), Eigen::Vector2d(-2, -2), 20)) path.push_back(p);
  const auto h = overlap_heading_check(path, Eigen::Vector2d(0, 0), 0.5);
  EXPECT_TRUE(h.pass);
  EXPECT_EQ(h.passes, 2u);
  EXPECT_NEAR(h.max_angle_deg, 135.0, 1e-9);
}

TEST(HeadingCheck, ShallowOrSinglePassFails) {
  auto path = line(Eigen::Vector2d(-2, 0), Eigen::Vector2d(2, 0), 20);
  EXPECT_FALSE(overlap_heading_check(path, Eigen::Vector2d(0, 0), 0.5).pass);
  for (auto& p : line(Eigen::Vector2d(2, -1), Eigen::Vector2d(-2, 1), 20)) path.push_back(p);
  for (auto& p : line(Eigen::Vector2d(-2, 1), Eigen::Vector2d(2, -0.5), 20)) path.push_back(p);
  auto shallow = line(Eigen::Vector2d(-2, 0), Eigen::Vector2d(2, 0), 20);
  for (auto& p : line(Eigen::Vector2d(-2, 0.3), Eigen::Vector2d(2, -0.3), 20)) shallow.push_back(p);
  const auto h = overlap_heading_check(shallow, Eigen::Vector2d(0, 0), 0.5);
  EXPECT_EQ(h.passes, 2u);
  EXPECT_FALSE(h.pass);
  EXPECT_THROW(overlap_heading_check(shallow, Eigen::Vector2d(0, 0), 0.0), InvalidArgument);
}

}  // namespace
}  // namespace calm::sim
