#include <benchmark/benchmark.h>

#include "calm/clustering.hpp"
#include "calm/controller.hpp"
#include "calm/sim.hpp"

namespace {

using namespace calm;

const Dataset& multi() {
  static const Dataset ds = generate_dataset(DatasetKind::multi_motion, 0);
  return ds;
}

const ClusterModel& multi_model() {
  static const ClusterModel m = fit(multi(), 2);
  return m;
}

void BM_Dtwd(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = resample_count(multi().demos[0], n);
  const auto b = resample_count(multi().demos[3], n);
  for (auto _ : state) benchmark::DoNotOptimize(dtwd(a, b));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Dtwd)->RangeMultiplier(2)->Range(32, 512)->Complexity(benchmark::oNSquared);

void BM_ForwardUpdate(benchmark::State& state) {
  const auto family = static_cast<align::KernelFamily>(state.range(0));
  const auto& mean = multi_model().means[0];
  const align::Aligner a(mean, align::make_kernel(family, 1.0));
  auto s = a.init(mean[0]);
  std::size_t i = 0;
  for (auto _ : state) {
    s = a.update(s, mean[i]);
    i = (i + 1) % mean.size();
  }
  state.SetLabel(std::string(align::to_string(family)));
}
BENCHMARK(BM_ForwardUpdate)->DenseRange(0, 3);

void BM_ControllerStep(benchmark::State& state) {
  const auto& model = multi_model();
  const control::Controller ctl(model, {}, control::ControllerConfig::defaults_for(model));
  const Point start = multi().demos[0].front();
  auto st = ctl.initial_state(start);
  for (auto _ : state) {
    benchmark::DoNotOptimize(ctl.step(st));
    if (st.tick >= 200) st = ctl.initial_state(start);
  }
}
BENCHMARK(BM_ControllerStep);

void BM_Rollout(benchmark::State& state) {
  const auto& model = multi_model();
  const control::Controller ctl(model, {}, control::ControllerConfig::defaults_for(model));
  for (auto _ : state) benchmark::DoNotOptimize(sim::rollout(ctl, multi().demos[0].front()));
}
BENCHMARK(BM_Rollout)->Unit(benchmark::kMillisecond);

void BM_Fit(benchmark::State& state) {
  ClusterConfig cfg;
  cfg.parallel = state.range(0) != 0;
  for (auto _ : state) benchmark::DoNotOptimize(fit(multi(), 2, cfg));
}
BENCHMARK(BM_Fit)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
