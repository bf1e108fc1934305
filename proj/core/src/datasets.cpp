#include "calm/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>

#include "calm/errors.hpp"

namespace calm {
namespace {

using Curve = std::function<Point(double)>;

constexpr double kPi = std::numbers::pi;
constexpr std::size_t kDenseSamples = 4001;
constexpr double kNominalSpacing = 0.25;

Point p2(double x, double y) {
  Point p(2);
  p << x, y;
  return p;
}

double smoothstep(double z) {
  z = std::clamp(z, 0.0, 1.0);
  return z * z * (3.0 - 2.0 * z);
}

// Alpha curve: a single loop whose two passes cross at (10, 0) with headings
// about 118 degrees apart.
Point overlap_curve(double u) {
  const double t = -1.3 + 2.6 * u;
  return p2(10.0 * t * t, 6.0 * (t * t * t - t));
}

// Lower start, shared corridor along y = 0 for x in [3, 10], upper branch.
double multi_motion_y(double x) { return -0.6 * (1.0 - smoothstep(x / 3.0)) + 7.0 * smoothstep((x - 10.0) / 8.0); }

Point multi_motion_curve(double u, double sign) {
  const double x = 18.0 * u;
  return p2(x, sign * multi_motion_y(x));
}

Point snake_curve(double u) { return p2(20.0 * u, 3.0 * std::sin(5.0 * kPi * u)); }

// Parameterized so consecutive laps join with one nominal spacing between the
// last and first state.
Curve loop_curve(std::size_t nominal_states) {
  const double span = 2.0 * kPi * (1.0 - 1.0 / static_cast<double>(nominal_states));
  return [span](double u) { return p2(5.0 * std::cos(span * u), 5.0 * std::sin(span * u)); };
}

// Arc-length fraction covered by time fraction t when the speed is constant
// until 1 - ease and then falls linearly to end_speed.
double eased_fraction(double t, double ease, double end_speed) {
  if (ease <= 0.0) return t;
  const double t0 = 1.0 - ease;
  const double total = t0 + ease * (1.0 + end_speed) / 2.0;
  if (t <= t0) return t / total;
  const double v = 1.0 + (end_speed - 1.0) * (t - t0) / ease;
  return (t0 + (t - t0) * (1.0 + v) / 2.0) / total;
}

// Parameter values placing `count` samples along `curve` at the given
// arc-length fractions of the time grid.
std::vector<double> arc_length_parameters(const Curve& curve, std::size_t count, double ease, double end_speed) {
  std::vector<double> cum(kDenseSamples, 0.0);
  Point prev = curve(0.0);
  for (std::size_t k = 1; k < kDenseSamples; ++k) {
    const Point cur = curve(static_cast<double>(k) / (kDenseSamples - 1));
    cum[k] = cum[k - 1] + (cur - prev).norm();
    prev = cur;
  }
  std::vector<double> params(count);
  const double total = cum.back();
  std::size_t seg = 0;
  for (std::size_t k = 0; k < count; ++k) {
    const double t = static_cast<double>(k) / static_cast<double>(count - 1);
    const double target = total * eased_fraction(t, ease, end_speed);
    while (seg + 2 < kDenseSamples && cum[seg + 1] < target) ++seg;
    const double len = cum[seg + 1] - cum[seg];
    const double f = len > 0.0 ? std::clamp((target - cum[seg]) / len, 0.0, 1.0) : 0.0;
    params[k] = (static_cast<double>(seg) + f) / (kDenseSamples - 1);
  }
  return params;
}

double curve_length(const Curve& curve) {
  double total = 0.0;
  Point prev = curve(0.0);
  for (std::size_t k = 1; k < kDenseSamples; ++k) {
    const Point cur = curve(static_cast<double>(k) / (kDenseSamples - 1));
    total += (cur - prev).norm();
    prev = cur;
  }
  return total;
}

// Keeps the cruising spacing at kNominalSpacing when the end eases out.
std::size_t nominal_count(const Curve& curve, double ease = 0.0, double end_speed = 1.0) {
  const double time_per_length = 1.0 - ease + ease * (1.0 + end_speed) / 2.0;
  return static_cast<std::size_t>(std::llround(curve_length(curve) / (kNominalSpacing * time_per_length))) + 1;
}

Point random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Point v = p2(n01(rng), n01(rng));
  const double norm = v.norm();
  return norm > 0.0 ? Point(v / norm) : p2(1.0, 0.0);
}

Trajectory make_demo(const Curve& curve, std::size_t nominal, const GeneratorParams& p, bool ease,
                     std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_real_distribution<double> u11(-1.0, 1.0);

  const double scale = 1.0 + p.length_jitter * u11(rng);
  const auto count = std::max<std::size_t>(
      8, static_cast<std::size_t>(std::llround(static_cast<double>(nominal) * scale)));
  const Point shift = p2(p.start_jitter * n01(rng), p.start_jitter * n01(rng));
  const double a1 = p.bend * n01(rng);
  const double a2 = p.bend * n01(rng);
  const Point v1 = random_unit(rng);
  const Point v2 = random_unit(rng);

  std::vector<Point> states;
  states.reserve(count);
  for (double u : arc_length_parameters(curve, count, ease ? p.ease_out : 0.0, p.end_speed)) {
    Point s = curve(u) + shift + a1 * std::sin(kPi * u) * v1 + a2 * std::sin(2.0 * kPi * u) * v2;
    s(0) += p.noise * n01(rng);
    s(1) += p.noise * n01(rng);
    states.push_back(std::move(s));
  }
  return Trajectory(std::move(states), p.dt);
}

}  // namespace

bool Dataset::has_labels() const {
  return !labels.empty() &&
         std::all_of(labels.begin(), labels.end(), [](const auto& l) { return l.has_value(); });
}

void validate(const Dataset& dataset) {
  if (dataset.demos.empty()) throw InvalidArgument("dataset has no demos");
  const auto d = dataset.demos.front().dim();
  const double dt = dataset.demos.front().dt();
  for (const auto& demo : dataset.demos) {
    if (demo.dim() != d) throw InvalidArgument("dataset demos differ in dimension");
    if (demo.dt() != dt) throw InvalidArgument("dataset demos differ in dt");
  }
  if (!dataset.labels.empty() && dataset.labels.size() != dataset.demos.size()) {
    throw InvalidArgument("dataset labels do not cover every demo");
  }
}

DatasetKind parse_dataset_kind(std::string_view name) {
  if (name == "overlap") return DatasetKind::overlap;
  if (name == "multi_motion") return DatasetKind::multi_motion;
  if (name == "snake") return DatasetKind::snake;
  if (name == "loop") return DatasetKind::loop;
  throw InvalidArgument("unknown dataset kind '" + std::string(name) + "'");
}

std::string_view to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::overlap: return "overlap";
    case DatasetKind::multi_motion: return "multi_motion";
    case DatasetKind::snake: return "snake";
    case DatasetKind::loop: return "loop";
  }
  return "unknown";
}

Point overlap_crossing_point() { return p2(10.0, 0.0); }

Dataset generate_dataset(DatasetKind kind, std::uint64_t seed, const GeneratorParams& params) {
  if (!(params.dt > 0.0) || !std::isfinite(params.dt)) throw InvalidArgument("generate_dataset: dt must be > 0");
  for (const auto& [name, v] : {std::pair{"start_jitter", params.start_jitter}, std::pair{"bend", params.bend},
                                std::pair{"noise", params.noise}, std::pair{"length_jitter", params.length_jitter}}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidArgument(std::string("generate_dataset: ") + name + " must be >= 0");
  }
  if (!(params.ease_out >= 0.0 && params.ease_out < 1.0)) {
    throw InvalidArgument("generate_dataset: ease_out must be in [0, 1)");
  }
  if (!(params.end_speed > 0.0 && params.end_speed <= 1.0)) {
    throw InvalidArgument("generate_dataset: end_speed must be in (0, 1]");
  }
  if (params.num_demos && *params.num_demos == 0) throw InvalidArgument("generate_dataset: num_demos must be > 0");
  std::mt19937_64 rng(seed);
  Dataset ds;
  ds.name = std::string(to_string(kind));

  auto emit = [&](const Curve& curve, std::size_t n, std::optional<int> label, bool ease = true) {
    const auto nominal = ease ? nominal_count(curve, params.ease_out, params.end_speed) : nominal_count(curve);
    for (std::size_t k = 0; k < n; ++k) {
      ds.demos.push_back(make_demo(curve, nominal, params, ease, rng));
      ds.labels.push_back(label);
    }
  };

  switch (kind) {
    case DatasetKind::overlap:
      emit(overlap_curve, params.num_demos.value_or(4), std::nullopt);
      break;
    case DatasetKind::multi_motion: {
      const auto per_cluster = params.num_demos.value_or(6) / 2;
      if (per_cluster == 0) throw InvalidArgument("generate_dataset: multi_motion needs >= 2 demos");
      emit([](double u) { return multi_motion_curve(u, 1.0); }, per_cluster, 0);
      emit([](double u) { return multi_motion_curve(u, -1.0); }, per_cluster, 1);
      break;
    }
    case DatasetKind::snake:
      emit(snake_curve, params.num_demos.value_or(5), std::nullopt);
      break;
    case DatasetKind::loop: {
      const auto nominal = nominal_count(loop_curve(128));
      emit(loop_curve(nominal), params.num_demos.value_or(4), std::nullopt, false);
      break;
    }
  }
  if (!ds.has_labels()) ds.labels.clear();
  return ds;
}

}  // namespace calm
