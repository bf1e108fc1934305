#include "calm/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "calm/errors.hpp"

namespace calm::io {
namespace {

using nlohmann::json;

std::string at(const std::string& parent, std::string_view key) {
  return parent.empty() ? std::string(key) : parent + "." + std::string(key);
}

std::string at(const std::string& parent, std::size_t index) { return parent + "[" + std::to_string(index) + "]"; }

const json& require(const json& obj, std::string_view key, const std::string& parent) {
  if (!obj.is_object()) throw SchemaError(parent.empty() ? "$" : parent, "expected an object");
  const auto it = obj.find(key);
  if (it == obj.end()) throw SchemaError(at(parent, key), "missing field");
  return *it;
}

double number(const json& v, const std::string& field) {
  if (!v.is_number()) throw SchemaError(field, "expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw SchemaError(field, "expected a finite number");
  return d;
}

double positive(const json& v, const std::string& field) {
  const double d = number(v, field);
  if (!(d > 0.0)) throw SchemaError(field, "must be > 0");
  return d;
}

Point point(const json& v, const std::string& field) {
  if (!v.is_array() || v.empty()) throw SchemaError(field, "expected a non-empty array of numbers");
  Point p(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) p(static_cast<Eigen::Index>(i)) = number(v[i], at(field, i));
  return p;
}

std::vector<Point> states(const json& v, const std::string& field, Eigen::Index& dim) {
  if (!v.is_array() || v.size() < 2) throw SchemaError(field, "expected at least two states");
  std::vector<Point> out;
  out.reserve(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out.push_back(point(v[i], at(field, i)));
    if (dim < 0) dim = out.back().size();
    if (out.back().size() != dim) {
      throw DimensionError(at(field, i), "state has dimension " + std::to_string(out.back().size()) +
                                             ", expected " + std::to_string(dim));
    }
  }
  return out;
}

json to_json(const Point& p) {
  json a = json::array();
  for (Eigen::Index i = 0; i < p.size(); ++i) a.push_back(p(i));
  return a;
}

json to_json(const std::vector<Point>& s) {
  json a = json::array();
  for (const auto& p : s) a.push_back(to_json(p));
  return a;
}

json to_json(const Eigen::MatrixXd& m) {
  json a = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    a.push_back(std::move(row));
  }
  return a;
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json parse(std::string_view text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError("$", std::string("malformed JSON: ") + e.what());
  }
}

template <class T>
T get_as(const json& v, const std::string& field) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw SchemaError(field, "has the wrong type");
  }
}

std::vector<double> numbers(const json& v, const std::string& field) {
  if (!v.is_array()) throw SchemaError(field, "expected an array of numbers");
  std::vector<double> out;
  out.reserve(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(number(v[i], at(field, i)));
  return out;
}

json meta_to_json(const ClusterModel& model) {
  const auto& m = model.meta;
  return json{{"k", m.k},
              {"auto_k", m.auto_k},
              {"temperature", m.temperature},
              {"iterations", m.iterations},
              {"states_per_mean", m.states_per_mean},
              {"seed", m.seed},
              {"stop_reason", m.stop_reason},
              {"reseeded", m.reseeded},
              {"elbow_objectives", m.elbow_objectives},
              {"responsibilities", model.responsibilities},
              {"objective_trace", model.objective_trace}};
}

void meta_from_json(const json& j, ClusterModel& model) {
  const std::string base = "meta";
  if (!j.is_object()) throw SchemaError(base, "expected an object");
  auto& m = model.meta;
  auto opt = [&](std::string_view key) -> const json* {
    const auto it = j.find(key);
    return it == j.end() ? nullptr : &*it;
  };
  if (auto* v = opt("k")) m.k = get_as<std::size_t>(*v, at(base, "k"));
  if (auto* v = opt("auto_k")) m.auto_k = get_as<bool>(*v, at(base, "auto_k"));
  if (auto* v = opt("temperature")) m.temperature = number(*v, at(base, "temperature"));
  if (auto* v = opt("iterations")) m.iterations = get_as<std::size_t>(*v, at(base, "iterations"));
  if (auto* v = opt("states_per_mean")) m.states_per_mean = get_as<std::size_t>(*v, at(base, "states_per_mean"));
  if (auto* v = opt("seed")) m.seed = get_as<std::uint64_t>(*v, at(base, "seed"));
  if (auto* v = opt("stop_reason")) m.stop_reason = get_as<std::string>(*v, at(base, "stop_reason"));
  if (auto* v = opt("reseeded")) m.reseeded = get_as<std::vector<std::size_t>>(*v, at(base, "reseeded"));
  if (auto* v = opt("elbow_objectives")) m.elbow_objectives = numbers(*v, at(base, "elbow_objectives"));
  if (auto* v = opt("objective_trace")) model.objective_trace = numbers(*v, at(base, "objective_trace"));
  if (auto* v = opt("responsibilities")) {
    const auto field = at(base, "responsibilities");
    if (!v->is_array()) throw SchemaError(field, "expected an array of rows");
    for (std::size_t n = 0; n < v->size(); ++n) {
      auto row = numbers((*v)[n], at(field, n));
      if (row.size() != model.size()) {
        throw DimensionError(at(field, n), "row has " + std::to_string(row.size()) + " entries, expected " +
                                               std::to_string(model.size()));
      }
      model.responsibilities.push_back(std::move(row));
    }
  }
}

json kernel_echo(const control::KernelSettings& k) {
  json j{{"family", align::to_string(k.family)},
         {"epsilon", k.epsilon},
         {"backwards_reading",
          k.reading == align::BackwardsReading::forward_plus_epsilon ? "forward_plus_epsilon" : "literal"}};
  j["sigma"] = k.sigma ? json(*k.sigma) : json("(2*delta)^2");
  return j;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError(path.string(), "cannot open for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw FileError(path.string(), "read failed");
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FileError(path.string(), "cannot open for writing");
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw FileError(path.string(), "write failed");
}

std::string dataset_to_json(const Dataset& dataset) {
  validate(dataset);
  json demos = json::array();
  for (std::size_t n = 0; n < dataset.demos.size(); ++n) {
    json label = nullptr;
    if (n < dataset.labels.size() && dataset.labels[n]) label = *dataset.labels[n];
    demos.push_back(json{{"states", to_json(dataset.demos[n].states())}, {"label", label}});
  }
  json j{{"name", dataset.name}, {"dt", dataset.dt()}, {"demos", std::move(demos)}};
  return j.dump(1) + "\n";
}

Dataset dataset_from_json(std::string_view text) {
  const json j = parse(text);
  Dataset ds;
  if (j.is_object() && j.contains("name")) ds.name = get_as<std::string>(j["name"], "name");
  const double dt = positive(require(j, "dt", ""), "dt");
  const json& demos = require(j, "demos", "");
  if (!demos.is_array() || demos.empty()) throw SchemaError("demos", "expected a non-empty array");
  Eigen::Index dim = -1;
  bool any_label = false;
  for (std::size_t n = 0; n < demos.size(); ++n) {
    const auto base = at("demos", n);
    ds.demos.emplace_back(states(require(demos[n], "states", base), at(base, "states"), dim), dt);
    std::optional<int> label;
    if (demos[n].contains("label") && !demos[n]["label"].is_null()) {
      const auto& l = demos[n]["label"];
      if (!l.is_number_integer()) throw SchemaError(at(base, "label"), "expected an integer or null");
      label = l.get<int>();
      any_label = true;
    }
    ds.labels.push_back(label);
  }
  if (!any_label) ds.labels.clear();
  return ds;
}

Dataset load_dataset(const std::filesystem::path& path) { return dataset_from_json(read_file(path)); }

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  write_file(path, dataset_to_json(dataset));
}

std::string model_to_json(const ClusterModel& model) {
  validate(model);
  json clusters = json::array();
  for (const auto& m : model.means) {
    clusters.push_back(json{{"states", to_json(m.states())},
                            {"dt", m.dt()},
                            {"speeds", m.speeds()},
                            {"emission_cov", to_json(m.emission_cov())}});
  }
  json j{{"clusters", std::move(clusters)}, {"meta", meta_to_json(model)}};
  return j.dump(1) + "\n";
}

ClusterModel model_from_json(std::string_view text) {
  const json j = parse(text);
  const json& clusters = require(j, "clusters", "");
  if (!clusters.is_array() || clusters.empty()) throw SchemaError("clusters", "expected a non-empty array");
  ClusterModel model;
  Eigen::Index dim = -1;
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    const auto base = at("clusters", c);
    const auto& cj = clusters[c];
    auto st = states(require(cj, "states", base), at(base, "states"), dim);
    const double dt = positive(require(cj, "dt", base), at(base, "dt"));

    const auto cov_field = at(base, "emission_cov");
    const json& cov_j = require(cj, "emission_cov", base);
    if (!cov_j.is_array() || static_cast<Eigen::Index>(cov_j.size()) != dim) {
      throw DimensionError(cov_field, "expected a " + std::to_string(dim) + "x" + std::to_string(dim) + " matrix");
    }
    Eigen::MatrixXd cov(dim, dim);
    for (Eigen::Index r = 0; r < dim; ++r) {
      const auto row = point(cov_j[static_cast<std::size_t>(r)], at(cov_field, static_cast<std::size_t>(r)));
      if (row.size() != dim) {
        throw DimensionError(at(cov_field, static_cast<std::size_t>(r)),
                             "expected " + std::to_string(dim) + " entries");
      }
      cov.row(r) = row.transpose();
    }
    if (!is_symmetric_positive_definite(cov)) throw SchemaError(cov_field, "must be symmetric positive-definite");

    MeanTrajectory mean(std::move(st), dt, cov);
    if (cj.contains("speeds")) {
      const auto speeds_field = at(base, "speeds");
      const auto speeds = numbers(cj["speeds"], speeds_field);
      if (speeds.size() != mean.size()) {
        throw DimensionError(speeds_field, "has " + std::to_string(speeds.size()) + " entries, expected " +
                                               std::to_string(mean.size()));
      }
      for (std::size_t i = 0; i < speeds.size(); ++i) {
        const double expect = mean.speeds()[i];
        if (std::abs(speeds[i] - expect) > 1e-9 * std::max(1.0, std::abs(expect))) {
          throw SchemaError(at(speeds_field, i), "does not match the state spacing over dt");
        }
      }
    }
    model.means.push_back(std::move(mean));
  }
  if (j.contains("meta")) meta_from_json(j["meta"], model);
  return model;
}

ClusterModel load_model(const std::filesystem::path& path) { return model_from_json(read_file(path)); }

void save_model(const ClusterModel& model, const std::filesystem::path& path) {
  write_file(path, model_to_json(model));
}

std::vector<sim::PerturbationEvent> perturbations_from_json(std::string_view text, Eigen::Index dim) {
  const json j = parse(text);
  if (!j.is_array()) throw SchemaError("$", "expected an array of events");
  std::vector<sim::PerturbationEvent> out;
  for (std::size_t n = 0; n < j.size(); ++n) {
    const auto base = at("", n);
    const auto& tick = require(j[n], "tick", base);
    if (!tick.is_number_integer() || tick.get<long long>() < 0) {
      throw SchemaError(at(base, "tick"), "expected a non-negative integer");
    }
    sim::PerturbationEvent ev;
    ev.tick = tick.get<std::size_t>();
    try {
      ev.mode = sim::parse_perturbation_mode(get_as<std::string>(require(j[n], "mode", base), at(base, "mode")));
    } catch (const InvalidArgument& e) {
      throw SchemaError(at(base, "mode"), e.what());
    }
    ev.vector = point(require(j[n], "vector", base), at(base, "vector"));
    if (ev.vector.size() != dim) {
      throw DimensionError(at(base, "vector"), "has dimension " + std::to_string(ev.vector.size()) +
                                                   ", expected " + std::to_string(dim));
    }
    out.push_back(std::move(ev));
  }
  return out;
}

std::vector<sim::PerturbationEvent> load_perturbations(const std::filesystem::path& path, Eigen::Index dim) {
  return perturbations_from_json(read_file(path), dim);
}

std::string rollout_to_csv(const sim::RolloutResult& result) {
  std::string out = "t";
  const Eigen::Index d = result.positions.empty() ? 0 : result.positions.front().size();
  for (Eigen::Index i = 0; i < d; ++i) out += ",x" + std::to_string(i);
  out += ",cluster,kv,phase\n";
  for (std::size_t k = 0; k < result.positions.size(); ++k) {
    out += format_double(static_cast<double>(k) * result.dt);
    for (Eigen::Index i = 0; i < d; ++i) out += "," + format_double(result.positions[k](i));
    out += "," + std::to_string(result.cluster_trace[k]);
    out += "," + format_double(result.kv_trace[k]);
    out += "," + format_double(result.phase_trace[k]);
    out += "\n";
  }
  return out;
}

void save_rollout_csv(const sim::RolloutResult& result, const std::filesystem::path& path) {
  write_file(path, rollout_to_csv(result));
}

std::string report_to_json(const sim::EvaluationReport& report) {
  json demos = json::array();
  for (const auto& e : report.demos) {
    json d{{"demo", e.demo},
           {"dtwd", number_or_null(e.dtwd)},
           {"converged", e.converged},
           {"ticks", e.ticks},
           {"terminal_cluster", e.terminal_cluster ? json(*e.terminal_cluster) : json(nullptr)},
           {"label", e.label ? json(*e.label) : json(nullptr)},
           {"predicted_label", e.predicted_label ? json(*e.predicted_label) : json(nullptr)}};
    if (!e.error.empty()) d["error"] = e.error;
    demos.push_back(std::move(d));
  }
  json cluster_labels = json::array();
  for (const auto& l : report.cluster_labels) cluster_labels.push_back(l ? json(*l) : json(nullptr));

  json j{{"dataset", report.dataset},
         {"dtwd_normalization", "none (raw accumulated cost)"},
         {"demos", std::move(demos)},
         {"mean_dtwd", number_or_null(report.mean_dtwd)},
         {"cluster_labels", std::move(cluster_labels)}};
  if (report.labeled > 0) {
    j["terminal_cluster_accuracy"] = json{
        {"matches", report.label_matches},
        {"labeled", report.labeled},
        {"fraction", static_cast<double>(report.label_matches) / static_cast<double>(report.labeled)}};
  }
  j["config"] = json{{"kernel", kernel_echo(report.kernels)},
                     {"controller",
                      {{"kv_perturbed", report.controller.kv_perturbed},
                       {"blend_sigma", report.controller.blend_sigma},
                       {"control_dt", report.controller.control_dt},
                       {"grad_floor", report.controller.grad_floor},
                       {"hysteresis", report.controller.hysteresis}}},
                     {"rollout",
                      {{"max_ticks", report.rollout.max_ticks},
                       {"convergence_factor", report.rollout.convergence_factor},
                       {"absorb_threshold", report.rollout.absorb_threshold}}}};
  j["reference_mean_dtwd"] = json{
      {"values", {{"messy_snake", 48.48}, {"overlap", 17.12}, {"multi_motion", 12.77}}},
      {"comparable", false},
      {"note", "published figures on different, unreleased data; shown for scale only"}};
  j["perturbations"] = "discrete scripted events (set_position/offset), not continuous pushes";
  return j.dump(1) + "\n";
}

void save_report(const sim::EvaluationReport& report, const std::filesystem::path& path) {
  write_file(path, report_to_json(report));
}

}  // namespace calm::io
