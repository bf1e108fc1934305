#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "calm/clustering.hpp"
#include "calm/dataset.hpp"
#include "calm/sim.hpp"

// JSON and CSV formats. Doubles are written in shortest round-trip form, so
// load(save(x)) reproduces every number exactly and equal inputs give
// byte-identical files.
//
// Parse failures throw SchemaError naming the offending field (for example
// "demos[2].states" or "clusters[0].emission_cov"), dimension disagreements
// throw DimensionError, and unreadable files throw FileError.

namespace calm::io {

std::string dataset_to_json(const Dataset& dataset);
Dataset dataset_from_json(std::string_view text);
Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);

std::string model_to_json(const ClusterModel& model);
ClusterModel model_from_json(std::string_view text);
ClusterModel load_model(const std::filesystem::path& path);
void save_model(const ClusterModel& model, const std::filesystem::path& path);

/// `[{"tick": int, "mode": "set_position"|"offset", "vector": [...]}]`.
std::vector<sim::PerturbationEvent> perturbations_from_json(std::string_view text, Eigen::Index dim);
std::vector<sim::PerturbationEvent> load_perturbations(const std::filesystem::path& path, Eigen::Index dim);

/// Header `t,x0..x{d-1},cluster,kv,phase`, one row per tick.
std::string rollout_to_csv(const sim::RolloutResult& result);
void save_rollout_csv(const sim::RolloutResult& result, const std::filesystem::path& path);

std::string report_to_json(const sim::EvaluationReport& report);
void save_report(const sim::EvaluationReport& report, const std::filesystem::path& path);

/// Shortest decimal string that parses back to exactly `v`.
std::string format_double(double v);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace calm::io
