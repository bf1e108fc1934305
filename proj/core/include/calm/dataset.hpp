#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "calm/trajectory.hpp"

namespace calm {

/// A set of demonstrations sharing one dimension and sampling interval.
struct Dataset {
  std::string name;
  std::vector<Trajectory> demos;
  /// Ground-truth cluster per demo; empty when the dataset is unlabeled.
  std::vector<std::optional<int>> labels;

  double dt() const { return demos.front().dt(); }
  Eigen::Index dim() const { return demos.front().dim(); }
  bool has_labels() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Throws InvalidArgument unless the dataset is non-empty, all demos share
/// dimension and dt, and labels (when present) cover every demo.
void validate(const Dataset& dataset);

/// Synthetic 2D datasets.
///   overlap      - one self-crossing curve, 4 demos
///   multi_motion - two curves that cross, 3 demos each, labels 0/0/0/1/1/1
///   snake        - one high-curvature multi-turn curve, 5 demos
///   loop         - one closed circle for periodic playback, 4 demos
enum class DatasetKind { overlap, multi_motion, snake, loop };

DatasetKind parse_dataset_kind(std::string_view name);
std::string_view to_string(DatasetKind kind);

/// Per-demo variation. Every demo follows the nominal curve at constant speed
/// with a random start shift, a smooth low-frequency bend, a length jitter,
/// and i.i.d. noise on every state. Open curves slow down over their last
/// `ease_out` fraction of time to `end_speed` times the cruising speed; the
/// loop keeps its speed.
struct GeneratorParams {
  double dt = 0.05;
  double start_jitter = 0.08;
  double bend = 0.12;
  double noise = 0.01;
  double length_jitter = 0.05;
  double ease_out = 0.15;
  double end_speed = 0.2;
  /// Overrides the kind's default number of demos when set.
  std::optional<std::size_t> num_demos;
};

/// Pure function of (kind, seed, params).
Dataset generate_dataset(DatasetKind kind, std::uint64_t seed, const GeneratorParams& params = {});

/// Nominal self-crossing point of the overlap curve.
Point overlap_crossing_point();

}  // namespace calm
