#pragma once

#include "dyvec/extract.hpp"
#include "dyvec/model.hpp"

#include <compare>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace dyvec {

// Aggregated latents cut into S contiguous segments per layer. Segment (i, j)
// holds components [j * d/S, (j + 1) * d/S) of layer i.
struct SegmentGrid {
  int n_layers = 0;
  int d_model = 0;
  int granularity = 1;
  std::vector<float> values;  // [n_layers, d_model], same layout as the latent
  std::string model_hash;
  std::uint64_t task_id = 0;
  std::string extraction;  // JSON summary of the latent the grid came from

  int d_segment() const { return d_model / granularity; }
  std::span<const float> segment(int layer, int seg) const;
};

// Throws Error(kNotDivisible) when S does not divide d.
SegmentGrid segment(const extract::LatentTensor& latent, int granularity,
                    std::uint64_t task_id = 0);

struct Position {
  int layer = 0;
  int segment = 0;
  auto operator<=>(const Position&) const = default;
};

// Sorted lexicographically, no duplicates.
using PositionSet = std::vector<Position>;

PositionSet make_position_set(std::vector<Position> positions);
std::vector<Position> all_positions(int n_layers, int granularity);

// Injection strategy O' = alpha * O + beta * mu. Strict validation keeps
// alpha in {0, 1} and beta >= 0; relaxed mode only requires finite values.
struct Strategy {
  float alpha = 0.0f;
  float beta = 1.0f;

  void validate(bool relaxed = false) const;
  bool operator==(const Strategy&) const = default;
};

// The candidate (alpha, beta) pairs observed to work best across tasks.
std::vector<Strategy> default_strategy_candidates();

struct DyVecArtifact {
  int n_layers = 0;
  int d_model = 0;
  int granularity = 1;
  PositionSet positions;
  std::vector<std::vector<float>> segments;  // one per position, same order
  Strategy strategy;
  std::string model_hash;
  std::uint64_t task_id = 0;
  std::string extraction;

  int d_segment() const { return d_model / granularity; }
  bool operator==(const DyVecArtifact&) const = default;
};

// Picks the segments at `positions`. Throws Error(kEmptyInput) for an empty
// set and Error(kOutOfRange) for positions outside the grid.
DyVecArtifact assemble(const SegmentGrid& grid, const PositionSet& positions,
                       const Strategy& strategy);

// Keeps the positions and strategy of `donor` and takes segment values from
// `grid`. Requires equal granularity and model hash.
DyVecArtifact transfer(const SegmentGrid& grid, const DyVecArtifact& donor);

model::InjectionPlan to_injection_plan(const DyVecArtifact& artifact);

std::string artifact_manifest(const DyVecArtifact& artifact);
std::vector<float> artifact_blob(const DyVecArtifact& artifact);
void save_artifact(const DyVecArtifact& artifact, const std::string& path);
DyVecArtifact load_artifact(const std::string& path);

}  // namespace dyvec
