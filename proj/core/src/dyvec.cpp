#include "dyvec/dyvec.hpp"

#include "dyvec/blob_io.hpp"
#include "dyvec/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>

namespace dyvec {

using nlohmann::json;

std::span<const float> SegmentGrid::segment(int layer, int seg) const {
  require(layer >= 0 && layer < n_layers && seg >= 0 && seg < granularity, ErrorCode::kOutOfRange,
          "segment (" + std::to_string(layer) + ", " + std::to_string(seg) + ") outside the grid");
  const std::size_t offset = static_cast<std::size_t>(layer) * d_model +
                             static_cast<std::size_t>(seg) * d_segment();
  return std::span<const float>(values).subspan(offset, static_cast<std::size_t>(d_segment()));
}

SegmentGrid segment(const extract::LatentTensor& latent, int granularity, std::uint64_t task_id) {
  latent.validate();
  require(granularity >= 1, ErrorCode::kInvalidArgument, "granularity must be >= 1");
  require(latent.d_model % granularity == 0, ErrorCode::kNotDivisible,
          "granularity " + std::to_string(granularity) + " does not divide d_model " +
              std::to_string(latent.d_model));
  SegmentGrid grid;
  grid.n_layers = latent.n_layers;
  grid.d_model = latent.d_model;
  grid.granularity = granularity;
  grid.values = latent.values;
  grid.model_hash = latent.model_hash;
  grid.task_id = task_id;
  grid.extraction = json{{"source", extract::to_string(latent.source)},
                         {"mode", taskgen::to_string(latent.mode)},
                         {"n_prompts", latent.n_prompts}}
                        .dump();
  return grid;
}

PositionSet make_position_set(std::vector<Position> positions) {
  std::sort(positions.begin(), positions.end());
  positions.erase(std::unique(positions.begin(), positions.end()), positions.end());
  return positions;
}

std::vector<Position> all_positions(int n_layers, int granularity) {
  std::vector<Position> out;
  for (int i = 0; i < n_layers; ++i) {
    for (int j = 0; j < granularity; ++j) out.push_back({i, j});
  }
  return out;
}

void Strategy::validate(bool relaxed) const {
  require(std::isfinite(alpha) && std::isfinite(beta), ErrorCode::kInvalidArgument,
          "strategy must be finite");
  if (!relaxed) {
    require(alpha == 0.0f || alpha == 1.0f, ErrorCode::kInvalidArgument,
            "alpha must be 0 or 1 unless relaxed strategies are enabled");
    require(beta >= 0.0f, ErrorCode::kInvalidArgument, "beta must be >= 0");
  }
}

std::vector<Strategy> default_strategy_candidates() {
  return {{0, 1}, {0, 2}, {0, 4}, {1, 1}, {1, 2}, {1, 4}};
}

DyVecArtifact assemble(const SegmentGrid& grid, const PositionSet& positions,
                       const Strategy& strategy) {
  require(!positions.empty(), ErrorCode::kEmptyInput, "a dynamic vector needs at least one position");
  DyVecArtifact a;
  a.n_layers = grid.n_layers;
  a.d_model = grid.d_model;
  a.granularity = grid.granularity;
  a.positions = make_position_set(positions);
  a.strategy = strategy;
  a.model_hash = grid.model_hash;
  a.task_id = grid.task_id;
  a.extraction = grid.extraction;
  for (const auto& p : a.positions) {
    const auto seg = grid.segment(p.layer, p.segment);
    a.segments.emplace_back(seg.begin(), seg.end());
  }
  return a;
}

DyVecArtifact transfer(const SegmentGrid& grid, const DyVecArtifact& donor) {
  require(grid.granularity == donor.granularity, ErrorCode::kSegmentMismatch,
          "transfer needs equal granularity");
  require(grid.model_hash == donor.model_hash, ErrorCode::kHashMismatch,
          "transfer needs segments from the same model");
  return assemble(grid, donor.positions, donor.strategy);
}

model::InjectionPlan to_injection_plan(const DyVecArtifact& artifact) {
  model::InjectionPlan plan;
  plan.granularity = artifact.granularity;
  for (std::size_t k = 0; k < artifact.positions.size(); ++k) {
    const auto& p = artifact.positions[k];
    plan.entries.push_back({p.layer, p.segment, artifact.segments[k], artifact.strategy.alpha,
                            artifact.strategy.beta});
  }
  return plan;
}

std::string artifact_manifest(const DyVecArtifact& a) {
  json j;
  j["format"] = "dyvec-artifact";
  j["version"] = 1;
  j["n_layers"] = a.n_layers;
  j["d_model"] = a.d_model;
  j["granularity"] = a.granularity;
  json pos = json::array();
  for (const auto& p : a.positions) pos.push_back({p.layer, p.segment});
  j["positions"] = pos;
  j["alpha"] = a.strategy.alpha;
  j["beta"] = a.strategy.beta;
  j["model_hash"] = a.model_hash;
  j["task_id"] = a.task_id;
  j["extraction"] = a.extraction.empty() ? json::object() : json::parse(a.extraction);
  return j.dump(2);
}

std::vector<float> artifact_blob(const DyVecArtifact& a) {
  std::vector<float> blob;
  for (const auto& s : a.segments) blob.insert(blob.end(), s.begin(), s.end());
  return blob;
}

void save_artifact(const DyVecArtifact& artifact, const std::string& path) {
  write_blob_file(path, "artifact", artifact_manifest(artifact), artifact_blob(artifact));
}

DyVecArtifact load_artifact(const std::string& path) {
  BlobFile file = read_blob_file(path, "artifact");
  try {
    const json j = json::parse(file.manifest);
    DyVecArtifact a;
    a.n_layers = j.at("n_layers").get<int>();
    a.d_model = j.at("d_model").get<int>();
    a.granularity = j.at("granularity").get<int>();
    require(a.granularity >= 1 && a.d_model % a.granularity == 0, ErrorCode::kFormat,
            "artifact granularity does not divide d_model");
    for (const auto& p : j.at("positions")) {
      a.positions.push_back({p.at(0).get<int>(), p.at(1).get<int>()});
    }
    require(!a.positions.empty(), ErrorCode::kFormat, "artifact has no positions");
    require(std::is_sorted(a.positions.begin(), a.positions.end()) &&
                std::adjacent_find(a.positions.begin(), a.positions.end()) == a.positions.end(),
            ErrorCode::kFormat, "artifact positions must be sorted and distinct");
    a.strategy = {j.at("alpha").get<float>(), j.at("beta").get<float>()};
    a.model_hash = j.at("model_hash").get<std::string>();
    a.task_id = j.at("task_id").get<std::uint64_t>();
    const auto& ex = j.at("extraction");
    a.extraction = ex.empty() ? std::string() : ex.dump();
    const std::size_t d_seg = static_cast<std::size_t>(a.d_segment());
    require(file.blob.size() == a.positions.size() * d_seg, ErrorCode::kFormat,
            "artifact blob size does not match its positions");
    for (std::size_t k = 0; k < a.positions.size(); ++k) {
      const auto& p = a.positions[k];
      require(p.layer >= 0 && p.layer < a.n_layers && p.segment >= 0 && p.segment < a.granularity,
              ErrorCode::kFormat, "artifact position outside the grid");
      a.segments.emplace_back(file.blob.begin() + static_cast<std::ptrdiff_t>(k * d_seg),
                              file.blob.begin() + static_cast<std::ptrdiff_t>((k + 1) * d_seg));
    }
    return a;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormat, std::string("artifact manifest: ") + e.what());
  }
}

}  // namespace dyvec
