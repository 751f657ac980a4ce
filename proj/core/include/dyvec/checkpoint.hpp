#pragma once

#include "dyvec/model.hpp"

#include <string>

namespace dyvec::model {

// Checkpoint = container kind "checkpoint": manifest with config fields,
// seed, training-step count, parameter order and content hash, followed by
// the parameter blob in ParamLayout order.
std::string checkpoint_manifest(const Model& model);
void save_checkpoint(const Model& model, const std::string& path);
// Verifies the stored content hash against the loaded weights.
Model load_checkpoint(const std::string& path);

}  // namespace dyvec::model
