#pragma once

#include "dyvec/model.hpp"
#include "dyvec/taskgen.hpp"

#include <span>
#include <string>
#include <vector>

namespace dyvec::extract {

// Where latents are read at the last prompt token.
//   kSar  projected MHA output O = A W^O (before the residual add)
//   kAha  concatenated per-head attention outputs A (input to W^O)
enum class Source { kSar, kAha };

const char* to_string(Source source);
Source source_from_string(const std::string& name);
model::HookSite hook_site(Source source);

// Per-layer latents, row-major [n_layers, d_model].
struct LatentTensor {
  int n_layers = 0;
  int d_model = 0;
  std::vector<float> values;
  Source source = Source::kSar;
  taskgen::PromptMode mode = taskgen::PromptMode::kRotation;
  int n_prompts = 1;
  std::string model_hash;

  std::span<const float> layer(int i) const;
  float at(int i, int c) const { return values[static_cast<std::size_t>(i) * d_model + c]; }

  // Throws on a shape mismatch or non-finite entries.
  void validate() const;
};

// One L x d tensor per prompt, read at the final prompt token.
std::vector<LatentTensor> extract_latents(const model::Model& model,
                                          const taskgen::PromptSet& prompts, Source source);

// Elementwise mean in double precision with a fixed sequential order.
// Requires a nonempty list with matching shapes, sources and models.
LatentTensor aggregate(std::span<const LatentTensor> latents);

// Latent file: the aggregate plus the task and example set it came from, so
// that later stages can rebuild their reward queries without hidden state.
struct LatentFile {
  LatentTensor latent;
  taskgen::TaskSpec task;
  taskgen::ExampleSet examples;
};

std::string latent_manifest(const LatentFile& file);
void save_latent(const LatentFile& file, const std::string& path);
LatentFile load_latent(const std::string& path);

}  // namespace dyvec::extract
