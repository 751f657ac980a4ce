#include "dyvec/extract.hpp"

#include "dyvec/blob_io.hpp"
#include "dyvec/error.hpp"

#include <json.hpp>

#include <cmath>

namespace dyvec::extract {

using nlohmann::json;

const char* to_string(Source source) {
  return source == Source::kSar ? "SAR" : "AHA";
}

Source source_from_string(const std::string& name) {
  if (name == "SAR" || name == "sar") return Source::kSar;
  if (name == "AHA" || name == "aha") return Source::kAha;
  throw Error(ErrorCode::kInvalidArgument, "unknown latent source: " + name);
}

model::HookSite hook_site(Source source) {
  return source == Source::kSar ? model::HookSite::kPostWo : model::HookSite::kPreWo;
}

std::span<const float> LatentTensor::layer(int i) const {
  require(i >= 0 && i < n_layers, ErrorCode::kOutOfRange, "latent layer out of range");
  return std::span<const float>(values).subspan(static_cast<std::size_t>(i) * d_model,
                                                static_cast<std::size_t>(d_model));
}

void LatentTensor::validate() const {
  require(n_layers >= 1 && d_model >= 1, ErrorCode::kShapeMismatch, "latent shape must be positive");
  require(values.size() == static_cast<std::size_t>(n_layers) * d_model, ErrorCode::kShapeMismatch,
          "latent values do not match L x d");
  for (float v : values) {
    require(std::isfinite(v), ErrorCode::kNonFinite, "latent contains a non-finite value");
  }
  require(n_prompts >= 1, ErrorCode::kInvalidArgument, "latent must aggregate at least one prompt");
}

std::vector<LatentTensor> extract_latents(const model::Model& model,
                                          const taskgen::PromptSet& prompts, Source source) {
  require(prompts.size() > 0, ErrorCode::kEmptyInput, "prompt set is empty");
  const auto& cfg = model.config();
  std::vector<model::HookPoint> taps;
  for (int i = 0; i < cfg.n_layers; ++i) {
    taps.push_back({i, hook_site(source), model::TokenSelect::kLast});
  }
  model::ForwardOptions options;
  options.taps = taps;
  options.last_logits_only = true;
  const std::string hash = model.content_hash();

  std::vector<LatentTensor> out;
  out.reserve(prompts.size());
  for (const auto& prompt : prompts.prompts) {
    const auto result = model.forward(prompt, options);
    LatentTensor t;
    t.n_layers = cfg.n_layers;
    t.d_model = cfg.d_model;
    t.source = source;
    t.mode = prompts.mode;
    t.model_hash = hash;
    t.values.reserve(static_cast<std::size_t>(cfg.n_layers) * cfg.d_model);
    for (const auto& tap : taps) {
      const auto& v = result.captures.at(tap);
      t.values.insert(t.values.end(), v.begin(), v.end());
    }
    out.push_back(std::move(t));
  }
  return out;
}

LatentTensor aggregate(std::span<const LatentTensor> latents) {
  require(!latents.empty(), ErrorCode::kEmptyInput, "nothing to aggregate");
  const LatentTensor& first = latents.front();
  first.validate();
  std::vector<double> sum(first.values.size(), 0.0);
  for (const auto& t : latents) {
    require(t.n_layers == first.n_layers && t.d_model == first.d_model &&
                t.values.size() == first.values.size(),
            ErrorCode::kShapeMismatch, "latents have different shapes");
    require(t.source == first.source, ErrorCode::kShapeMismatch, "latents have different sources");
    require(t.model_hash == first.model_hash, ErrorCode::kHashMismatch,
            "latents come from different models");
    for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += t.values[k];
  }
  LatentTensor out = first;
  const double n = static_cast<double>(latents.size());
  for (std::size_t k = 0; k < sum.size(); ++k) out.values[k] = static_cast<float>(sum[k] / n);
  out.n_prompts = static_cast<int>(latents.size());
  return out;
}

std::string latent_manifest(const LatentFile& file) {
  const auto& t = file.latent;
  json j;
  j["format"] = "dyvec-latent";
  j["version"] = 1;
  j["n_layers"] = t.n_layers;
  j["d_model"] = t.d_model;
  j["source"] = to_string(t.source);
  j["mode"] = taskgen::to_string(t.mode);
  j["n_prompts"] = t.n_prompts;
  j["model_hash"] = t.model_hash;
  j["task"] = json::parse(taskgen::task_to_json(file.task, &file.examples));
  return j.dump(2);
}

void save_latent(const LatentFile& file, const std::string& path) {
  file.latent.validate();
  write_blob_file(path, "latent", latent_manifest(file), file.latent.values);
}

LatentFile load_latent(const std::string& path) {
  BlobFile blob = read_blob_file(path, "latent");
  try {
    const json j = json::parse(blob.manifest);
    LatentFile file;
    auto& t = file.latent;
    t.n_layers = j.at("n_layers").get<int>();
    t.d_model = j.at("d_model").get<int>();
    t.source = source_from_string(j.at("source").get<std::string>());
    const auto mode = j.at("mode").get<std::string>();
    require(mode == "EQR" || mode == "SHUFFLE", ErrorCode::kFormat, "unknown extraction mode " + mode);
    t.mode = mode == "EQR" ? taskgen::PromptMode::kRotation : taskgen::PromptMode::kShuffle;
    t.n_prompts = j.at("n_prompts").get<int>();
    t.model_hash = j.at("model_hash").get<std::string>();
    t.values = std::move(blob.blob);
    t.validate();
    const std::string task = j.at("task").dump();
    file.task = taskgen::task_from_json(task);
    file.examples = taskgen::examples_from_json(task);
    return file;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormat, std::string("latent manifest: ") + e.what());
  }
}

}  // namespace dyvec::extract
