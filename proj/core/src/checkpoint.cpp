#include "dyvec/checkpoint.hpp"

#include "dyvec/blob_io.hpp"
#include "dyvec/error.hpp"

#include <json.hpp>

namespace dyvec::model {

using nlohmann::json;

std::string checkpoint_manifest(const Model& model) {
  const auto& c = model.config();
  json j;
  j["format"] = "dyvec-checkpoint";
  j["version"] = 1;
  j["config"] = {{"n_layers", c.n_layers},     {"n_heads", c.n_heads},
                 {"d_model", c.d_model},       {"d_head", c.d_head()},
                 {"vocab_size", c.vocab_size}, {"max_seq_len", c.max_seq_len},
                 {"mlp_ratio", c.mlp_ratio}};
  j["seed"] = c.seed;
  j["training_steps"] = model.training_info().steps;
  j["final_loss"] = model.training_info().final_loss;
  j["content_hash"] = model.content_hash();
  json order = json::array();
  for (const auto& [name, block] : model.layout().named_blocks()) {
    order.push_back({{"name", name}, {"rows", block.rows}, {"cols", block.cols}});
  }
  j["param_order"] = order;
  return j.dump(2);
}

void save_checkpoint(const Model& model, const std::string& path) {
  write_blob_file(path, "checkpoint", checkpoint_manifest(model), model.parameters());
}

Model load_checkpoint(const std::string& path) {
  BlobFile file = read_blob_file(path, "checkpoint");
  try {
    const json j = json::parse(file.manifest);
    const auto& jc = j.at("config");
    ModelConfig c;
    c.n_layers = jc.at("n_layers").get<int>();
    c.n_heads = jc.at("n_heads").get<int>();
    c.d_model = jc.at("d_model").get<int>();
    c.vocab_size = jc.at("vocab_size").get<int>();
    c.max_seq_len = jc.at("max_seq_len").get<int>();
    c.mlp_ratio = jc.at("mlp_ratio").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    TrainingInfo info{j.at("training_steps").get<std::int64_t>(), j.value("final_loss", 0.0)};
    Model model(c, std::move(file.blob), info);
    require(model.content_hash() == j.at("content_hash").get<std::string>(),
            ErrorCode::kHashMismatch, "checkpoint content hash does not match its weights: " + path);
    return model;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormat, std::string("checkpoint manifest: ") + e.what());
  }
}

}  // namespace dyvec::model
