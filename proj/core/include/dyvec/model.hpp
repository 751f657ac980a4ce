#pragma once

#include "dyvec/tensor.hpp"

#include <compare>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace dyvec::model {

struct ModelConfig {
  int n_layers = 4;
  int n_heads = 4;
  int d_model = 128;
  int vocab_size = 64;
  int max_seq_len = 176;
  int mlp_ratio = 4;
  std::uint64_t seed = 0;

  int d_head() const { return d_model / n_heads; }
  int d_ff() const { return mlp_ratio * d_model; }

  // Throws Error(kInvalidArgument) when a count is < 1 or d_model % n_heads != 0.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

// Where a hook reads or writes inside a block.
//   kPreWo    concatenated per-head attention outputs A (input to W^O)
//   kPostWo   projected attention output O = A W^O, before the residual add
//   kResidPost residual stream after the whole block (used by TV/FV baselines)
enum class HookSite { kPreWo, kPostWo, kResidPost };
enum class TokenSelect { kLast, kAll };

struct HookPoint {
  int layer = 0;
  HookSite site = HookSite::kPostWo;
  TokenSelect tokens = TokenSelect::kLast;

  auto operator<=>(const HookPoint&) const = default;
};

// One edit of the projected attention output: slice `segment` of width d/S
// becomes alpha * original + beta * vector.
struct InjectionEntry {
  int layer = 0;
  int segment = 0;
  std::vector<float> vector;
  float alpha = 1.0f;
  float beta = 0.0f;
};

struct InjectionPlan {
  int granularity = 1;
  std::vector<InjectionEntry> entries;

  // Throws on out-of-range layers/segments, S not dividing d, wrong vector
  // lengths, or duplicate (layer, segment) pairs.
  void validate(const ModelConfig& config) const;
};

enum class ResidualEditMode { kReplace, kAdd };

// Edit of the last-token residual stream after block `layer`.
struct ResidualEdit {
  int layer = 0;
  ResidualEditMode mode = ResidualEditMode::kAdd;
  std::vector<float> vector;
  float scale = 1.0f;
};

struct ForwardOptions {
  std::span<const HookPoint> taps;
  const InjectionPlan* plan = nullptr;
  const ResidualEdit* residual_edit = nullptr;
  // Edits apply to token positions in [edit_from, edit_to]; -1 selects the
  // last token for either bound.
  int edit_from = -1;
  int edit_to = -1;
  // Compute logits for the final position only.
  bool last_logits_only = false;
};

struct ForwardResult {
  Matrix logits;  // [rows, vocab]; rows = seq or 1 with last_logits_only
  std::map<HookPoint, std::vector<float>> captures;
};

// Contiguous slice of the flat parameter vector viewed as a row-major matrix.
struct Block {
  std::size_t offset = 0;
  int rows = 0;
  int cols = 0;
  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

struct LayerBlocks {
  Block w_q, w_k, w_v, w_o;
  Block w_fc, b_fc, w_proj, b_proj;
  Block ln1_g, ln1_b, ln2_g, ln2_b;
};

// Fixed parameter order of the checkpoint blob: token and position
// embeddings; per layer Q, K, V, O, MLP (fc weight/bias, proj weight/bias),
// norms (ln1 gain/bias, ln2 gain/bias); final norm gain/bias; output head.
// Weights are stored [in, out] so that y = x W.
struct ParamLayout {
  Block tok_emb, pos_emb;
  std::vector<LayerBlocks> layers;
  Block lnf_g, lnf_b, head;
  std::size_t total = 0;

  static ParamLayout make(const ModelConfig& config);
  std::vector<std::pair<std::string, Block>> named_blocks() const;
};

inline MatrixMap view(std::span<float> params, const Block& b) {
  return MatrixMap(params.data() + b.offset, b.rows, b.cols);
}
inline ConstMatrixMap view(std::span<const float> params, const Block& b) {
  return ConstMatrixMap(params.data() + b.offset, b.rows, b.cols);
}

struct TrainingInfo {
  std::int64_t steps = 0;
  double final_loss = 0.0;
};

// Pre-norm GPT-style decoder with learned positional embeddings. Weights are
// immutable through the const interface; forward is reentrant.
class Model {
 public:
  // Randomly initialised from config.seed.
  explicit Model(const ModelConfig& config);
  Model(const ModelConfig& config, std::vector<float> params, TrainingInfo info = {});

  const ModelConfig& config() const { return config_; }
  const ParamLayout& layout() const { return layout_; }
  std::span<const float> parameters() const { return params_; }
  std::span<float> mutable_parameters() { return params_; }
  const TrainingInfo& training_info() const { return info_; }
  void set_training_info(const TrainingInfo& info) { info_ = info; }

  ConstMatrixMap w_o(int layer) const;

  ForwardResult forward(std::span<const Token> tokens, std::span<const HookPoint> taps = {},
                        const InjectionPlan* plan = nullptr) const;
  ForwardResult forward(std::span<const Token> tokens, const ForwardOptions& options) const;

  // Greedy decoding of n_new tokens without a KV cache. The plan is applied
  // at the step that consumes the final prompt token, or at every generated
  // step when inject_every_step is set.
  TokenSequence generate(std::span<const Token> prompt, int n_new,
                         const InjectionPlan* plan = nullptr,
                         bool inject_every_step = false) const;

  // SHA-256 over config fields and the parameter blob.
  std::string content_hash() const;

 private:
  ModelConfig config_;
  ParamLayout layout_;
  AlignedFloats params_;
  TrainingInfo info_;
};

Token argmax(std::span<const float> logits);

}  // namespace dyvec::model
