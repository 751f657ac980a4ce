#include "dyvec/model.hpp"

#include "dyvec/error.hpp"
#include "dyvec/hash.hpp"
#include "nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

namespace dyvec::model {

void ModelConfig::validate() const {
  require(n_layers >= 1 && n_heads >= 1 && d_model >= 1 && vocab_size >= 1 && max_seq_len >= 1 &&
              mlp_ratio >= 1,
          ErrorCode::kInvalidArgument, "model config counts must be >= 1");
  require(d_model % n_heads == 0, ErrorCode::kNotDivisible,
          "d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" +
              std::to_string(n_heads) + ")");
}

void InjectionPlan::validate(const ModelConfig& config) const {
  require(granularity >= 1, ErrorCode::kInvalidArgument, "granularity must be >= 1");
  require(config.d_model % granularity == 0, ErrorCode::kNotDivisible,
          "granularity " + std::to_string(granularity) + " does not divide d_model " +
              std::to_string(config.d_model));
  const std::size_t width = static_cast<std::size_t>(config.d_model / granularity);
  std::set<std::pair<int, int>> seen;
  for (const auto& e : entries) {
    require(e.layer >= 0 && e.layer < config.n_layers, ErrorCode::kOutOfRange,
            "injection layer " + std::to_string(e.layer) + " out of range");
    require(e.segment >= 0 && e.segment < granularity, ErrorCode::kOutOfRange,
            "injection segment " + std::to_string(e.segment) + " out of range");
    require(e.vector.size() == width, ErrorCode::kSegmentMismatch,
            "segment vector has length " + std::to_string(e.vector.size()) + ", expected " +
                std::to_string(width));
    require(seen.insert({e.layer, e.segment}).second, ErrorCode::kInvalidArgument,
            "duplicate injection position (" + std::to_string(e.layer) + ", " +
                std::to_string(e.segment) + ")");
  }
}

ParamLayout ParamLayout::make(const ModelConfig& c) {
  c.validate();
  ParamLayout p;
  std::size_t off = 0;
  auto take = [&off](int rows, int cols) {
    Block b{off, rows, cols};
    off += b.size();
    return b;
  };
  const int d = c.d_model;
  const int f = c.d_ff();
  p.tok_emb = take(c.vocab_size, d);
  p.pos_emb = take(c.max_seq_len, d);
  for (int l = 0; l < c.n_layers; ++l) {
    LayerBlocks lb;
    lb.w_q = take(d, d);
    lb.w_k = take(d, d);
    lb.w_v = take(d, d);
    lb.w_o = take(d, d);
    lb.w_fc = take(d, f);
    lb.b_fc = take(1, f);
    lb.w_proj = take(f, d);
    lb.b_proj = take(1, d);
    lb.ln1_g = take(1, d);
    lb.ln1_b = take(1, d);
    lb.ln2_g = take(1, d);
    lb.ln2_b = take(1, d);
    p.layers.push_back(lb);
  }
  p.lnf_g = take(1, d);
  p.lnf_b = take(1, d);
  p.head = take(d, c.vocab_size);
  p.total = off;
  return p;
}

std::vector<std::pair<std::string, Block>> ParamLayout::named_blocks() const {
  std::vector<std::pair<std::string, Block>> out{{"tok_emb", tok_emb}, {"pos_emb", pos_emb}};
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& b = layers[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    out.insert(out.end(), {{p + "w_q", b.w_q},       {p + "w_k", b.w_k},
                           {p + "w_v", b.w_v},       {p + "w_o", b.w_o},
                           {p + "w_fc", b.w_fc},     {p + "b_fc", b.b_fc},
                           {p + "w_proj", b.w_proj}, {p + "b_proj", b.b_proj},
                           {p + "ln1_g", b.ln1_g},   {p + "ln1_b", b.ln1_b},
                           {p + "ln2_g", b.ln2_g},   {p + "ln2_b", b.ln2_b}});
  }
  out.insert(out.end(), {{"lnf_g", lnf_g}, {"lnf_b", lnf_b}, {"head", head}});
  return out;
}

Model::Model(const ModelConfig& config)
    : config_(config), layout_(ParamLayout::make(config)), params_(layout_.total, 0.0f) {
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<float> normal(0.0f, 0.02f);
  const float proj_std = 0.02f / std::sqrt(2.0f * static_cast<float>(config.n_layers));
  std::normal_distribution<float> proj_normal(0.0f, proj_std);
  auto fill = [&](const Block& b, auto& dist) {
    for (std::size_t i = 0; i < b.size(); ++i) params_[b.offset + i] = dist(rng);
  };
  auto fill_const = [&](const Block& b, float v) {
    std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(b.offset), b.size(), v);
  };
  fill(layout_.tok_emb, normal);
  fill(layout_.pos_emb, normal);
  for (const auto& lb : layout_.layers) {
    fill(lb.w_q, normal);
    fill(lb.w_k, normal);
    fill(lb.w_v, normal);
    fill(lb.w_o, proj_normal);
    fill(lb.w_fc, normal);
    fill(lb.w_proj, proj_normal);
    fill_const(lb.ln1_g, 1.0f);
    fill_const(lb.ln2_g, 1.0f);
  }
  fill_const(layout_.lnf_g, 1.0f);
  fill(layout_.head, normal);
}

Model::Model(const ModelConfig& config, std::vector<float> params, TrainingInfo info)
    : config_(config), layout_(ParamLayout::make(config)), params_(params.begin(), params.end()), info_(info) {
  require(params_.size() == layout_.total, ErrorCode::kShapeMismatch,
          "parameter blob has " + std::to_string(params_.size()) + " values, expected " +
              std::to_string(layout_.total));
}

ConstMatrixMap Model::w_o(int layer) const {
  require(layer >= 0 && layer < config_.n_layers, ErrorCode::kOutOfRange, "layer out of range");
  return view(parameters(), layout_.layers[static_cast<std::size_t>(layer)].w_o);
}

ForwardResult Model::forward(std::span<const Token> tokens, std::span<const HookPoint> taps,
                             const InjectionPlan* plan) const {
  ForwardOptions options;
  options.taps = taps;
  options.plan = plan;
  return forward(tokens, options);
}

namespace {

void capture(std::map<HookPoint, std::vector<float>>& out, std::span<const HookPoint> taps,
             int layer, HookSite site, const Matrix& m) {
  for (const auto& tap : taps) {
    if (tap.layer != layer || tap.site != site) continue;
    std::vector<float> v;
    if (tap.tokens == TokenSelect::kLast) {
      const auto row = m.row(m.rows() - 1);
      v.assign(row.data(), row.data() + row.size());
    } else {
      v.assign(m.data(), m.data() + m.size());
    }
    out[tap] = std::move(v);
  }
}

}  // namespace

ForwardResult Model::forward(std::span<const Token> tokens, const ForwardOptions& options) const {
  const int seq = static_cast<int>(tokens.size());
  require(seq > 0, ErrorCode::kEmptyInput, "token sequence is empty");
  require(seq <= config_.max_seq_len, ErrorCode::kSequenceTooLong,
          "sequence of " + std::to_string(seq) + " tokens exceeds max_seq_len " +
              std::to_string(config_.max_seq_len));
  for (Token t : tokens) {
    require(t >= 0 && t < config_.vocab_size, ErrorCode::kOutOfRange,
            "token " + std::to_string(t) + " outside vocabulary");
  }
  for (const auto& tap : options.taps) {
    require(tap.layer >= 0 && tap.layer < config_.n_layers, ErrorCode::kOutOfRange,
            "hook layer " + std::to_string(tap.layer) + " out of range");
  }
  if (options.plan) options.plan->validate(config_);
  if (options.residual_edit) {
    const auto& e = *options.residual_edit;
    require(e.layer >= 0 && e.layer < config_.n_layers, ErrorCode::kOutOfRange,
            "residual edit layer " + std::to_string(e.layer) + " out of range");
    require(e.vector.size() == static_cast<std::size_t>(config_.d_model),
            ErrorCode::kShapeMismatch, "residual edit vector must have length d_model");
  }
  const int edit_begin = options.edit_from < 0 ? seq - 1 : std::min(options.edit_from, seq - 1);
  const int edit_end = options.edit_to < 0 ? seq - 1 : std::min(options.edit_to, seq - 1);

  const int d = config_.d_model;
  const int dh = config_.d_head();
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
  const auto params = parameters();

  ForwardResult result;
  Matrix x(seq, d);
  const auto tok_emb = view(params, layout_.tok_emb);
  const auto pos_emb = view(params, layout_.pos_emb);
  for (int t = 0; t < seq; ++t) x.row(t) = tok_emb.row(tokens[t]) + pos_emb.row(t);

  Matrix h(seq, d), q(seq, d), k(seq, d), v(seq, d), a(seq, d), o(seq, d);
  Matrix scores(seq, seq);
  Matrix u(seq, config_.d_ff());
  for (int l = 0; l < config_.n_layers; ++l) {
    const auto& lb = layout_.layers[static_cast<std::size_t>(l)];
    nn::layer_norm(x, view(params, lb.ln1_g), view(params, lb.ln1_b), h);
    q.noalias() = h * view(params, lb.w_q);
    k.noalias() = h * view(params, lb.w_k);
    v.noalias() = h * view(params, lb.w_v);
    for (int head = 0; head < config_.n_heads; ++head) {
      const int c0 = head * dh;
      scores.noalias() = q.middleCols(c0, dh) * k.middleCols(c0, dh).transpose();
      scores *= scale;
      nn::causal_softmax(scores);
      a.middleCols(c0, dh).noalias() = scores * v.middleCols(c0, dh);
    }
    capture(result.captures, options.taps, l, HookSite::kPreWo, a);
    o.noalias() = a * view(params, lb.w_o);
    if (options.plan) {
      const int width = d / options.plan->granularity;
      for (const auto& e : options.plan->entries) {
        if (e.layer != l) continue;
        const Eigen::Map<const RowVector> mu(e.vector.data(), width);
        for (int r = edit_begin; r <= edit_end; ++r) {
          auto slice = o.row(r).segment(e.segment * width, width);
          slice = e.alpha * slice + e.beta * mu;
        }
      }
    }
    capture(result.captures, options.taps, l, HookSite::kPostWo, o);
    x += o;
    nn::layer_norm(x, view(params, lb.ln2_g), view(params, lb.ln2_b), h);
    u.noalias() = h * view(params, lb.w_fc);
    u.rowwise() += view(params, lb.b_fc).row(0);
    u = nn::gelu(u);
    x.noalias() += u * view(params, lb.w_proj);
    x.rowwise() += view(params, lb.b_proj).row(0);
    if (options.residual_edit && options.residual_edit->layer == l) {
      const auto& e = *options.residual_edit;
      const Eigen::Map<const RowVector> vec(e.vector.data(), d);
      for (int r = edit_begin; r <= edit_end; ++r) {
        if (e.mode == ResidualEditMode::kReplace) {
          x.row(r) = vec;
        } else {
          x.row(r) += e.scale * vec;
        }
      }
    }
    capture(result.captures, options.taps, l, HookSite::kResidPost, x);
  }
  const int first = options.last_logits_only ? seq - 1 : 0;
  const int rows = seq - first;
  Matrix hf(rows, d);
  auto tail = x.bottomRows(rows);
  nn::layer_norm(tail, view(params, layout_.lnf_g), view(params, layout_.lnf_b), hf);
  result.logits.noalias() = hf * view(params, layout_.head);
  return result;
}

TokenSequence Model::generate(std::span<const Token> prompt, int n_new, const InjectionPlan* plan,
                              bool inject_every_step) const {
  require(!prompt.empty(), ErrorCode::kEmptyInput, "prompt is empty");
  TokenSequence seq(prompt.begin(), prompt.end());
  const int prompt_last = static_cast<int>(prompt.size()) - 1;
  TokenSequence out;
  for (int step = 0; step < n_new; ++step) {
    ForwardOptions options;
    options.last_logits_only = true;
    options.plan = plan;
    // No KV cache: the prompt is recomputed each step, so re-editing the
    // final prompt position reproduces a single injection.
    options.edit_from = prompt_last;
    options.edit_to = inject_every_step ? -1 : prompt_last;
    const ForwardResult r = forward(seq, options);
    const Token next = argmax(std::span<const float>(r.logits.data(), r.logits.cols()));
    out.push_back(next);
    seq.push_back(next);
  }
  return out;
}

std::string Model::content_hash() const {
  std::ostringstream cfg;
  cfg << "L=" << config_.n_layers << ";H=" << config_.n_heads << ";d=" << config_.d_model
      << ";V=" << config_.vocab_size << ";T=" << config_.max_seq_len << ";R=" << config_.mlp_ratio
      << ";seed=" << config_.seed << ";";
  Sha256 h;
  h.update(cfg.str());
  h.update_pod(std::span<const float>(params_));
  return h.hex_digest();
}

Token argmax(std::span<const float> logits) {
  require(!logits.empty(), ErrorCode::kEmptyInput, "empty logits");
  return static_cast<Token>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

}  // namespace dyvec::model
