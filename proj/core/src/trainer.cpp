#include "dyvec/trainer.hpp"

#include "dyvec/error.hpp"
#include "nn_ops.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace dyvec::model {
namespace {

struct LayerCache {
  Matrix xhat1, h1, q, k, v, a, xhat2, h2, u, g;
  Vector rstd1, rstd2;
  AlignedFloats probs;
};

// Packed multi-sequence forward/backward. All sequences of a batch are
// stacked row-wise so every linear layer is one GEMM; attention runs per
// sequence block.
class PackedPass {
 public:
  PackedPass(const Model& model, std::span<const taskgen::Episode> batch)
      : model_(model), cfg_(model.config()), layout_(model.layout()), batch_(batch) {
    rows_ = 0;
    std::size_t probs = 0;
    for (const auto& ep : batch) {
      const int len = static_cast<int>(ep.tokens.size());
      require(len > 0 && len <= cfg_.max_seq_len, ErrorCode::kSequenceTooLong,
              "episode length " + std::to_string(len) + " exceeds max_seq_len");
      require(ep.targets.size() == ep.tokens.size(), ErrorCode::kShapeMismatch,
              "episode targets must align with tokens");
      offsets_.push_back(rows_);
      prob_offsets_.push_back(probs);
      lengths_.push_back(len);
      rows_ += len;
      probs += static_cast<std::size_t>(cfg_.n_heads) * len * len;
      for (int t = 0; t < len; ++t) {
        if (ep.targets[static_cast<std::size_t>(t)] >= 0) {
          loss_rows_.push_back(offsets_.back() + t);
          loss_targets_.push_back(ep.targets[static_cast<std::size_t>(t)]);
        }
      }
    }
    prob_total_ = probs;
  }

  void forward(bool keep_all_logits) {
    const auto params = model_.parameters();
    const int d = cfg_.d_model;
    const int dh = cfg_.d_head();
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
    Matrix x(rows_, d);
    const auto tok = view(params, layout_.tok_emb);
    const auto pos = view(params, layout_.pos_emb);
    for (std::size_t b = 0; b < batch_.size(); ++b) {
      for (int t = 0; t < lengths_[b]; ++t) {
        x.row(offsets_[b] + t) = tok.row(batch_[b].tokens[static_cast<std::size_t>(t)]) + pos.row(t);
      }
    }
    caches_.resize(static_cast<std::size_t>(cfg_.n_layers));
    for (int l = 0; l < cfg_.n_layers; ++l) {
      const auto& lb = layout_.layers[static_cast<std::size_t>(l)];
      auto& c = caches_[static_cast<std::size_t>(l)];
      c.xhat1.resize(rows_, d);
      c.h1.resize(rows_, d);
      c.rstd1.resize(rows_);
      nn::layer_norm(x, view(params, lb.ln1_g), view(params, lb.ln1_b), c.h1, &c.xhat1, &c.rstd1);
      c.q.noalias() = c.h1 * view(params, lb.w_q);
      c.k.noalias() = c.h1 * view(params, lb.w_k);
      c.v.noalias() = c.h1 * view(params, lb.w_v);
      c.a.resize(rows_, d);
      c.probs.resize(prob_total_);
      for (std::size_t b = 0; b < batch_.size(); ++b) {
        const int o = offsets_[b];
        const int len = lengths_[b];
        for (int head = 0; head < cfg_.n_heads; ++head) {
          const int c0 = head * dh;
          MatrixMap p(c.probs.data() + prob_offsets_[b] + static_cast<std::size_t>(head) * len * len,
                      len, len);
          p.noalias() = c.q.block(o, c0, len, dh) * c.k.block(o, c0, len, dh).transpose();
          p *= scale;
          nn::causal_softmax(p);
          c.a.block(o, c0, len, dh).noalias() = p * c.v.block(o, c0, len, dh);
        }
      }
      x.noalias() += c.a * view(params, lb.w_o);
      c.xhat2.resize(rows_, d);
      c.h2.resize(rows_, d);
      c.rstd2.resize(rows_);
      nn::layer_norm(x, view(params, lb.ln2_g), view(params, lb.ln2_b), c.h2, &c.xhat2, &c.rstd2);
      c.u.noalias() = c.h2 * view(params, lb.w_fc);
      c.u.rowwise() += view(params, lb.b_fc).row(0);
      c.g = nn::gelu(c.u);
      x.noalias() += c.g * view(params, lb.w_proj);
      x.rowwise() += view(params, lb.b_proj).row(0);
    }
    xhatf_.resize(rows_, d);
    hf_.resize(rows_, d);
    rstdf_.resize(rows_);
    nn::layer_norm(x, view(params, layout_.lnf_g), view(params, layout_.lnf_b), hf_, &xhatf_, &rstdf_);
    if (keep_all_logits) {
      all_logits_.noalias() = hf_ * view(params, layout_.head);
    }
  }

  const Matrix& all_logits() const { return all_logits_; }

  // Mean CE over scored rows; fills `grad` (resized and zeroed).
  double backward(AlignedFloats& grad) {
    const auto params = model_.parameters();
    grad.assign(layout_.total, 0.0f);
    std::span<float> g(grad);
    const int d = cfg_.d_model;
    const int dk_head = cfg_.d_head();
    const float scale = 1.0f / std::sqrt(static_cast<float>(dk_head));
    const int n = static_cast<int>(loss_rows_.size());
    require(n > 0, ErrorCode::kEmptyInput, "batch has no scored positions");

    Matrix hs(n, d);
    for (int i = 0; i < n; ++i) hs.row(i) = hf_.row(loss_rows_[static_cast<std::size_t>(i)]);
    Matrix logits = hs * view(params, layout_.head);
    double loss = 0.0;
    const float inv_n = 1.0f / static_cast<float>(n);
    for (int i = 0; i < n; ++i) {
      auto row = logits.row(i);
      const float mx = row.maxCoeff();
      row = (row.array() - mx).exp();
      const float sum = row.sum();
      row /= sum;
      const Token y = loss_targets_[static_cast<std::size_t>(i)];
      loss -= std::log(std::max(row(y), 1e-30f));
      row(y) -= 1.0f;
      row *= inv_n;
    }
    loss /= n;

    auto dhead = view(g, layout_.head);
    dhead.noalias() += hs.transpose() * logits;
    Matrix dhs = logits * view(params, layout_.head).transpose();
    Matrix dhf = Matrix::Zero(rows_, d);
    for (int i = 0; i < n; ++i) dhf.row(loss_rows_[static_cast<std::size_t>(i)]) += dhs.row(i);

    Matrix dx = Matrix::Zero(rows_, d);
    auto dlnf_g = view(g, layout_.lnf_g);
    auto dlnf_b = view(g, layout_.lnf_b);
    nn::layer_norm_backward(dhf, xhatf_, rstdf_, view(params, layout_.lnf_g), dx, dlnf_g, dlnf_b);

    Matrix dh(rows_, d), du, da(rows_, d), dq(rows_, d), dk(rows_, d), dv(rows_, d);
    Matrix dp;
    for (int l = cfg_.n_layers - 1; l >= 0; --l) {
      const auto& lb = layout_.layers[static_cast<std::size_t>(l)];
      auto& c = caches_[static_cast<std::size_t>(l)];
      // MLP branch.
      view(g, lb.b_proj).row(0) += dx.colwise().sum();
      view(g, lb.w_proj).noalias() += c.g.transpose() * dx;
      du.noalias() = dx * view(params, lb.w_proj).transpose();
      du.array() *= nn::gelu_grad(c.u).array();
      view(g, lb.b_fc).row(0) += du.colwise().sum();
      view(g, lb.w_fc).noalias() += c.h2.transpose() * du;
      dh.noalias() = du * view(params, lb.w_fc).transpose();
      auto dln2_g = view(g, lb.ln2_g);
      auto dln2_b = view(g, lb.ln2_b);
      nn::layer_norm_backward(dh, c.xhat2, c.rstd2, view(params, lb.ln2_g), dx, dln2_g, dln2_b);
      // Attention branch.
      view(g, lb.w_o).noalias() += c.a.transpose() * dx;
      da.noalias() = dx * view(params, lb.w_o).transpose();
      for (std::size_t b = 0; b < batch_.size(); ++b) {
        const int o = offsets_[b];
        const int len = lengths_[b];
        for (int head = 0; head < cfg_.n_heads; ++head) {
          const int c0 = head * dk_head;
          const ConstMatrixMap p(
              c.probs.data() + prob_offsets_[b] + static_cast<std::size_t>(head) * len * len, len, len);
          const auto da_h = da.block(o, c0, len, dk_head);
          dv.block(o, c0, len, dk_head).noalias() = p.transpose() * da_h;
          dp.noalias() = da_h * c.v.block(o, c0, len, dk_head).transpose();
          const Vector dots = (p.array() * dp.array()).rowwise().sum().matrix();
          dp.array() = p.array() * (dp.colwise() - dots).array();
          dq.block(o, c0, len, dk_head).noalias() = scale * (dp * c.k.block(o, c0, len, dk_head));
          dk.block(o, c0, len, dk_head).noalias() = scale * (dp.transpose() * c.q.block(o, c0, len, dk_head));
        }
      }
      view(g, lb.w_q).noalias() += c.h1.transpose() * dq;
      view(g, lb.w_k).noalias() += c.h1.transpose() * dk;
      view(g, lb.w_v).noalias() += c.h1.transpose() * dv;
      dh.noalias() = dq * view(params, lb.w_q).transpose();
      dh.noalias() += dk * view(params, lb.w_k).transpose();
      dh.noalias() += dv * view(params, lb.w_v).transpose();
      auto dln1_g = view(g, lb.ln1_g);
      auto dln1_b = view(g, lb.ln1_b);
      nn::layer_norm_backward(dh, c.xhat1, c.rstd1, view(params, lb.ln1_g), dx, dln1_g, dln1_b);
    }
    auto dtok = view(g, layout_.tok_emb);
    auto dpos = view(g, layout_.pos_emb);
    for (std::size_t b = 0; b < batch_.size(); ++b) {
      for (int t = 0; t < lengths_[b]; ++t) {
        const auto row = dx.row(offsets_[b] + t);
        dtok.row(batch_[b].tokens[static_cast<std::size_t>(t)]) += row;
        dpos.row(t) += row;
      }
    }
    return loss;
  }

 private:
  const Model& model_;
  const ModelConfig& cfg_;
  const ParamLayout& layout_;
  std::span<const taskgen::Episode> batch_;
  int rows_ = 0;
  std::vector<int> offsets_, lengths_;
  std::vector<std::size_t> prob_offsets_;
  std::size_t prob_total_ = 0;
  std::vector<int> loss_rows_;
  std::vector<Token> loss_targets_;
  std::vector<LayerCache> caches_;
  Matrix xhatf_, hf_, all_logits_;
  Vector rstdf_;
};

// Mask of parameters that receive decoupled weight decay (projection and
// head matrices; embeddings, norms and biases are exempt).
std::vector<char> decay_mask(const ParamLayout& layout) {
  std::vector<char> mask(layout.total, 0);
  auto mark = [&](const Block& b) {
    std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>(b.offset), b.size(), 1);
  };
  for (const auto& lb : layout.layers) {
    for (const Block* b : {&lb.w_q, &lb.w_k, &lb.w_v, &lb.w_o, &lb.w_fc, &lb.w_proj}) mark(*b);
  }
  mark(layout.head);
  return mask;
}

}  // namespace

double loss_and_gradient(const Model& model, std::span<const taskgen::Episode> batch,
                         AlignedFloats& gradient) {
  PackedPass pass(model, batch);
  pass.forward(false);
  return pass.backward(gradient);
}

Matrix packed_logits(const Model& model, std::span<const taskgen::Episode> batch) {
  PackedPass pass(model, batch);
  pass.forward(true);
  return pass.all_logits();
}

TrainResult train_base(const ModelConfig& config, const taskgen::TaskFamily& family,
                       const TrainOptions& options, const TrainCallback& on_log) {
  config.validate();
  require(options.steps >= 0 && options.batch_size >= 1, ErrorCode::kInvalidArgument,
          "steps must be >= 0 and batch_size >= 1");
  require(family.max_episode_length() <= config.max_seq_len, ErrorCode::kInvalidArgument,
          "task family emits episodes longer than max_seq_len");
  require(family.config().vocab.vocab_size == config.vocab_size, ErrorCode::kInvalidArgument,
          "task family vocabulary does not match the model");

  Model model(config);
  auto params = model.mutable_parameters();
  const auto mask = decay_mask(model.layout());
  AlignedFloats grad;
  std::vector<float> m(params.size(), 0.0f), v(params.size(), 0.0f);
  std::mt19937_64 data_rng(config.seed ^ 0x5DEECE66Dull);
  std::vector<taskgen::Episode> batch(static_cast<std::size_t>(options.batch_size));

  constexpr float beta1 = 0.9f;
  constexpr float beta2 = 0.95f;
  constexpr float adam_eps = 1e-8f;
  TrainResult result{Model(config), {}};
  double window_loss = 0.0;
  int window = 0;
  double last_loss = 0.0;
  for (int step = 1; step <= options.steps; ++step) {
    for (auto& ep : batch) ep = family.sample_episode(data_rng);
    const double loss = loss_and_gradient(model, batch, grad);
    if (!std::isfinite(loss)) {
      throw Error(ErrorCode::kDivergence,
                  "training loss became non-finite at step " + std::to_string(step));
    }
    last_loss = loss;

    double norm2 = 0.0;
    for (float gi : grad) norm2 += static_cast<double>(gi) * gi;
    const double norm = std::sqrt(norm2);
    if (!std::isfinite(norm)) {
      throw Error(ErrorCode::kDivergence,
                  "gradient became non-finite at step " + std::to_string(step));
    }
    const float clip = (options.grad_clip > 0 && norm > options.grad_clip)
                           ? static_cast<float>(options.grad_clip / norm)
                           : 1.0f;

    double lr = options.lr;
    if (step <= options.warmup_steps) {
      lr = options.lr * static_cast<double>(step) / std::max(1, options.warmup_steps);
    } else {
      const double progress = static_cast<double>(step - options.warmup_steps) /
                              std::max(1, options.steps - options.warmup_steps);
      const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
      lr = options.lr * (options.min_lr_ratio + (1.0 - options.min_lr_ratio) * cosine);
    }
    const float bc1 = 1.0f - std::pow(beta1, static_cast<float>(step));
    const float bc2 = 1.0f - std::pow(beta2, static_cast<float>(step));
    const float flr = static_cast<float>(lr);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const float gi = grad[i] * clip;
      m[i] = beta1 * m[i] + (1.0f - beta1) * gi;
      v[i] = beta2 * v[i] + (1.0f - beta2) * gi * gi;
      const float update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + adam_eps);
      if (mask[i]) params[i] -= flr * options.weight_decay * params[i];
      params[i] -= flr * update;
    }

    window_loss += loss;
    ++window;
    if (options.log_every > 0 && (step % options.log_every == 0 || step == options.steps)) {
      TrainPoint point{step, window_loss / window, lr};
      result.curve.push_back(point);
      if (on_log) on_log(point);
      window_loss = 0.0;
      window = 0;
    }
  }
  model.set_training_info({options.steps, last_loss});
  result.model = std::move(model);
  return result;
}

}  // namespace dyvec::model
