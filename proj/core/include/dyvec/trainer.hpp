#pragma once

#include "dyvec/model.hpp"
#include "dyvec/taskgen.hpp"

#include <functional>
#include <span>
#include <vector>

namespace dyvec::model {

struct TrainOptions {
  int steps = 6000;
  float lr = 1e-3f;
  int batch_size = 32;
  int warmup_steps = 200;
  float min_lr_ratio = 0.1f;
  float weight_decay = 0.01f;
  float grad_clip = 1.0f;
  int log_every = 100;
};

struct TrainPoint {
  int step = 0;
  double loss = 0.0;  // mean over the logging window
  double lr = 0.0;
};

using TrainCallback = std::function<void(const TrainPoint&)>;

struct TrainResult {
  Model model;
  std::vector<TrainPoint> curve;
};

// Meta-trains a fresh model (initialised from config.seed) on episodes from
// `family` with AdamW, linear warmup and cosine decay. Single-threaded and
// deterministic for a given config/options pair. Throws Error(kDivergence)
// when the loss becomes non-finite.
TrainResult train_base(const ModelConfig& config, const taskgen::TaskFamily& family,
                       const TrainOptions& options, const TrainCallback& on_log = {});

// Mean next-token cross-entropy over the scored positions of `batch` and its
// gradient with respect to every parameter (same layout as the model blob).
double loss_and_gradient(const Model& model, std::span<const taskgen::Episode> batch,
                         AlignedFloats& gradient);

// Logits of the packed training forward pass for every position of every
// episode, stacked in order. Used to cross-check the inference path.
Matrix packed_logits(const Model& model, std::span<const taskgen::Episode> batch);

}  // namespace dyvec::model
