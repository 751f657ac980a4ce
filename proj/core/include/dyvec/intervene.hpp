#pragma once

#include "dyvec/dyvec.hpp"
#include "dyvec/model.hpp"
#include "dyvec/taskgen.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace dyvec::intervene {

// Layer-level baselines edit the last-token residual stream after a block.
//   kTv  replaces it with the mean EQR residual of that layer
//   kFv  adds scale * (sum over layers of the mean SAR latent)
enum class BaselineKind { kTv, kFv };

const char* to_string(BaselineKind kind);

struct BaselineVector {
  BaselineKind kind = BaselineKind::kTv;
  int layer = 0;
  std::vector<float> vector;
  float scale = 1.0f;

  model::ResidualEdit edit() const;
};

BaselineVector task_vector(const model::Model& model, const taskgen::PromptSet& prompts, int layer);
BaselineVector function_vector(const model::Model& model, const taskgen::PromptSet& prompts,
                               int layer, float scale = 1.0f);

// Evaluates the baseline at every layer on the example queries and keeps
// the layer with the lowest answer CE (earliest layer on ties).
struct BaselineSelection {
  BaselineVector best;
  std::vector<double> layer_ce;
};

BaselineSelection select_baseline_layer(const model::Model& model, BaselineKind kind,
                                        const taskgen::PromptSet& prompts,
                                        const taskgen::ExampleSet& eval_set, float scale = 1.0f);

struct Prediction {
  Token token = 0;
  std::vector<float> logits;  // next-token logits after the prompt
  int prompt_tokens = 0;
};

struct DyVecOptions {
  bool allow_foreign_model = false;
  bool relaxed_strategy = false;
};

Prediction infer_zero_shot(const model::Model& model, Token query);
Prediction infer_icl(const model::Model& model, std::span<const taskgen::Example> demos, Token query);
// Throws Error(kHashMismatch) when the artifact was built for another model
// unless allow_foreign_model is set.
Prediction infer_with_dyvec(const model::Model& model, const DyVecArtifact& artifact, Token query,
                            const DyVecOptions& options = {});
Prediction infer_with_baseline(const model::Model& model, const BaselineVector& baseline, Token query);

// Mean answer-token cross-entropy of zero-shot prompts under an optional
// residual edit.
double baseline_ce(const model::Model& model, const BaselineVector* baseline,
                   const taskgen::ExampleSet& eval_set);

enum class Method { kZeroShot, kIcl, kDyVec, kTv, kFv };

const char* to_string(Method method);

struct MethodSpec {
  Method method = Method::kZeroShot;
  std::vector<taskgen::Example> demos;         // kIcl
  const DyVecArtifact* artifact = nullptr;     // kDyVec
  const BaselineVector* baseline = nullptr;    // kTv, kFv
  DyVecOptions dyvec;
};

using Predictor = std::function<Prediction(Token query)>;

// Validates the method once (artifact hash, strategy, baseline layer) and
// returns a callable that renders, injects and decodes one query.
Predictor make_predictor(const model::Model& model, const MethodSpec& spec);

struct MetricsReport {
  std::string method;
  std::uint64_t task_id = 0;
  int shots = 0;
  int granularity = 0;
  double alpha = 0.0;
  double beta = 0.0;
  int n_queries = 0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double mean_prompt_tokens = 0.0;
  double ms_per_query = 0.0;

  std::string to_json() const;
  std::string csv_row() const;
  static std::string csv_header();
};

// Macro-F1 over the union of gold and predicted labels.
double macro_f1(std::span<const Token> gold, std::span<const Token> predicted);

struct TimingOptions {
  int warmup = 10;
  int min_queries = 200;
  // Independent timing rounds; the fastest round mean is reported.
  int rounds = 1;
};

// Mean wall-time per prediction in milliseconds, cycling through `queries`.
double ms_per_query(const model::Model& model, const MethodSpec& spec, std::span<const Token> queries,
                    const TimingOptions& timing = {});

struct EvalOptions {
  bool measure_time = false;
  TimingOptions timing;
};

// Accuracy, macro-F1 and prompt length over the test queries, which must
// not overlap the demonstrations of an ICL method.
MetricsReport evaluate(const model::Model& model, const MethodSpec& spec, const taskgen::TaskSpec& task,
                       std::span<const Token> queries, const EvalOptions& options = {});

}  // namespace dyvec::intervene
