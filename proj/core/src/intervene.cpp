#include "dyvec/intervene.hpp"

#include "dyvec/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>
#include <sstream>

namespace dyvec::intervene {

using nlohmann::json;

namespace {

Prediction run(const model::Model& model, const TokenSequence& prompt,
               const model::InjectionPlan* plan, const model::ResidualEdit* edit) {
  model::ForwardOptions options;
  options.plan = plan;
  options.residual_edit = edit;
  options.last_logits_only = true;
  const auto result = model.forward(prompt, options);
  Prediction p;
  p.logits.assign(result.logits.data(), result.logits.data() + result.logits.cols());
  p.token = model::argmax(p.logits);
  p.prompt_tokens = static_cast<int>(prompt.size());
  return p;
}

double answer_ce(std::span<const float> logits, Token answer) {
  double mx = logits[0];
  for (float v : logits) mx = std::max(mx, static_cast<double>(v));
  double z = 0.0;
  for (float v : logits) z += std::exp(static_cast<double>(v) - mx);
  return std::log(z) + mx - static_cast<double>(logits[static_cast<std::size_t>(answer)]);
}

// Mean last-token capture at every layer for one hook site.
std::vector<std::vector<double>> mean_captures(const model::Model& model,
                                               const taskgen::PromptSet& prompts,
                                               model::HookSite site) {
  require(prompts.size() > 0, ErrorCode::kEmptyInput, "prompt set is empty");
  const auto& cfg = model.config();
  std::vector<model::HookPoint> taps;
  for (int i = 0; i < cfg.n_layers; ++i) taps.push_back({i, site, model::TokenSelect::kLast});
  model::ForwardOptions options;
  options.taps = taps;
  options.last_logits_only = true;
  std::vector<std::vector<double>> sums(static_cast<std::size_t>(cfg.n_layers),
                                        std::vector<double>(static_cast<std::size_t>(cfg.d_model), 0.0));
  for (const auto& prompt : prompts.prompts) {
    const auto result = model.forward(prompt, options);
    for (std::size_t i = 0; i < taps.size(); ++i) {
      const auto& v = result.captures.at(taps[i]);
      for (std::size_t c = 0; c < v.size(); ++c) sums[i][c] += v[c];
    }
  }
  for (auto& layer : sums) {
    for (auto& v : layer) v /= static_cast<double>(prompts.size());
  }
  return sums;
}

}  // namespace

const char* to_string(BaselineKind kind) {
  return kind == BaselineKind::kTv ? "TV" : "FV";
}

model::ResidualEdit BaselineVector::edit() const {
  return {layer, kind == BaselineKind::kTv ? model::ResidualEditMode::kReplace : model::ResidualEditMode::kAdd,
          vector, kind == BaselineKind::kTv ? 1.0f : scale};
}

BaselineVector task_vector(const model::Model& model, const taskgen::PromptSet& prompts, int layer) {
  require(layer >= 0 && layer < model.config().n_layers, ErrorCode::kOutOfRange, "baseline layer out of range");
  const auto means = mean_captures(model, prompts, model::HookSite::kResidPost);
  const auto& m = means[static_cast<std::size_t>(layer)];
  return {BaselineKind::kTv, layer, std::vector<float>(m.begin(), m.end()), 1.0f};
}

BaselineVector function_vector(const model::Model& model, const taskgen::PromptSet& prompts, int layer,
                               float scale) {
  require(layer >= 0 && layer < model.config().n_layers, ErrorCode::kOutOfRange, "baseline layer out of range");
  const auto means = mean_captures(model, prompts, model::HookSite::kPostWo);
  std::vector<double> total(means.front().size(), 0.0);
  for (const auto& m : means) {
    for (std::size_t c = 0; c < m.size(); ++c) total[c] += m[c];
  }
  return {BaselineKind::kFv, layer, std::vector<float>(total.begin(), total.end()), scale};
}

BaselineSelection select_baseline_layer(const model::Model& model, BaselineKind kind,
                                        const taskgen::PromptSet& prompts,
                                        const taskgen::ExampleSet& eval_set, float scale) {
  BaselineSelection sel;
  const int n_layers = model.config().n_layers;
  std::vector<BaselineVector> candidates;
  if (kind == BaselineKind::kTv) {
    const auto means = mean_captures(model, prompts, model::HookSite::kResidPost);
    for (int l = 0; l < n_layers; ++l) {
      const auto& m = means[static_cast<std::size_t>(l)];
      candidates.push_back({kind, l, std::vector<float>(m.begin(), m.end()), 1.0f});
    }
  } else {
    const auto fv = function_vector(model, prompts, 0, scale);
    for (int l = 0; l < n_layers; ++l) candidates.push_back({kind, l, fv.vector, scale});
  }
  std::size_t best = 0;
  for (std::size_t l = 0; l < candidates.size(); ++l) {
    sel.layer_ce.push_back(baseline_ce(model, &candidates[l], eval_set));
    if (sel.layer_ce[l] < sel.layer_ce[best]) best = l;
  }
  sel.best = candidates[best];
  return sel;
}

Prediction infer_zero_shot(const model::Model& model, Token query) {
  return run(model, taskgen::render_zero_shot(query), nullptr, nullptr);
}

Prediction infer_icl(const model::Model& model, std::span<const taskgen::Example> demos, Token query) {
  return run(model, taskgen::render_icl(demos, query), nullptr, nullptr);
}

Prediction infer_with_dyvec(const model::Model& model, const DyVecArtifact& artifact, Token query,
                            const DyVecOptions& options) {
  MethodSpec spec;
  spec.method = Method::kDyVec;
  spec.artifact = &artifact;
  spec.dyvec = options;
  return make_predictor(model, spec)(query);
}

Prediction infer_with_baseline(const model::Model& model, const BaselineVector& baseline, Token query) {
  require(baseline.layer >= 0 && baseline.layer < model.config().n_layers, ErrorCode::kOutOfRange,
          "baseline layer out of range");
  const auto edit = baseline.edit();
  return run(model, taskgen::render_zero_shot(query), nullptr, &edit);
}

double baseline_ce(const model::Model& model, const BaselineVector* baseline,
                   const taskgen::ExampleSet& eval_set) {
  require(!eval_set.examples.empty(), ErrorCode::kEmptyInput, "evaluation set is empty");
  double total = 0.0;
  for (const auto& e : eval_set.examples) {
    const auto p = baseline ? infer_with_baseline(model, *baseline, e.x) : infer_zero_shot(model, e.x);
    total += answer_ce(p.logits, e.y);
  }
  return total / static_cast<double>(eval_set.examples.size());
}

const char* to_string(Method method) {
  switch (method) {
    case Method::kZeroShot: return "ZERO_SHOT";
    case Method::kIcl: return "ICL";
    case Method::kDyVec: return "DYVEC";
    case Method::kTv: return "TV";
    case Method::kFv: return "FV";
  }
  return "?";
}

Predictor make_predictor(const model::Model& model, const MethodSpec& spec) {
  switch (spec.method) {
    case Method::kZeroShot:
      return [&model](Token q) { return infer_zero_shot(model, q); };
    case Method::kIcl:
      return [&model, demos = spec.demos](Token q) { return infer_icl(model, demos, q); };
    case Method::kDyVec: {
      require(spec.artifact != nullptr, ErrorCode::kInvalidArgument, "DYVEC evaluation needs an artifact");
      const auto& artifact = *spec.artifact;
      require(!artifact.positions.empty(), ErrorCode::kEmptyInput, "artifact has no positions");
      require(spec.dyvec.allow_foreign_model || artifact.model_hash == model.content_hash(),
              ErrorCode::kHashMismatch, "artifact was built for a different model");
      artifact.strategy.validate(spec.dyvec.relaxed_strategy);
      return [&model, plan = to_injection_plan(artifact)](Token q) {
        return run(model, taskgen::render_zero_shot(q), &plan, nullptr);
      };
    }
    case Method::kTv:
    case Method::kFv: {
      require(spec.baseline != nullptr, ErrorCode::kInvalidArgument, "baseline evaluation needs a vector");
      require(spec.baseline->layer >= 0 && spec.baseline->layer < model.config().n_layers,
              ErrorCode::kOutOfRange, "baseline layer out of range");
      return [&model, edit = spec.baseline->edit()](Token q) {
        return run(model, taskgen::render_zero_shot(q), nullptr, &edit);
      };
    }
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown method");
}

double macro_f1(std::span<const Token> gold, std::span<const Token> predicted) {
  require(gold.size() == predicted.size() && !gold.empty(), ErrorCode::kShapeMismatch,
          "macro-F1 needs equally sized nonempty label lists");
  std::set<Token> labels(gold.begin(), gold.end());
  labels.insert(predicted.begin(), predicted.end());
  double total = 0.0;
  for (Token c : labels) {
    int tp = 0, fp = 0, fn = 0;
    for (std::size_t k = 0; k < gold.size(); ++k) {
      const bool g = gold[k] == c;
      const bool p = predicted[k] == c;
      tp += g && p;
      fp += !g && p;
      fn += g && !p;
    }
    const int denom = 2 * tp + fp + fn;
    total += denom == 0 ? 0.0 : 2.0 * tp / denom;
  }
  return total / static_cast<double>(labels.size());
}

double ms_per_query(const model::Model& model, const MethodSpec& spec, std::span<const Token> queries,
                    const TimingOptions& timing) {
  require(!queries.empty(), ErrorCode::kEmptyInput, "no queries to time");
  require(timing.min_queries >= 1 && timing.rounds >= 1 && timing.warmup >= 0,
          ErrorCode::kInvalidArgument, "invalid timing options");
  using clock = std::chrono::steady_clock;
  std::size_t cursor = 0;
  auto next = [&] {
    const Token q = queries[cursor];
    cursor = (cursor + 1) % queries.size();
    return q;
  };
  const auto predict = make_predictor(model, spec);
  volatile Token sink = 0;
  for (int w = 0; w < timing.warmup; ++w) sink = predict(next()).token;
  double best = 0.0;
  for (int r = 0; r < timing.rounds; ++r) {
    const auto start = clock::now();
    for (int k = 0; k < timing.min_queries; ++k) sink = predict(next()).token;
    const double ms = std::chrono::duration<double, std::milli>(clock::now() - start).count() /
                      timing.min_queries;
    best = r == 0 ? ms : std::min(best, ms);
  }
  (void)sink;
  return best;
}

MetricsReport evaluate(const model::Model& model, const MethodSpec& spec, const taskgen::TaskSpec& task,
                       std::span<const Token> queries, const EvalOptions& options) {
  require(!queries.empty(), ErrorCode::kEmptyInput, "empty test set");
  if (spec.method == Method::kIcl) {
    for (const auto& d : spec.demos) {
      require(std::find(queries.begin(), queries.end(), d.x) == queries.end(), ErrorCode::kInvalidArgument,
              "test queries overlap the demonstrations");
    }
  }
  MetricsReport r;
  r.method = to_string(spec.method);
  r.task_id = task.task_id;
  r.n_queries = static_cast<int>(queries.size());
  if (spec.method == Method::kIcl) r.shots = static_cast<int>(spec.demos.size());
  if (spec.method == Method::kDyVec && spec.artifact) {
    r.granularity = spec.artifact->granularity;
    r.alpha = spec.artifact->strategy.alpha;
    r.beta = spec.artifact->strategy.beta;
  }
  if ((spec.method == Method::kFv) && spec.baseline) r.beta = spec.baseline->scale;
  const auto predict = make_predictor(model, spec);
  std::vector<Token> gold, pred;
  double tokens = 0.0;
  for (Token q : queries) {
    const auto p = predict(q);
    gold.push_back(task.apply(q));
    pred.push_back(p.token);
    tokens += p.prompt_tokens;
  }
  int correct = 0;
  for (std::size_t k = 0; k < gold.size(); ++k) correct += gold[k] == pred[k];
  r.accuracy = static_cast<double>(correct) / static_cast<double>(gold.size());
  r.macro_f1 = macro_f1(gold, pred);
  r.mean_prompt_tokens = tokens / static_cast<double>(queries.size());
  if (options.measure_time) r.ms_per_query = ms_per_query(model, spec, queries, options.timing);
  return r;
}

std::string MetricsReport::to_json() const {
  return json{{"method", method},
              {"task_id", task_id},
              {"shots", shots},
              {"granularity", granularity},
              {"alpha", alpha},
              {"beta", beta},
              {"n_queries", n_queries},
              {"accuracy", accuracy},
              {"f1", macro_f1},
              {"mean_prompt_tokens", mean_prompt_tokens},
              {"ms_per_query", ms_per_query}}
      .dump(2);
}

std::string MetricsReport::csv_header() {
  return "method,task_id,shots,granularity,alpha,beta,n_queries,accuracy,f1,mean_prompt_tokens,ms_per_query";
}

std::string MetricsReport::csv_row() const {
  std::ostringstream out;
  out.precision(10);
  out << method << ',' << task_id << ',' << shots << ',' << granularity << ',' << alpha << ',' << beta << ','
      << n_queries << ',' << accuracy << ',' << macro_f1 << ',' << mean_prompt_tokens << ',' << ms_per_query;
  return out.str();
}

}  // namespace dyvec::intervene
