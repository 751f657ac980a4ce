#include "dyvec/optimize.hpp"

#include "dyvec/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace dyvec::opt {

using nlohmann::json;

std::string PositionMask::bitstring() const {
  std::string s;
  s.reserve(m.size());
  for (auto b : m) s.push_back(b ? '1' : '0');
  return s;
}

PositionSet PositionMask::positions() const {
  PositionSet out;
  for (int i = 0; i < n_layers; ++i) {
    for (int j = 0; j < granularity; ++j) {
      if ((*this)(i, j)) out.push_back({i, j});
    }
  }
  return out;
}

bool PositionMask::empty() const {
  return std::none_of(m.begin(), m.end(), [](std::uint8_t b) { return b != 0; });
}

BernoulliPolicy BernoulliPolicy::make(int n_layers, int granularity, const PolicyOptions& options) {
  BernoulliPolicy policy;
  policy.n_layers = n_layers;
  policy.granularity = granularity;
  policy.p.assign(static_cast<std::size_t>(n_layers) * granularity, 0.5);
  policy.epsilon = options.epsilon;
  policy.learning_rate = options.learning_rate;
  policy.steps = options.steps;
  policy.seed = options.seed;
  policy.validate();
  return policy;
}

void BernoulliPolicy::validate() const {
  require(n_layers >= 1 && granularity >= 1, ErrorCode::kInvalidArgument, "policy grid must be nonempty");
  require(p.size() == static_cast<std::size_t>(n_layers) * granularity, ErrorCode::kShapeMismatch,
          "policy size does not match L x S");
  require(epsilon > 0.0 && epsilon < 0.5, ErrorCode::kInvalidArgument, "epsilon must lie in (0, 0.5)");
  require(std::isfinite(learning_rate) && learning_rate > 0.0, ErrorCode::kInvalidArgument,
          "policy learning rate must be positive");
  require(steps >= 1, ErrorCode::kInvalidArgument, "policy needs at least one step");
  for (double v : p) {
    require(v > 0.0 && v < 1.0, ErrorCode::kOutOfRange, "policy probabilities must lie in (0, 1)");
  }
}

double BernoulliPolicy::sum() const {
  return std::accumulate(p.begin(), p.end(), 0.0);
}

double score(int m, double p) {
  return (static_cast<double>(m) - p) / (p * (1.0 - p));
}

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

PositionMask sample_mask(const BernoulliPolicy& policy, std::mt19937_64& rng) {
  PositionMask mask{policy.n_layers, policy.granularity, {}};
  mask.m.reserve(policy.p.size());
  for (double p : policy.p) mask.m.push_back(uniform01(rng) < p ? 1 : 0);
  return mask;
}

void apply_update(BernoulliPolicy& policy, const PositionMask& mask, double advantage) {
  require(mask.m.size() == policy.p.size(), ErrorCode::kShapeMismatch, "mask does not match policy");
  const double lo = policy.epsilon;
  const double hi = 1.0 - policy.epsilon;
  for (std::size_t k = 0; k < policy.p.size(); ++k) {
    const double next = policy.p[k] + policy.learning_rate * score(mask.m[k], policy.p[k]) * advantage;
    policy.p[k] = std::clamp(next, lo, hi);
  }
}

RewardRecord reinforce_step(BernoulliPolicy& policy, const CeFunction& ce, std::mt19937_64& rng,
                            int step, double* baseline, double baseline_decay) {
  RewardRecord rec;
  rec.step = step;
  rec.mask = sample_mask(policy, rng);
  rec.ce = ce(rec.mask);
  require(std::isfinite(rec.ce), ErrorCode::kNonFinite,
          "reward became non-finite at step " + std::to_string(step));
  rec.reward = -rec.ce;
  double advantage = rec.reward;
  if (baseline) {
    advantage -= *baseline;
    *baseline = baseline_decay * *baseline + (1.0 - baseline_decay) * rec.reward;
  }
  apply_update(policy, rec.mask, advantage);
  return rec;
}

PositionSet top_k(const BernoulliPolicy& policy) {
  const std::size_t n = policy.p.size();
  const auto k = std::min(n, static_cast<std::size_t>(std::ceil(policy.sum())));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return policy.p[a] > policy.p[b]; });
  PositionSet out;
  for (std::size_t r = 0; r < k; ++r) {
    const int idx = static_cast<int>(order[r]);
    out.push_back({idx / policy.granularity, idx % policy.granularity});
  }
  return make_position_set(std::move(out));
}

ReinforceResult run_reinforce(BernoulliPolicy policy, const CeFunction& ce,
                              const PolicyOptions& options) {
  policy.validate();
  std::mt19937_64 rng(policy.seed);
  ReinforceResult result;
  result.trace.reserve(static_cast<std::size_t>(policy.steps));
  double baseline = 0.0;
  for (int t = 1; t <= policy.steps; ++t) {
    result.trace.push_back(reinforce_step(policy, ce, rng, t, options.use_baseline ? &baseline : nullptr,
                                          options.baseline_decay));
  }
  result.positions = top_k(policy);
  result.policy = std::move(policy);
  return result;
}

InjectionObjective::InjectionObjective(const model::Model& model, const SegmentGrid& grid,
                                       const Strategy& strategy, const taskgen::ExampleSet& eval_set,
                                       const taskgen::Vocab& vocab)
    : model_(model), grid_(grid), strategy_(strategy) {
  strategy.validate(true);
  require(!eval_set.examples.empty(), ErrorCode::kEmptyInput, "reward set is empty");
  require(grid.n_layers == model.config().n_layers && grid.d_model == model.config().d_model,
          ErrorCode::kShapeMismatch, "grid does not match the model");
  for (const auto& e : eval_set.examples) {
    prompts_.push_back(taskgen::render_zero_shot(e.x, vocab));
    answers_.push_back(e.y);
  }
}

double InjectionObjective::ce(const PositionSet& positions) const {
  model::InjectionPlan plan;
  plan.granularity = grid_.granularity;
  for (const auto& p : positions) {
    const auto seg = grid_.segment(p.layer, p.segment);
    plan.entries.push_back({p.layer, p.segment, std::vector<float>(seg.begin(), seg.end()),
                            strategy_.alpha, strategy_.beta});
  }
  model::ForwardOptions options;
  options.plan = plan.entries.empty() ? nullptr : &plan;
  options.last_logits_only = true;
  double total = 0.0;
  for (std::size_t q = 0; q < prompts_.size(); ++q) {
    const auto result = model_.forward(prompts_[q], options);
    const auto row = result.logits.row(0);
    const double mx = row.maxCoeff();
    double z = 0.0;
    for (Eigen::Index c = 0; c < row.size(); ++c) z += std::exp(static_cast<double>(row(c)) - mx);
    total += std::log(z) + mx - static_cast<double>(row(answers_[q]));
  }
  return total / static_cast<double>(prompts_.size());
}

double InjectionObjective::operator()(const PositionMask& mask) const {
  return ce(mask.positions());
}

std::size_t argmin_first(const std::vector<double>& values) {
  require(!values.empty(), ErrorCode::kEmptyInput, "argmin of an empty list");
  std::size_t best = 0;
  for (std::size_t k = 1; k < values.size(); ++k) {
    if (values[k] < values[best]) best = k;
  }
  return best;
}

StrategySearch select_strategy(const model::Model& model, const SegmentGrid& grid,
                               const taskgen::ExampleSet& eval_set,
                               const std::vector<Strategy>& candidates,
                               const PolicyOptions& options) {
  require(!candidates.empty(), ErrorCode::kEmptyInput, "no strategy candidates");
  StrategySearch search;
  std::vector<double> ces;
  for (const auto& s : candidates) {
    InjectionObjective objective(model, grid, s, eval_set);
    auto policy = BernoulliPolicy::make(grid.n_layers, grid.granularity, options);
    CandidateResult c{s, run_reinforce(std::move(policy), std::cref(objective), options), 0.0};
    c.final_ce = objective.ce(c.search.positions);
    ces.push_back(c.final_ce);
    search.candidates.push_back(std::move(c));
  }
  search.best = argmin_first(ces);
  return search;
}

std::string optimization_log(const std::vector<RewardRecord>& trace) {
  std::ostringstream out;
  for (const auto& r : trace) {
    out << json{{"step", r.step}, {"mask", r.mask.bitstring()}, {"ce", r.ce}, {"reward", r.reward}}.dump()
        << '\n';
  }
  return out.str();
}

}  // namespace dyvec::opt
