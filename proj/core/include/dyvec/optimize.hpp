#pragma once

#include "dyvec/dyvec.hpp"
#include "dyvec/model.hpp"
#include "dyvec/taskgen.hpp"

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace dyvec::opt {

struct PolicyOptions {
  double epsilon = 0.01;       // clip margin, p stays in [eps, 1 - eps]
  double learning_rate = 0.05;
  int steps = 500;
  std::uint64_t seed = 0;
  // Optional moving-average reward baseline, off by default.
  bool use_baseline = false;
  double baseline_decay = 0.9;
};

struct PositionMask {
  int n_layers = 0;
  int granularity = 0;
  std::vector<std::uint8_t> m;  // row-major [n_layers, granularity]

  bool operator()(int i, int j) const { return m[static_cast<std::size_t>(i) * granularity + j] != 0; }
  std::string bitstring() const;
  PositionSet positions() const;
  bool empty() const;
};

// Independent Bernoulli selection probabilities over the L x S grid.
struct BernoulliPolicy {
  int n_layers = 0;
  int granularity = 0;
  std::vector<double> p;
  double epsilon = 0.01;
  double learning_rate = 0.05;
  int steps = 500;
  std::uint64_t seed = 0;

  // p initialised to 0.5.
  static BernoulliPolicy make(int n_layers, int granularity, const PolicyOptions& options = {});
  void validate() const;
  double sum() const;
};

struct RewardRecord {
  int step = 0;
  PositionMask mask;
  double reward = 0.0;  // always -ce
  double ce = 0.0;
};

// d/dp log Bernoulli(m; p) = (m - p) / (p (1 - p)).
double score(int m, double p);

// Uniform draw in [0, 1) from the top 53 bits of one engine output.
double uniform01(std::mt19937_64& rng);

PositionMask sample_mask(const BernoulliPolicy& policy, std::mt19937_64& rng);

// p <- clip(p + lr * score(m, p) * advantage, eps, 1 - eps) for every cell.
void apply_update(BernoulliPolicy& policy, const PositionMask& mask, double advantage);

// Mean cross-entropy of the reward queries under a mask.
using CeFunction = std::function<double(const PositionMask&)>;

// Samples one mask, evaluates R = -CE and updates the policy in place.
// `baseline` (nullable) is subtracted from R and then moved toward it.
RewardRecord reinforce_step(BernoulliPolicy& policy, const CeFunction& ce, std::mt19937_64& rng,
                            int step = 0, double* baseline = nullptr, double baseline_decay = 0.9);

// The ceil(sum p) cells with the largest p, ties broken by (layer, segment).
PositionSet top_k(const BernoulliPolicy& policy);

struct ReinforceResult {
  PositionSet positions;
  BernoulliPolicy policy;
  std::vector<RewardRecord> trace;
};

ReinforceResult run_reinforce(BernoulliPolicy policy, const CeFunction& ce,
                              const PolicyOptions& options);

// Reward objective: mean answer-token CE of the zero-shot-rendered example
// queries with the masked segments injected under a fixed strategy. An empty
// mask evaluates plain zero-shot.
class InjectionObjective {
 public:
  InjectionObjective(const model::Model& model, const SegmentGrid& grid, const Strategy& strategy,
                     const taskgen::ExampleSet& eval_set, const taskgen::Vocab& vocab = {});

  double operator()(const PositionMask& mask) const;
  double ce(const PositionSet& positions) const;

 private:
  const model::Model& model_;
  const SegmentGrid& grid_;
  Strategy strategy_;
  std::vector<TokenSequence> prompts_;
  std::vector<Token> answers_;
};

struct CandidateResult {
  Strategy strategy;
  ReinforceResult search;
  double final_ce = 0.0;
};

struct StrategySearch {
  std::size_t best = 0;
  std::vector<CandidateResult> candidates;

  const CandidateResult& winner() const { return candidates[best]; }
};

// Runs the full position search per candidate and keeps the lowest final
// CE, ties going to the earlier candidate.
StrategySearch select_strategy(const model::Model& model, const SegmentGrid& grid,
                               const taskgen::ExampleSet& eval_set,
                               const std::vector<Strategy>& candidates,
                               const PolicyOptions& options);

// Index of the smallest value, first one on ties.
std::size_t argmin_first(const std::vector<double>& values);

// One JSON object per line: step, mask bitstring, ce, reward.
std::string optimization_log(const std::vector<RewardRecord>& trace);

}  // namespace dyvec::opt
