#pragma once

#include "dyvec/tensor.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace dyvec::taskgen {

// Reserved template symbols occupy the lowest ids; task alphabets start at
// first_symbol. The prompt template is
//
//   BOS (Q x A y NL)* Q x_query A
//
// so the prompt ends on the A-tag whose next-token prediction is the answer.
struct Vocab {
  Token bos = 0;
  Token q_tag = 1;
  Token a_tag = 2;
  Token newline = 3;
  Token first_symbol = 4;
  int vocab_size = 64;

  bool is_reserved(Token t) const { return t >= 0 && t < first_symbol; }
};

enum class Family { kBijection, kClassify, kCopy, kConstant };

const char* to_string(Family family);
Family family_from_string(const std::string& name);

struct Alphabets {
  std::vector<Token> input;
  std::vector<Token> output;

  // input = [first_symbol, first_symbol + n_input), output follows it.
  static Alphabets split(const Vocab& vocab, int n_input, int n_output);
};

struct TaskSpec {
  Family family = Family::kBijection;
  std::uint64_t task_id = 0;
  int num_classes = 0;  // CLASSIFY only
  std::vector<Token> input_alphabet;
  std::vector<Token> output_alphabet;
  std::vector<Token> mapping;  // mapping[i] = f(input_alphabet[i])

  Token apply(Token x) const;
  bool in_domain(Token x) const;
};

// Deterministic in task_id. BIJECTION draws a random injection input->output
// (needs |output| >= |input|); CLASSIFY partitions the inputs into
// num_classes near-equal random groups, each labelled by a distinct output
// token; COPY is the identity; CONSTANT maps everything to one output token.
TaskSpec make_task(Family family, std::uint64_t task_id, const Alphabets& alphabets,
                   int num_classes = 4);

struct Example {
  Token x = 0;
  Token y = 0;
  bool operator==(const Example&) const = default;
};

struct ExampleSet {
  std::uint64_t task_id = 0;
  std::vector<Example> examples;
};

// n distinct inputs. For CLASSIFY, label counts differ by at most one and
// every class is present; the result is shuffled so classes interleave.
ExampleSet sample_examples(const TaskSpec& task, int n, std::uint64_t seed);

// Inputs of the task's domain that do not occur in `examples`.
std::vector<Token> complement_queries(const TaskSpec& task, const ExampleSet& examples);

enum class PromptMode { kRotation, kShuffle };

const char* to_string(PromptMode mode);

struct PromptSet {
  PromptMode mode = PromptMode::kRotation;
  std::vector<TokenSequence> prompts;
  std::vector<int> query_index;  // index into the example set
  std::vector<Token> queries;
  std::vector<Token> answers;

  std::size_t size() const { return prompts.size(); }
};

TokenSequence render_zero_shot(Token query, const Vocab& vocab = {});
TokenSequence render_icl(std::span<const Example> demos, Token query, const Vocab& vocab = {});

// Prompt n uses example n as the query and the other N-1 examples, in index
// order, as demonstrations. Requires N >= 2.
PromptSet build_rotation_prompts(const ExampleSet& examples, const Vocab& vocab = {});

// Each prompt shows all N examples in a uniformly shuffled order and ends on a
// query drawn uniformly from the set. Prompts are drawn independently, so
// orders and queries may repeat.
PromptSet build_shuffle_prompts(const ExampleSet& examples, int n_prompts, std::uint64_t seed,
                                const Vocab& vocab = {});

struct ParsedPrompt {
  std::vector<Example> demos;
  Token query = 0;
};

// Inverse of render_icl; throws Error(kFormat) on malformed input.
ParsedPrompt parse_prompt(std::span<const Token> tokens, const Vocab& vocab = {});

std::string task_to_json(const TaskSpec& task, const ExampleSet* examples = nullptr);
TaskSpec task_from_json(const std::string& text);
ExampleSet examples_from_json(const std::string& text);

// ---------------------------------------------------------------------------
// Meta-training distribution.

struct FamilyConfig {
  Vocab vocab;
  int n_input = 30;
  int n_output = 30;
  // Library of fixed tasks the base model learns to recognise from context.
  int library_bijections = 5;
  int library_classify = 2;
  int classify_classes = 4;
  bool library_copy = true;
  std::uint64_t library_seed = 1000;
  int min_shots = 1;
  int max_shots = 16;
  // Share of episodes drawn from fresh random bijections where answers must
  // be recalled from earlier pairs in the same prompt.
  double recall_fraction = 0.5;
  int recall_min_domain = 2;
  int recall_max_domain = 8;
  int recall_max_pairs = 12;
};

struct Episode {
  TokenSequence tokens;
  std::vector<Token> targets;  // next-token target per position, -1 = unscored
};

// Task ids for fresh bijections. Training draws from the training range;
// evaluation of held-out mappings uses ids from the held-out range.
inline constexpr std::uint64_t kTrainBijectionBase = 1ull << 40;
inline constexpr std::uint64_t kHeldOutBijectionBase = 1ull << 52;

class TaskFamily {
 public:
  explicit TaskFamily(const FamilyConfig& config = {});

  const FamilyConfig& config() const { return config_; }
  const Alphabets& alphabets() const { return alphabets_; }
  const std::vector<TaskSpec>& library() const { return library_; }
  const TaskSpec& library_task(std::uint64_t task_id) const;

  TaskSpec fresh_bijection(std::uint64_t task_id) const;
  Episode sample_episode(std::mt19937_64& rng) const;

  // Longest episode sample_episode can emit.
  int max_episode_length() const;

 private:
  Episode library_episode(std::mt19937_64& rng) const;
  Episode recall_episode(std::mt19937_64& rng) const;

  FamilyConfig config_;
  Alphabets alphabets_;
  std::vector<TaskSpec> library_;
};

}  // namespace dyvec::taskgen
