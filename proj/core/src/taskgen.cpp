#include "dyvec/taskgen.hpp"

#include "dyvec/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <numeric>
#include <set>

namespace dyvec::taskgen {

using nlohmann::json;

const char* to_string(Family family) {
  switch (family) {
    case Family::kBijection: return "BIJECTION";
    case Family::kClassify: return "CLASSIFY";
    case Family::kCopy: return "COPY";
    case Family::kConstant: return "CONSTANT";
  }
  return "?";
}

Family family_from_string(const std::string& name) {
  for (Family f : {Family::kBijection, Family::kClassify, Family::kCopy, Family::kConstant}) {
    if (name == to_string(f)) return f;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown task family '" + name + "'");
}

const char* to_string(PromptMode mode) {
  return mode == PromptMode::kRotation ? "EQR" : "SHUFFLE";
}

Alphabets Alphabets::split(const Vocab& vocab, int n_input, int n_output) {
  require(n_input >= 1 && n_output >= 1, ErrorCode::kInvalidArgument, "empty alphabet");
  require(vocab.first_symbol + n_input + n_output <= vocab.vocab_size, ErrorCode::kOutOfRange,
          "alphabets do not fit in the vocabulary");
  Alphabets a;
  a.input.resize(static_cast<std::size_t>(n_input));
  a.output.resize(static_cast<std::size_t>(n_output));
  std::iota(a.input.begin(), a.input.end(), vocab.first_symbol);
  std::iota(a.output.begin(), a.output.end(), vocab.first_symbol + n_input);
  return a;
}

bool TaskSpec::in_domain(Token x) const {
  return std::find(input_alphabet.begin(), input_alphabet.end(), x) != input_alphabet.end();
}

Token TaskSpec::apply(Token x) const {
  const auto it = std::find(input_alphabet.begin(), input_alphabet.end(), x);
  require(it != input_alphabet.end(), ErrorCode::kOutOfRange,
          "token " + std::to_string(x) + " is not in the task's input alphabet");
  return mapping[static_cast<std::size_t>(it - input_alphabet.begin())];
}

TaskSpec make_task(Family family, std::uint64_t task_id, const Alphabets& alphabets,
                   int num_classes) {
  require(!alphabets.input.empty() && !alphabets.output.empty(), ErrorCode::kInvalidArgument,
          "task alphabets must be nonempty");
  TaskSpec t;
  t.family = family;
  t.task_id = task_id;
  t.input_alphabet = alphabets.input;
  t.output_alphabet = alphabets.output;
  const std::size_t n = t.input_alphabet.size();
  std::mt19937_64 rng(task_id * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(family));
  switch (family) {
    case Family::kBijection: {
      require(alphabets.output.size() >= n, ErrorCode::kInvalidArgument,
              "bijection needs an output alphabet at least as large as the input");
      std::vector<Token> out = alphabets.output;
      std::shuffle(out.begin(), out.end(), rng);
      t.mapping.assign(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(n));
      break;
    }
    case Family::kClassify: {
      require(num_classes >= 2 && static_cast<std::size_t>(num_classes) <= n &&
                  static_cast<std::size_t>(num_classes) <= alphabets.output.size(),
              ErrorCode::kInvalidArgument, "invalid class count");
      t.num_classes = num_classes;
      std::vector<Token> labels = alphabets.output;
      std::shuffle(labels.begin(), labels.end(), rng);
      labels.resize(static_cast<std::size_t>(num_classes));
      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      t.mapping.assign(n, 0);
      for (std::size_t r = 0; r < n; ++r) {
        t.mapping[order[r]] = labels[r % static_cast<std::size_t>(num_classes)];
      }
      break;
    }
    case Family::kCopy:
      t.output_alphabet = t.input_alphabet;
      t.mapping = t.input_alphabet;
      break;
    case Family::kConstant: {
      std::uniform_int_distribution<std::size_t> pick(0, alphabets.output.size() - 1);
      t.mapping.assign(n, alphabets.output[pick(rng)]);
      break;
    }
  }
  return t;
}

ExampleSet sample_examples(const TaskSpec& task, int n, std::uint64_t seed) {
  const std::size_t domain = task.input_alphabet.size();
  require(n >= 1 && static_cast<std::size_t>(n) <= domain, ErrorCode::kOutOfRange,
          "cannot sample " + std::to_string(n) + " distinct examples from an alphabet of " +
              std::to_string(domain));
  std::mt19937_64 rng(seed * 0xD1B54A32D192ED03ull + task.task_id);
  ExampleSet set;
  set.task_id = task.task_id;
  if (task.family == Family::kClassify) {
    const int classes = task.num_classes;
    require(classes <= n, ErrorCode::kInvalidArgument,
            "CLASSIFY needs at least one example per class (" + std::to_string(classes) +
                " classes, n=" + std::to_string(n) + ")");
    // Group inputs by label in first-seen label order.
    std::vector<Token> labels;
    std::vector<std::vector<Token>> members;
    for (std::size_t i = 0; i < domain; ++i) {
      const Token y = task.mapping[i];
      auto it = std::find(labels.begin(), labels.end(), y);
      if (it == labels.end()) {
        labels.push_back(y);
        members.emplace_back();
        it = labels.end() - 1;
      }
      members[static_cast<std::size_t>(it - labels.begin())].push_back(task.input_alphabet[i]);
    }
    std::vector<int> counts(labels.size(), n / classes);
    std::vector<std::size_t> extra(labels.size());
    std::iota(extra.begin(), extra.end(), 0);
    std::shuffle(extra.begin(), extra.end(), rng);
    for (int r = 0; r < n % classes; ++r) ++counts[extra[static_cast<std::size_t>(r)]];
    for (std::size_t c = 0; c < labels.size(); ++c) {
      auto pool = members[c];
      require(static_cast<std::size_t>(counts[c]) <= pool.size(), ErrorCode::kOutOfRange,
              "class has too few members for a balanced sample");
      std::shuffle(pool.begin(), pool.end(), rng);
      for (int k = 0; k < counts[c]; ++k) {
        set.examples.push_back({pool[static_cast<std::size_t>(k)], labels[c]});
      }
    }
    std::shuffle(set.examples.begin(), set.examples.end(), rng);
    return set;
  }
  std::vector<Token> pool = task.input_alphabet;
  std::shuffle(pool.begin(), pool.end(), rng);
  for (int k = 0; k < n; ++k) {
    const Token x = pool[static_cast<std::size_t>(k)];
    set.examples.push_back({x, task.apply(x)});
  }
  return set;
}

std::vector<Token> complement_queries(const TaskSpec& task, const ExampleSet& examples) {
  std::set<Token> used;
  for (const auto& e : examples.examples) used.insert(e.x);
  std::vector<Token> out;
  for (Token x : task.input_alphabet) {
    if (!used.count(x)) out.push_back(x);
  }
  return out;
}

TokenSequence render_zero_shot(Token query, const Vocab& vocab) {
  return {vocab.bos, vocab.q_tag, query, vocab.a_tag};
}

TokenSequence render_icl(std::span<const Example> demos, Token query, const Vocab& vocab) {
  TokenSequence seq;
  seq.reserve(1 + 5 * demos.size() + 3);
  seq.push_back(vocab.bos);
  for (const auto& d : demos) {
    seq.insert(seq.end(), {vocab.q_tag, d.x, vocab.a_tag, d.y, vocab.newline});
  }
  seq.insert(seq.end(), {vocab.q_tag, query, vocab.a_tag});
  return seq;
}

PromptSet build_rotation_prompts(const ExampleSet& examples, const Vocab& vocab) {
  const auto& ex = examples.examples;
  require(ex.size() >= 2, ErrorCode::kInvalidArgument,
          "query rotation needs at least 2 examples, got " + std::to_string(ex.size()));
  PromptSet set;
  set.mode = PromptMode::kRotation;
  std::vector<Example> demos;
  demos.reserve(ex.size() - 1);
  for (std::size_t n = 0; n < ex.size(); ++n) {
    demos.clear();
    for (std::size_t m = 0; m < ex.size(); ++m) {
      if (m != n) demos.push_back(ex[m]);
    }
    set.prompts.push_back(render_icl(demos, ex[n].x, vocab));
    set.query_index.push_back(static_cast<int>(n));
    set.queries.push_back(ex[n].x);
    set.answers.push_back(ex[n].y);
  }
  return set;
}

PromptSet build_shuffle_prompts(const ExampleSet& examples, int n_prompts, std::uint64_t seed,
                                const Vocab& vocab) {
  const auto& ex = examples.examples;
  require(n_prompts >= 1, ErrorCode::kInvalidArgument, "n_prompts must be >= 1");
  require(!ex.empty(), ErrorCode::kEmptyInput, "example set is empty");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, ex.size() - 1);
  PromptSet set;
  set.mode = PromptMode::kShuffle;
  std::vector<Example> demos = ex;
  for (int p = 0; p < n_prompts; ++p) {
    demos = ex;
    std::shuffle(demos.begin(), demos.end(), rng);
    const std::size_t q = pick(rng);
    set.prompts.push_back(render_icl(demos, ex[q].x, vocab));
    set.query_index.push_back(static_cast<int>(q));
    set.queries.push_back(ex[q].x);
    set.answers.push_back(ex[q].y);
  }
  return set;
}

ParsedPrompt parse_prompt(std::span<const Token> tokens, const Vocab& vocab) {
  auto fail = [](const std::string& why) { throw Error(ErrorCode::kFormat, "prompt: " + why); };
  if (tokens.size() < 4 || tokens.front() != vocab.bos) fail("missing BOS");
  if ((tokens.size() - 4) % 5 != 0) fail("unexpected length");
  ParsedPrompt out;
  std::size_t i = 1;
  while (tokens.size() - i > 3) {
    if (tokens[i] != vocab.q_tag || tokens[i + 2] != vocab.a_tag || tokens[i + 4] != vocab.newline)
      fail("malformed demonstration");
    if (vocab.is_reserved(tokens[i + 1]) || vocab.is_reserved(tokens[i + 3]))
      fail("reserved token in demonstration");
    out.demos.push_back({tokens[i + 1], tokens[i + 3]});
    i += 5;
  }
  if (tokens[i] != vocab.q_tag || tokens[i + 2] != vocab.a_tag) fail("malformed query");
  if (vocab.is_reserved(tokens[i + 1])) fail("reserved token as query");
  out.query = tokens[i + 1];
  return out;
}

std::string task_to_json(const TaskSpec& task, const ExampleSet* examples) {
  json j;
  j["task_id"] = task.task_id;
  j["family"] = to_string(task.family);
  j["num_classes"] = task.num_classes;
  j["input_alphabet"] = task.input_alphabet;
  j["output_alphabet"] = task.output_alphabet;
  j["mapping"] = task.mapping;
  if (examples) {
    json pairs = json::array();
    for (const auto& e : examples->examples) pairs.push_back({e.x, e.y});
    j["examples"] = pairs;
  }
  return j.dump(2);
}

TaskSpec task_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    TaskSpec t;
    t.task_id = j.at("task_id").get<std::uint64_t>();
    t.family = family_from_string(j.at("family").get<std::string>());
    t.num_classes = j.value("num_classes", 0);
    t.input_alphabet = j.at("input_alphabet").get<std::vector<Token>>();
    t.output_alphabet = j.at("output_alphabet").get<std::vector<Token>>();
    t.mapping = j.at("mapping").get<std::vector<Token>>();
    require(t.mapping.size() == t.input_alphabet.size(), ErrorCode::kFormat,
            "mapping must cover the input alphabet");
    return t;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormat, std::string("task json: ") + e.what());
  }
}

ExampleSet examples_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    ExampleSet set;
    set.task_id = j.at("task_id").get<std::uint64_t>();
    for (const auto& p : j.at("examples")) {
      set.examples.push_back({p.at(0).get<Token>(), p.at(1).get<Token>()});
    }
    return set;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormat, std::string("example json: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

TaskFamily::TaskFamily(const FamilyConfig& config)
    : config_(config), alphabets_(Alphabets::split(config.vocab, config.n_input, config.n_output)) {
  require(config.min_shots >= 1 && config.max_shots >= config.min_shots, ErrorCode::kInvalidArgument,
          "invalid shot range");
  require(config.max_shots + 1 <= config.n_input, ErrorCode::kInvalidArgument,
          "max_shots + 1 must not exceed the input alphabet");
  require(config.recall_min_domain >= 1 && config.recall_max_domain >= config.recall_min_domain &&
              config.recall_max_domain <= config.n_input &&
              config.recall_max_pairs > config.recall_max_domain,
          ErrorCode::kInvalidArgument, "invalid recall episode ranges");
  std::uint64_t id = config.library_seed;
  for (int i = 0; i < config.library_bijections; ++i) {
    library_.push_back(make_task(Family::kBijection, id++, alphabets_));
  }
  for (int i = 0; i < config.library_classify; ++i) {
    library_.push_back(make_task(Family::kClassify, id++, alphabets_, config.classify_classes));
  }
  if (config.library_copy) library_.push_back(make_task(Family::kCopy, id++, alphabets_));
  require(!library_.empty() || config.recall_fraction >= 1.0, ErrorCode::kInvalidArgument,
          "task library is empty");
}

const TaskSpec& TaskFamily::library_task(std::uint64_t task_id) const {
  for (const auto& t : library_) {
    if (t.task_id == task_id) return t;
  }
  throw Error(ErrorCode::kOutOfRange, "task " + std::to_string(task_id) + " is not in the library");
}

TaskSpec TaskFamily::fresh_bijection(std::uint64_t task_id) const {
  return make_task(Family::kBijection, task_id, alphabets_);
}

int TaskFamily::max_episode_length() const {
  const int icl = 1 + 5 * config_.max_shots + 4;
  const int recall = 1 + 5 * config_.recall_max_pairs;
  return std::max(icl, recall);
}

Episode TaskFamily::sample_episode(std::mt19937_64& rng) const {
  std::bernoulli_distribution recall(config_.recall_fraction);
  if (library_.empty() || recall(rng)) return recall_episode(rng);
  return library_episode(rng);
}

Episode TaskFamily::library_episode(std::mt19937_64& rng) const {
  const auto& vocab = config_.vocab;
  std::uniform_int_distribution<std::size_t> pick_task(0, library_.size() - 1);
  std::uniform_int_distribution<int> pick_shots(config_.min_shots, config_.max_shots);
  const TaskSpec& task = library_[pick_task(rng)];
  const int shots = pick_shots(rng);
  std::vector<Token> inputs = task.input_alphabet;
  std::shuffle(inputs.begin(), inputs.end(), rng);
  inputs.resize(static_cast<std::size_t>(shots + 1));

  Episode ep;
  ep.tokens.push_back(vocab.bos);
  for (int k = 0; k <= shots; ++k) {
    const Token x = inputs[static_cast<std::size_t>(k)];
    ep.tokens.insert(ep.tokens.end(), {vocab.q_tag, x, vocab.a_tag, task.apply(x)});
    if (k < shots) ep.tokens.push_back(vocab.newline);
  }
  // Score every answer: each one is an ICL prediction from the pairs before it.
  ep.targets.assign(ep.tokens.size(), -1);
  for (std::size_t i = 0; i + 1 < ep.tokens.size(); ++i) {
    if (ep.tokens[i] == vocab.a_tag) ep.targets[i] = ep.tokens[i + 1];
  }
  return ep;
}

Episode TaskFamily::recall_episode(std::mt19937_64& rng) const {
  const auto& vocab = config_.vocab;
  std::uniform_int_distribution<std::uint64_t> pick_id(0, kHeldOutBijectionBase - kTrainBijectionBase - 1);
  const TaskSpec task = fresh_bijection(kTrainBijectionBase + pick_id(rng));
  std::uniform_int_distribution<int> pick_domain(config_.recall_min_domain, config_.recall_max_domain);
  const int domain = pick_domain(rng);
  std::uniform_int_distribution<int> pick_pairs(domain + 1, config_.recall_max_pairs);
  const int pairs = pick_pairs(rng);
  std::vector<Token> inputs = task.input_alphabet;
  std::shuffle(inputs.begin(), inputs.end(), rng);
  inputs.resize(static_cast<std::size_t>(domain));
  std::uniform_int_distribution<std::size_t> pick_x(0, inputs.size() - 1);

  Episode ep;
  ep.tokens.push_back(vocab.bos);
  ep.targets.push_back(-1);
  std::set<Token> seen;
  for (int k = 0; k < pairs; ++k) {
    const Token x = inputs[pick_x(rng)];
    const Token y = task.apply(x);
    ep.tokens.insert(ep.tokens.end(), {vocab.q_tag, x, vocab.a_tag, y});
    ep.targets.insert(ep.targets.end(), {-1, -1, seen.count(x) ? y : -1, -1});
    seen.insert(x);
    if (k + 1 < pairs) {
      ep.tokens.push_back(vocab.newline);
      ep.targets.push_back(-1);
    }
  }
  return ep;
}

}  // namespace dyvec::taskgen
