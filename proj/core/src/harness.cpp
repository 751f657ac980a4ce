#include "dyvec/harness.hpp"

#include "dyvec/blob_io.hpp"
#include "dyvec/checkpoint.hpp"
#include "dyvec/error.hpp"
#include "dyvec/hash.hpp"

#include <json.hpp>

#include <filesystem>
#include <random>
#include <set>
#include <sstream>

namespace dyvec::harness {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Prompts and the ICL gate.

std::string ModeSpec::label() const {
  return mode == taskgen::PromptMode::kRotation ? "EQR" : "SHUFFLE:" + std::to_string(n_prompts);
}

ModeSpec ModeSpec::parse(const std::string& text) {
  if (text == "EQR") return {taskgen::PromptMode::kRotation, 0};
  const std::string prefix = "SHUFFLE:";
  if (text.rfind(prefix, 0) == 0) {
    try {
      const int n = std::stoi(text.substr(prefix.size()));
      require(n >= 1, ErrorCode::kInvalidArgument, "SHUFFLE needs at least one prompt");
      return {taskgen::PromptMode::kShuffle, n};
    } catch (const std::logic_error&) {
    }
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown extraction mode '" + text + "' (EQR or SHUFFLE:<n>)");
}

taskgen::PromptSet build_prompts(const taskgen::ExampleSet& examples, const ModeSpec& mode,
                                 std::uint64_t seed) {
  if (mode.mode == taskgen::PromptMode::kRotation) return taskgen::build_rotation_prompts(examples);
  return taskgen::build_shuffle_prompts(examples, mode.n_prompts, seed);
}

std::string GateReport::to_json() const {
  return json{{"mappings", mappings},
              {"shots", shots},
              {"accuracy", accuracy},
              {"threshold", threshold},
              {"passed", passed}}
      .dump(2);
}

GateReport measure_icl_gate(const model::Model& model, const taskgen::TaskFamily& family,
                            const GateConfig& gate) {
  require(gate.mappings >= 1 && gate.shots >= 1, ErrorCode::kInvalidArgument, "invalid gate config");
  std::mt19937_64 rng(gate.seed ^ 0x9E3779B97F4A7C15ull);
  model::ForwardOptions options;
  options.last_logits_only = true;
  int correct = 0;
  for (int m = 0; m < gate.mappings; ++m) {
    const auto task = family.fresh_bijection(taskgen::kHeldOutBijectionBase +
                                             gate.seed * static_cast<std::uint64_t>(gate.mappings) +
                                             static_cast<std::uint64_t>(m));
    const auto examples = taskgen::sample_examples(task, gate.shots, rng());
    const auto& target = examples.examples[rng() % examples.examples.size()];
    const auto prompt = taskgen::render_icl(examples.examples, target.x, family.config().vocab);
    const auto result = model.forward(prompt, options);
    const auto row = result.logits.row(0);
    correct += model::argmax(std::span<const float>(row.data(), static_cast<std::size_t>(row.size()))) ==
               target.y;
  }
  GateReport r;
  r.mappings = gate.mappings;
  r.shots = gate.shots;
  r.accuracy = static_cast<double>(correct) / gate.mappings;
  r.threshold = gate.threshold;
  r.passed = r.accuracy >= gate.threshold;
  return r;
}

// ---------------------------------------------------------------------------
// Configuration.

namespace {

json strategies_to_json(const std::vector<Strategy>& s) {
  json out = json::array();
  for (const auto& x : s) out.push_back({x.alpha, x.beta});
  return out;
}

}  // namespace

std::string ExperimentConfig::to_json() const {
  json j;
  j["model"] = {{"n_layers", model.n_layers},     {"n_heads", model.n_heads},
                {"d_model", model.d_model},       {"vocab_size", model.vocab_size},
                {"max_seq_len", model.max_seq_len}, {"mlp_ratio", model.mlp_ratio}};
  j["train"] = {{"steps", train.steps},
                {"lr", train.lr},
                {"batch_size", train.batch_size},
                {"warmup_steps", train.warmup_steps},
                {"min_lr_ratio", train.min_lr_ratio},
                {"weight_decay", train.weight_decay},
                {"grad_clip", train.grad_clip},
                {"log_every", train.log_every}};
  j["family"] = {{"n_input", family.n_input},
                 {"n_output", family.n_output},
                 {"library_bijections", family.library_bijections},
                 {"library_classify", family.library_classify},
                 {"classify_classes", family.classify_classes},
                 {"library_copy", family.library_copy},
                 {"library_seed", family.library_seed},
                 {"min_shots", family.min_shots},
                 {"max_shots", family.max_shots},
                 {"recall_fraction", family.recall_fraction},
                 {"recall_min_domain", family.recall_min_domain},
                 {"recall_max_domain", family.recall_max_domain},
                 {"recall_max_pairs", family.recall_max_pairs}};
  j["gate"] = {{"mappings", gate.mappings},
               {"shots", gate.shots},
               {"threshold", gate.threshold},
               {"seed", gate.seed}};
  j["checkpoint"] = checkpoint;
  j["tasks"] = tasks;
  j["shots"] = shots;
  j["granularities"] = granularities;
  json src = json::array();
  for (auto s : sources) src.push_back(extract::to_string(s));
  j["sources"] = src;
  json md = json::array();
  for (const auto& m : modes) md.push_back(m.label());
  j["modes"] = md;
  j["strategies"] = strategies_to_json(strategies);
  j["policy"] = {{"epsilon", policy.epsilon},
                 {"learning_rate", policy.learning_rate},
                 {"steps", policy.steps},
                 {"seed", policy.seed},
                 {"use_baseline", policy.use_baseline},
                 {"baseline_decay", policy.baseline_decay}};
  j["seeds"] = seeds;
  j["task_id"] = task_id;
  j["granularity"] = granularity;
  j["latent"] = latent;
  j["artifact"] = artifact;
  j["method"] = method;
  j["baseline_layer"] = baseline_layer;
  j["fv_scale"] = fv_scale;
  j["timing"] = timing;
  j["timing_options"] = {{"warmup", timing_options.warmup},
                         {"min_queries", timing_options.min_queries},
                         {"rounds", timing_options.rounds}};
  j["allow_foreign_model"] = allow_foreign_model;
  j["relaxed_strategy"] = relaxed_strategy;
  j["transfer_latents"] = transfer_latents;
  j["transfer_artifacts"] = transfer_artifacts;
  j["seed"] = seed;
  j["out"] = out;
  return j.dump(2);
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
  ExperimentConfig c;
  try {
    const json j = json::parse(text);
    require(j.is_object(), ErrorCode::kFormat, "config must be a JSON object");
    static const std::set<std::string> known = {
        "model", "train", "family", "gate", "checkpoint", "tasks", "shots", "granularities", "sources",
        "modes", "strategies", "policy", "seeds", "task_id", "granularity", "latent", "artifact",
        "method", "baseline_layer", "fv_scale", "timing", "timing_options", "allow_foreign_model",
        "relaxed_strategy", "transfer_latents", "transfer_artifacts", "seed", "out"};
    for (const auto& [key, value] : j.items()) {
      require(known.count(key) > 0, ErrorCode::kFormat, "unknown config key '" + key + "'");
    }
    if (j.contains("model")) {
      const auto& m = j["model"];
      c.model.n_layers = m.value("n_layers", c.model.n_layers);
      c.model.n_heads = m.value("n_heads", c.model.n_heads);
      c.model.d_model = m.value("d_model", c.model.d_model);
      c.model.vocab_size = m.value("vocab_size", c.model.vocab_size);
      c.model.max_seq_len = m.value("max_seq_len", c.model.max_seq_len);
      c.model.mlp_ratio = m.value("mlp_ratio", c.model.mlp_ratio);
    }
    if (j.contains("train")) {
      const auto& t = j["train"];
      c.train.steps = t.value("steps", c.train.steps);
      c.train.lr = t.value("lr", c.train.lr);
      c.train.batch_size = t.value("batch_size", c.train.batch_size);
      c.train.warmup_steps = t.value("warmup_steps", c.train.warmup_steps);
      c.train.min_lr_ratio = t.value("min_lr_ratio", c.train.min_lr_ratio);
      c.train.weight_decay = t.value("weight_decay", c.train.weight_decay);
      c.train.grad_clip = t.value("grad_clip", c.train.grad_clip);
      c.train.log_every = t.value("log_every", c.train.log_every);
    }
    if (j.contains("family")) {
      const auto& f = j["family"];
      auto& fc = c.family;
      fc.n_input = f.value("n_input", fc.n_input);
      fc.n_output = f.value("n_output", fc.n_output);
      fc.library_bijections = f.value("library_bijections", fc.library_bijections);
      fc.library_classify = f.value("library_classify", fc.library_classify);
      fc.classify_classes = f.value("classify_classes", fc.classify_classes);
      fc.library_copy = f.value("library_copy", fc.library_copy);
      fc.library_seed = f.value("library_seed", fc.library_seed);
      fc.min_shots = f.value("min_shots", fc.min_shots);
      fc.max_shots = f.value("max_shots", fc.max_shots);
      fc.recall_fraction = f.value("recall_fraction", fc.recall_fraction);
      fc.recall_min_domain = f.value("recall_min_domain", fc.recall_min_domain);
      fc.recall_max_domain = f.value("recall_max_domain", fc.recall_max_domain);
      fc.recall_max_pairs = f.value("recall_max_pairs", fc.recall_max_pairs);
    }
    if (j.contains("gate")) {
      const auto& g = j["gate"];
      c.gate.mappings = g.value("mappings", c.gate.mappings);
      c.gate.shots = g.value("shots", c.gate.shots);
      c.gate.threshold = g.value("threshold", c.gate.threshold);
      c.gate.seed = g.value("seed", c.gate.seed);
    }
    c.checkpoint = j.value("checkpoint", c.checkpoint);
    c.tasks = j.value("tasks", c.tasks);
    c.shots = j.value("shots", c.shots);
    c.granularities = j.value("granularities", c.granularities);
    if (j.contains("sources")) {
      c.sources.clear();
      for (const auto& s : j["sources"]) c.sources.push_back(extract::source_from_string(s.get<std::string>()));
    }
    if (j.contains("modes")) {
      c.modes.clear();
      for (const auto& m : j["modes"]) c.modes.push_back(ModeSpec::parse(m.get<std::string>()));
    }
    if (j.contains("strategies")) {
      c.strategies.clear();
      for (const auto& s : j["strategies"]) c.strategies.push_back({s.at(0).get<float>(), s.at(1).get<float>()});
    }
    if (j.contains("policy")) {
      const auto& p = j["policy"];
      c.policy.epsilon = p.value("epsilon", c.policy.epsilon);
      c.policy.learning_rate = p.value("learning_rate", c.policy.learning_rate);
      c.policy.steps = p.value("steps", c.policy.steps);
      c.policy.seed = p.value("seed", c.policy.seed);
      c.policy.use_baseline = p.value("use_baseline", c.policy.use_baseline);
      c.policy.baseline_decay = p.value("baseline_decay", c.policy.baseline_decay);
    }
    c.seeds = j.value("seeds", c.seeds);
    c.task_id = j.value("task_id", c.task_id);
    c.granularity = j.value("granularity", c.granularity);
    c.latent = j.value("latent", c.latent);
    c.artifact = j.value("artifact", c.artifact);
    c.method = j.value("method", c.method);
    c.baseline_layer = j.value("baseline_layer", c.baseline_layer);
    c.fv_scale = j.value("fv_scale", c.fv_scale);
    c.timing = j.value("timing", c.timing);
    if (j.contains("timing_options")) {
      const auto& t = j["timing_options"];
      c.timing_options.warmup = t.value("warmup", c.timing_options.warmup);
      c.timing_options.min_queries = t.value("min_queries", c.timing_options.min_queries);
      c.timing_options.rounds = t.value("rounds", c.timing_options.rounds);
    }
    c.allow_foreign_model = j.value("allow_foreign_model", c.allow_foreign_model);
    c.relaxed_strategy = j.value("relaxed_strategy", c.relaxed_strategy);
    c.transfer_latents = j.value("transfer_latents", c.transfer_latents);
    c.transfer_artifacts = j.value("transfer_artifacts", c.transfer_artifacts);
    c.seed = j.value("seed", c.seed);
    c.out = j.value("out", c.out);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormat, std::string("config: ") + e.what());
  }
  c.model.validate();
  for (int s : c.shots) require(s >= 2, ErrorCode::kInvalidArgument, "shots must be >= 2");
  for (int g : c.granularities) {
    require(g >= 1 && c.model.d_model % g == 0, ErrorCode::kNotDivisible,
            "granularity " + std::to_string(g) + " does not divide d_model");
  }
  return c;
}

std::string ExperimentConfig::hash() const {
  return sha256_hex(to_json());
}

ExperimentConfig load_config(const std::string& path) {
  return ExperimentConfig::from_json(read_text_file(path));
}

void RunManifest::add_input(const std::string& path) {
  inputs[path] = sha256_file(path);
}

void RunManifest::add_output(const std::string& path) {
  outputs[path] = sha256_file(path);
}

std::string RunManifest::to_json() const {
  return json{{"command", command},
              {"config_hash", config_hash},
              {"manifest_hash", hash()},
              {"inputs", inputs},
              {"outputs", outputs}}
      .dump(2);
}

std::string RunManifest::hash() const {
  Sha256 h;
  h.update(command).update("\n").update(config_hash).update("\n");
  for (const auto& [path, sha] : inputs) h.update(sha).update("\n");
  return h.hex_digest();
}

// ---------------------------------------------------------------------------
// Pipeline.

extract::LatentFile extract_task(const model::Model& model, const taskgen::TaskSpec& task, int shots,
                                 extract::Source source, const ModeSpec& mode, std::uint64_t seed) {
  extract::LatentFile file;
  file.task = task;
  file.examples = taskgen::sample_examples(task, shots, seed);
  const auto prompts = build_prompts(file.examples, mode, seed);
  const auto latents = extract::extract_latents(model, prompts, source);
  file.latent = extract::aggregate(latents);
  return file;
}

namespace {

// Grid whose extraction summary also carries the example set, so the test
// split can be rebuilt from an artifact alone.
SegmentGrid grid_for(const extract::LatentFile& file, int granularity) {
  SegmentGrid grid = segment(file.latent, granularity, file.task.task_id);
  json ex = json::parse(grid.extraction);
  json pairs = json::array();
  for (const auto& e : file.examples.examples) pairs.push_back({e.x, e.y});
  ex["examples"] = pairs;
  grid.extraction = ex.dump();
  return grid;
}

taskgen::ExampleSet examples_of(const DyVecArtifact& artifact) {
  taskgen::ExampleSet set;
  set.task_id = artifact.task_id;
  require(!artifact.extraction.empty(), ErrorCode::kFormat, "artifact does not record its example set");
  const json ex = json::parse(artifact.extraction);
  require(ex.contains("examples"), ErrorCode::kFormat, "artifact does not record its example set");
  for (const auto& p : ex.at("examples")) set.examples.push_back({p.at(0).get<Token>(), p.at(1).get<Token>()});
  return set;
}

intervene::MetricsReport evaluate_method(const model::Model& model, const taskgen::TaskSpec& task,
                                         std::span<const Token> queries, intervene::MethodSpec spec) {
  return intervene::evaluate(model, spec, task, queries);
}

}  // namespace

RunOutcome run_pipeline(const model::Model& model, const taskgen::TaskFamily& family, const RunSpec& spec) {
  const auto& task = family.library_task(spec.task_id);
  RunOutcome out;
  out.latent = extract_task(model, task, spec.shots, spec.source, spec.mode, spec.seed);
  out.grid = grid_for(out.latent, spec.granularity);
  opt::PolicyOptions policy = spec.policy;
  policy.seed = spec.policy.seed + spec.seed;
  out.search = opt::select_strategy(model, out.grid, out.latent.examples, spec.strategies, policy);
  const auto& win = out.search.winner();
  out.artifact = assemble(out.grid, win.search.positions, win.strategy);
  out.test_queries = taskgen::complement_queries(task, out.latent.examples);

  intervene::MethodSpec zs;
  out.zero_shot = evaluate_method(model, task, out.test_queries, zs);
  intervene::MethodSpec icl;
  icl.method = intervene::Method::kIcl;
  icl.demos = out.latent.examples.examples;
  out.icl = evaluate_method(model, task, out.test_queries, icl);
  intervene::MethodSpec dv;
  dv.method = intervene::Method::kDyVec;
  dv.artifact = &out.artifact;
  dv.dyvec.relaxed_strategy = true;
  out.dyvec = evaluate_method(model, task, out.test_queries, dv);
  return out;
}

std::vector<std::uint64_t> default_tasks(const taskgen::TaskFamily& family) {
  std::vector<std::uint64_t> ids;
  for (const auto& t : family.library()) {
    if (t.family == taskgen::Family::kBijection || t.family == taskgen::Family::kClassify) {
      ids.push_back(t.task_id);
    }
  }
  return ids;
}

std::vector<AblationRow> run_ablation(const model::Model& model, const taskgen::TaskFamily& family,
                                      const ExperimentConfig& config, const Progress& progress) {
  const auto tasks = config.tasks.empty() ? default_tasks(family) : config.tasks;
  std::vector<AblationRow> rows;
  for (auto task_id : tasks) {
    for (int shots : config.shots) {
      for (auto source : config.sources) {
        for (const auto& mode : config.modes) {
          for (int s : config.granularities) {
            for (auto seed : config.seeds) {
              RunSpec spec;
              spec.task_id = task_id;
              spec.shots = shots;
              spec.granularity = s;
              spec.source = source;
              spec.mode = mode;
              spec.seed = seed;
              spec.strategies = config.strategies;
              spec.policy = config.policy;
              const auto run = run_pipeline(model, family, spec);
              AblationRow r;
              r.task_id = task_id;
              r.seed = seed;
              r.source = extract::to_string(source);
              r.mode = mode.label();
              r.granularity = s;
              r.shots = shots;
              r.strategy = run.artifact.strategy;
              r.n_positions = static_cast<int>(run.artifact.positions.size());
              r.final_ce = run.search.winner().final_ce;
              r.zero_shot_accuracy = run.zero_shot.accuracy;
              r.icl_accuracy = run.icl.accuracy;
              r.dyvec_accuracy = run.dyvec.accuracy;
              r.dyvec_f1 = run.dyvec.macro_f1;
              rows.push_back(r);
              if (progress) {
                std::ostringstream msg;
                msg << "task " << task_id << " shots " << shots << ' ' << r.source << ' ' << r.mode << " S=" << s
                    << " seed " << seed << ": zero-shot " << r.zero_shot_accuracy << " icl " << r.icl_accuracy
                    << " dyvec " << r.dyvec_accuracy;
                progress(msg.str());
              }
            }
          }
        }
      }
    }
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out.precision(10);
  out << "task_id,seed,source,mode,granularity,shots,alpha,beta,n_positions,final_ce,zero_shot_accuracy,"
         "icl_accuracy,dyvec_accuracy,dyvec_f1\n";
  for (const auto& r : rows) {
    out << r.task_id << ',' << r.seed << ',' << r.source << ',' << r.mode << ',' << r.granularity << ','
        << r.shots << ',' << r.strategy.alpha << ',' << r.strategy.beta << ',' << r.n_positions << ','
        << r.final_ce << ',' << r.zero_shot_accuracy << ',' << r.icl_accuracy << ',' << r.dyvec_accuracy << ','
        << r.dyvec_f1 << '\n';
  }
  // Mean over tasks and seeds for every (source, mode, granularity, shots) cell.
  struct Acc {
    int n = 0;
    double positions = 0, ce = 0, zs = 0, icl = 0, dv = 0, f1 = 0;
  };
  std::map<std::tuple<std::string, std::string, int, int>, Acc> cells;
  std::vector<std::tuple<std::string, std::string, int, int>> order;
  for (const auto& r : rows) {
    const auto key = std::make_tuple(r.source, r.mode, r.granularity, r.shots);
    if (!cells.count(key)) order.push_back(key);
    auto& a = cells[key];
    ++a.n;
    a.positions += r.n_positions;
    a.ce += r.final_ce;
    a.zs += r.zero_shot_accuracy;
    a.icl += r.icl_accuracy;
    a.dv += r.dyvec_accuracy;
    a.f1 += r.dyvec_f1;
  }
  for (const auto& key : order) {
    const auto& a = cells[key];
    const auto& [source, mode, s, shots] = key;
    out << "mean,all," << source << ',' << mode << ',' << s << ',' << shots << ",,," << a.positions / a.n << ','
        << a.ce / a.n << ',' << a.zs / a.n << ',' << a.icl / a.n << ',' << a.dv / a.n << ',' << a.f1 / a.n << '\n';
  }
  return out.str();
}

std::vector<TransferCell> transfer_matrix(const model::Model& model,
                                          const std::vector<std::string>& latent_labels,
                                          const std::vector<extract::LatentFile>& latents,
                                          const std::vector<std::string>& artifact_labels,
                                          const std::vector<DyVecArtifact>& artifacts) {
  require(latent_labels.size() == latents.size() && artifact_labels.size() == artifacts.size(),
          ErrorCode::kShapeMismatch, "transfer labels do not match inputs");
  require(!latents.empty() && !artifacts.empty(), ErrorCode::kEmptyInput, "transfer needs latents and artifacts");
  std::vector<TransferCell> cells;
  for (std::size_t x = 0; x < latents.size(); ++x) {
    const auto& lx = latents[x];
    const auto queries = taskgen::complement_queries(lx.task, lx.examples);
    const auto zs = evaluate_method(model, lx.task, queries, {});
    for (std::size_t k = 0; k < artifacts.size(); ++k) {
      const auto grid = grid_for(lx, artifacts[k].granularity);
      const auto theta = transfer(grid, artifacts[k]);
      intervene::MethodSpec dv;
      dv.method = intervene::Method::kDyVec;
      dv.artifact = &theta;
      dv.dyvec.relaxed_strategy = true;
      const auto r = evaluate_method(model, lx.task, queries, dv);
      cells.push_back({latent_labels[x], artifact_labels[k], lx.task.task_id, zs.accuracy, r.accuracy, r.macro_f1});
    }
  }
  return cells;
}

std::string transfer_csv(const std::vector<TransferCell>& cells) {
  std::ostringstream out;
  out.precision(10);
  out << "segments_from,positions_from,task_id,zero_shot_accuracy,accuracy,f1\n";
  for (const auto& c : cells) {
    out << c.segments_from << ',' << c.positions_from << ',' << c.task_id << ',' << c.zero_shot_accuracy << ','
        << c.accuracy << ',' << c.f1 << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Commands.

namespace {

std::string out_path(const ExperimentConfig& c, const std::string& name) {
  return (fs::path(c.out) / name).string();
}

void finish(RunManifest& manifest, const ExperimentConfig& c, const std::vector<std::string>& outputs) {
  for (const auto& o : outputs) manifest.add_output(o);
  write_text_file(out_path(c, "manifest.json"), manifest.to_json() + "\n");
}

RunManifest start(const std::string& command, const ExperimentConfig& c) {
  RunManifest m;
  m.command = command;
  m.config_hash = c.hash();
  fs::create_directories(c.out);
  write_text_file(out_path(c, "config.json"), c.to_json() + "\n");
  return m;
}

model::Model load_input_checkpoint(const ExperimentConfig& c, RunManifest& manifest) {
  require(!c.checkpoint.empty(), ErrorCode::kInvalidArgument, "config needs a checkpoint path");
  manifest.add_input(c.checkpoint);
  return model::load_checkpoint(c.checkpoint);
}

}  // namespace

std::string cmd_train_base(const ExperimentConfig& config, const Progress& progress) {
  auto manifest = start("train-base", config);
  const taskgen::TaskFamily family(config.family);
  model::ModelConfig mc = config.model;
  mc.seed = config.seed;
  std::ostringstream curve;
  curve << "step,loss,lr\n";
  auto trained = model::train_base(mc, family, config.train, [&](const model::TrainPoint& p) {
    curve << p.step << ',' << p.loss << ',' << p.lr << '\n';
    if (progress) progress("step " + std::to_string(p.step) + " loss " + std::to_string(p.loss));
  });
  const auto ckpt = out_path(config, "checkpoint.dyv");
  model::save_checkpoint(trained.model, ckpt);
  const auto curve_path = out_path(config, "train_curve.csv");
  write_text_file(curve_path, curve.str());
  const auto gate = measure_icl_gate(trained.model, family, config.gate);
  const auto gate_path = out_path(config, "gate.json");
  write_text_file(gate_path, gate.to_json() + "\n");
  if (progress) progress("held-out " + std::to_string(gate.shots) + "-shot ICL accuracy " + std::to_string(gate.accuracy));
  finish(manifest, config, {ckpt, curve_path, gate_path});
  return ckpt;
}

std::string cmd_extract(const ExperimentConfig& config) {
  auto manifest = start("extract", config);
  const auto model = load_input_checkpoint(config, manifest);
  const taskgen::TaskFamily family(config.family);
  require(!config.shots.empty() && !config.sources.empty() && !config.modes.empty(), ErrorCode::kInvalidArgument,
          "extract needs shots, sources and modes");
  const auto& task = family.library_task(config.task_id);
  const auto file = extract_task(model, task, config.shots.front(), config.sources.front(), config.modes.front(),
                                 config.seed);
  const auto path = out_path(config, "latent.dyv");
  extract::save_latent(file, path);
  finish(manifest, config, {path});
  return path;
}

std::string cmd_optimize(const ExperimentConfig& config) {
  auto manifest = start("optimize", config);
  const auto model = load_input_checkpoint(config, manifest);
  require(!config.latent.empty(), ErrorCode::kInvalidArgument, "config needs a latent path");
  manifest.add_input(config.latent);
  const auto file = extract::load_latent(config.latent);
  require(file.latent.model_hash == model.content_hash(), ErrorCode::kHashMismatch,
          "latent was extracted from a different model");
  const auto grid = grid_for(file, config.granularity);
  opt::PolicyOptions policy = config.policy;
  policy.seed = config.policy.seed + config.seed;
  for (const auto& s : config.strategies) s.validate(config.relaxed_strategy);
  const auto search = opt::select_strategy(model, grid, file.examples, config.strategies, policy);
  const auto& win = search.winner();
  const auto artifact = assemble(grid, win.search.positions, win.strategy);
  const auto path = out_path(config, "artifact.dyv");
  save_artifact(artifact, path);
  const auto log_path = out_path(config, "optimize_log.jsonl");
  write_text_file(log_path, opt::optimization_log(win.search.trace));
  std::ostringstream table;
  table.precision(10);
  table << "alpha,beta,final_ce,n_positions,selected\n";
  for (std::size_t k = 0; k < search.candidates.size(); ++k) {
    const auto& c = search.candidates[k];
    table << c.strategy.alpha << ',' << c.strategy.beta << ',' << c.final_ce << ',' << c.search.positions.size()
          << ',' << (k == search.best ? 1 : 0) << '\n';
  }
  const auto table_path = out_path(config, "strategies.csv");
  write_text_file(table_path, table.str());
  finish(manifest, config, {path, log_path, table_path});
  return path;
}

std::string cmd_eval(const ExperimentConfig& config) {
  auto manifest = start("eval", config);
  const auto model = load_input_checkpoint(config, manifest);
  const taskgen::TaskFamily family(config.family);
  intervene::MethodSpec spec;
  DyVecArtifact artifact;
  intervene::BaselineVector baseline;
  taskgen::ExampleSet examples;
  std::uint64_t task_id = config.task_id;
  const std::string method = config.method;
  if (method == "DYVEC") {
    require(!config.artifact.empty(), ErrorCode::kInvalidArgument, "DYVEC evaluation needs an artifact path");
    manifest.add_input(config.artifact);
    artifact = load_artifact(config.artifact);
    examples = examples_of(artifact);
    task_id = artifact.task_id;
    spec.method = intervene::Method::kDyVec;
    spec.artifact = &artifact;
    spec.dyvec = {config.allow_foreign_model, config.relaxed_strategy};
  } else {
    require(!config.shots.empty(), ErrorCode::kInvalidArgument, "evaluation needs a shot count");
    examples = taskgen::sample_examples(family.library_task(task_id), config.shots.front(), config.seed);
    if (method == "ZERO_SHOT") {
      spec.method = intervene::Method::kZeroShot;
    } else if (method == "ICL") {
      spec.method = intervene::Method::kIcl;
      spec.demos = examples.examples;
    } else if (method == "TV" || method == "FV") {
      const auto kind = method == "TV" ? intervene::BaselineKind::kTv : intervene::BaselineKind::kFv;
      const auto prompts = taskgen::build_rotation_prompts(examples);
      if (config.baseline_layer >= 0) {
        baseline = kind == intervene::BaselineKind::kTv
                       ? intervene::task_vector(model, prompts, config.baseline_layer)
                       : intervene::function_vector(model, prompts, config.baseline_layer, config.fv_scale);
      } else {
        baseline = intervene::select_baseline_layer(model, kind, prompts, examples, config.fv_scale).best;
      }
      spec.method = kind == intervene::BaselineKind::kTv ? intervene::Method::kTv : intervene::Method::kFv;
      spec.baseline = &baseline;
    } else {
      throw Error(ErrorCode::kInvalidArgument,
                  "unknown method '" + method + "' (ZERO_SHOT, ICL, DYVEC, TV, FV)");
    }
  }
  const auto& task = family.library_task(task_id);
  const auto queries = taskgen::complement_queries(task, examples);
  intervene::EvalOptions options;
  options.measure_time = config.timing;
  options.timing = config.timing_options;
  const auto report = intervene::evaluate(model, spec, task, queries, options);
  const auto csv_path = out_path(config, "metrics.csv");
  write_text_file(csv_path, intervene::MetricsReport::csv_header() + "\n" + report.csv_row() + "\n");
  const auto json_path = out_path(config, "metrics.json");
  write_text_file(json_path, report.to_json() + "\n");
  finish(manifest, config, {csv_path, json_path});
  return csv_path;
}

std::string cmd_ablate(const ExperimentConfig& config, const Progress& progress) {
  auto manifest = start("ablate", config);
  const auto model = load_input_checkpoint(config, manifest);
  const taskgen::TaskFamily family(config.family);
  const auto rows = run_ablation(model, family, config, progress);
  const auto path = out_path(config, "ablation.csv");
  write_text_file(path, ablation_csv(rows));
  finish(manifest, config, {path});
  return path;
}

std::string cmd_transfer(const ExperimentConfig& config) {
  auto manifest = start("transfer", config);
  const auto model = load_input_checkpoint(config, manifest);
  std::vector<std::string> x_labels, k_labels;
  std::vector<extract::LatentFile> latents;
  std::vector<DyVecArtifact> artifacts;
  for (const auto& p : config.transfer_latents) {
    manifest.add_input(p);
    latents.push_back(extract::load_latent(p));
    x_labels.push_back(p);
  }
  for (const auto& p : config.transfer_artifacts) {
    manifest.add_input(p);
    artifacts.push_back(load_artifact(p));
    k_labels.push_back(p);
  }
  const auto cells = transfer_matrix(model, x_labels, latents, k_labels, artifacts);
  const auto path = out_path(config, "transfer.csv");
  write_text_file(path, transfer_csv(cells));
  finish(manifest, config, {path});
  return path;
}

}  // namespace dyvec::harness
