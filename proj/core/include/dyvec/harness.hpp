#pragma once

#include "dyvec/dyvec.hpp"
#include "dyvec/extract.hpp"
#include "dyvec/intervene.hpp"
#include "dyvec/model.hpp"
#include "dyvec/optimize.hpp"
#include "dyvec/taskgen.hpp"
#include "dyvec/trainer.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace dyvec::harness {

// Extraction mode: EQR over the example set, or SHUFFLE with n prompts.
struct ModeSpec {
  taskgen::PromptMode mode = taskgen::PromptMode::kRotation;
  int n_prompts = 0;  // SHUFFLE only

  // "EQR" or "SHUFFLE:<n>".
  std::string label() const;
  static ModeSpec parse(const std::string& text);
  bool operator==(const ModeSpec&) const = default;
};

taskgen::PromptSet build_prompts(const taskgen::ExampleSet& examples, const ModeSpec& mode,
                                 std::uint64_t seed);

// Held-out ICL measurement: fresh bijections from the held-out id range,
// `shots` demonstrations each, queried on one demonstrated input.
struct GateConfig {
  int mappings = 200;
  int shots = 4;
  double threshold = 0.90;
  std::uint64_t seed = 0;
};

struct GateReport {
  int mappings = 0;
  int shots = 0;
  double accuracy = 0.0;
  double threshold = 0.0;
  bool passed = false;

  std::string to_json() const;
};

GateReport measure_icl_gate(const model::Model& model, const taskgen::TaskFamily& family,
                            const GateConfig& gate);

struct ExperimentConfig {
  model::ModelConfig model;
  model::TrainOptions train;
  taskgen::FamilyConfig family;
  GateConfig gate;

  std::string checkpoint;                 // input checkpoint for later stages
  std::vector<std::uint64_t> tasks;       // library task ids; empty = experiment defaults
  std::vector<int> shots{8};
  std::vector<int> granularities{1, 2, 4, 8};
  std::vector<extract::Source> sources{extract::Source::kSar};
  std::vector<ModeSpec> modes{{taskgen::PromptMode::kRotation, 0}};
  std::vector<Strategy> strategies = default_strategy_candidates();
  opt::PolicyOptions policy;
  std::vector<std::uint64_t> seeds{0, 1, 2};

  // Single-run parameters for extract / optimize / eval.
  std::uint64_t task_id = 0;
  int granularity = 4;
  std::string latent;                     // optimize input
  std::string artifact;                   // eval input (DYVEC)
  std::string method = "DYVEC";           // eval method
  int baseline_layer = -1;                // TV/FV layer, -1 = best on the example set
  float fv_scale = 1.0f;
  bool timing = false;
  intervene::TimingOptions timing_options;
  bool allow_foreign_model = false;
  bool relaxed_strategy = false;

  // Transfer inputs.
  std::vector<std::string> transfer_latents;
  std::vector<std::string> transfer_artifacts;

  std::uint64_t seed = 0;
  std::string out = "out";

  std::string to_json() const;
  static ExperimentConfig from_json(const std::string& text);
  // SHA-256 of the canonical JSON.
  std::string hash() const;
};

ExperimentConfig load_config(const std::string& path);

// Every input and output file of a command with its content hash.
struct RunManifest {
  std::string command;
  std::string config_hash;
  std::map<std::string, std::string> inputs;   // path -> sha256
  std::map<std::string, std::string> outputs;  // path -> sha256

  void add_input(const std::string& path);
  void add_output(const std::string& path);
  std::string to_json() const;
  // Hash over the command, config hash and input hashes.
  std::string hash() const;
};

// One extract -> segment -> strategy/position search -> evaluate run.
struct RunSpec {
  std::uint64_t task_id = 0;
  int shots = 8;
  int granularity = 4;
  extract::Source source = extract::Source::kSar;
  ModeSpec mode;
  std::uint64_t seed = 0;
  std::vector<Strategy> strategies = default_strategy_candidates();
  opt::PolicyOptions policy;
};

struct RunOutcome {
  extract::LatentFile latent;
  SegmentGrid grid;
  opt::StrategySearch search;
  DyVecArtifact artifact;
  std::vector<Token> test_queries;
  intervene::MetricsReport zero_shot;
  intervene::MetricsReport icl;
  intervene::MetricsReport dyvec;
};

extract::LatentFile extract_task(const model::Model& model, const taskgen::TaskSpec& task, int shots,
                                 extract::Source source, const ModeSpec& mode, std::uint64_t seed);

RunOutcome run_pipeline(const model::Model& model, const taskgen::TaskFamily& family, const RunSpec& spec);

// The library tasks used when a config names none: every bijection and
// classification task of the library.
std::vector<std::uint64_t> default_tasks(const taskgen::TaskFamily& family);

struct AblationRow {
  std::uint64_t task_id = 0;
  std::uint64_t seed = 0;
  std::string source;
  std::string mode;
  int granularity = 0;
  int shots = 0;
  Strategy strategy;
  int n_positions = 0;
  double final_ce = 0.0;
  double zero_shot_accuracy = 0.0;
  double icl_accuracy = 0.0;
  double dyvec_accuracy = 0.0;
  double dyvec_f1 = 0.0;
};

using Progress = std::function<void(const std::string&)>;

// Full sweep over tasks x shots x sources x modes x granularities x seeds.
std::vector<AblationRow> run_ablation(const model::Model& model, const taskgen::TaskFamily& family,
                                      const ExperimentConfig& config, const Progress& progress = {});

// Per-cell rows followed by mean-over-tasks summary rows (task_id "mean").
std::string ablation_csv(const std::vector<AblationRow>& rows);

struct TransferCell {
  std::string segments_from;   // latent X
  std::string positions_from;  // artifact K
  std::uint64_t task_id = 0;
  double zero_shot_accuracy = 0.0;
  double accuracy = 0.0;
  double f1 = 0.0;
};

// Every (latent X, artifact K) pair: positions and strategy from K,
// segments from X, evaluated on the queries outside X's example set.
std::vector<TransferCell> transfer_matrix(const model::Model& model,
                                          const std::vector<std::string>& latent_labels,
                                          const std::vector<extract::LatentFile>& latents,
                                          const std::vector<std::string>& artifact_labels,
                                          const std::vector<DyVecArtifact>& artifacts);

std::string transfer_csv(const std::vector<TransferCell>& cells);

// CLI commands. Each writes its outputs and a manifest.json under config.out
// and returns the path of its primary output.
std::string cmd_train_base(const ExperimentConfig& config, const Progress& progress = {});
std::string cmd_extract(const ExperimentConfig& config);
std::string cmd_optimize(const ExperimentConfig& config);
std::string cmd_eval(const ExperimentConfig& config);
std::string cmd_ablate(const ExperimentConfig& config, const Progress& progress = {});
std::string cmd_transfer(const ExperimentConfig& config);

}  // namespace dyvec::harness
