// Acceptance suite: one PASS/FAIL line per criterion. Oracles live here and
// are independent of the library code paths they check.

#include "dyvec/blob_io.hpp"
#include "dyvec/checkpoint.hpp"
#include "dyvec/error.hpp"
#include "dyvec/harness.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

using namespace dyvec;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int g_failures = 0;

void report(int id, const std::string& title, const Outcome& o, double secs) {
  if (!o.pass) ++g_failures;
  std::printf("%s [PRIMARY] %d %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, title.c_str(), o.detail.c_str(),
              secs);
  std::fflush(stdout);
}

// Runs the check before reading the clock; argument order is unspecified.
template <typename Check>
void timed_report(int id, const std::string& title, Check&& check) {
  const auto t0 = Clock::now();
  const Outcome o = check();
  report(id, title, o, seconds_since(t0));
}

void note(const std::string& line) {
  std::printf("  %s\n", line.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// Experiment settings shared by criteria 7-11.
const std::vector<std::uint64_t> kTasks{1000, 1001, 1002, 1005, 1006};
const std::vector<std::uint64_t> kSeeds{0, 1, 2};

harness::ExperimentConfig base_config() {
  harness::ExperimentConfig c;
  c.train.steps = 4000;
  c.seed = 0;
  return c;
}

// ---------------------------------------------------------------------------
// 1. Identity injection.

Outcome identity_injection(const model::Model& m, const taskgen::TaskFamily& family) {
  const auto file = harness::extract_task(m, family.library_task(1000), 8, extract::Source::kSar, {}, 0);
  const auto art = assemble(segment(file.latent, 4, 1000), all_positions(4, 4), Strategy{1, 0});
  std::mt19937_64 rng(11);
  const auto& inputs = family.alphabets().input;
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const Token q = inputs[rng() % inputs.size()];
    const auto a = intervene::infer_with_dyvec(m, art, q);
    const auto b = intervene::infer_zero_shot(m, q);
    for (std::size_t c = 0; c < a.logits.size(); ++c) {
      worst = std::max(worst, static_cast<double>(std::abs(a.logits[c] - b.logits[c])));
    }
  }
  return {worst <= 1e-6, "max |logit diff| over 100 queries = " + fmt("%.3g", worst) + " (tol 1e-6)"};
}

// ---------------------------------------------------------------------------
// 2. Segmentation round trip.

Outcome segmentation_round_trip() {
  std::mt19937_64 rng(5);
  std::normal_distribution<float> n(0.0f, 1.0f);
  const int L = 4, d = 128, H = 4;
  bool ok = true;
  for (int trial = 0; trial < 10; ++trial) {
    extract::LatentTensor lat;
    lat.n_layers = L;
    lat.d_model = d;
    lat.values.resize(static_cast<std::size_t>(L) * d);
    for (auto& v : lat.values) v = n(rng);
    for (int s : {1, 2, H / 2, H, 2 * H}) {
      const auto grid = segment(lat, s);
      std::vector<float> joined;
      for (int i = 0; i < L; ++i) {
        for (int j = 0; j < s; ++j) {
          const auto seg = grid.segment(i, j);
          joined.insert(joined.end(), seg.begin(), seg.end());
        }
      }
      ok &= joined.size() == lat.values.size() &&
            std::memcmp(joined.data(), lat.values.data(), joined.size() * sizeof(float)) == 0;
    }
  }
  int rejected = 0;
  extract::LatentTensor lat;
  lat.n_layers = L;
  lat.d_model = d;
  lat.values.assign(static_cast<std::size_t>(L) * d, 1.0f);
  const std::vector<int> bad{3, 5, 6, 7, 256};
  for (int s : bad) {
    try {
      segment(lat, s);
    } catch (const Error& e) {
      rejected += e.code() == ErrorCode::kNotDivisible;
    }
  }
  const bool all_rejected = rejected == static_cast<int>(bad.size());
  return {ok && all_rejected, std::string("bitwise reconstruction ") + (ok ? "exact" : "MISMATCH") + " for S in {1,2,2,4,8}; " +
                                  std::to_string(rejected) + "/" + std::to_string(bad.size()) +
                                  " non-divisors rejected"};
}

// ---------------------------------------------------------------------------
// 3. SAR = AHA x W^O.

Outcome sar_aha_consistency(const model::Model& m, const taskgen::TaskFamily& family) {
  std::mt19937_64 rng(3);
  double worst = 0.0;
  const int d = m.config().d_model;
  for (int k = 0; k < 20; ++k) {
    const auto& task = family.library()[rng() % family.library().size()];
    const int shots = 2 + static_cast<int>(rng() % 15);
    const auto ex = taskgen::sample_examples(task, shots + 1, rng());
    taskgen::PromptSet one;
    one.prompts.push_back(taskgen::render_icl(std::span(ex.examples).first(static_cast<std::size_t>(shots)),
                                              ex.examples.back().x));
    const auto sar = extract::extract_latents(m, one, extract::Source::kSar).front();
    const auto aha = extract::extract_latents(m, one, extract::Source::kAha).front();
    for (int i = 0; i < m.config().n_layers; ++i) {
      const auto wo = m.w_o(i);
      for (int c = 0; c < d; ++c) {
        double acc = 0.0;
        for (int r = 0; r < d; ++r) acc += static_cast<double>(aha.at(i, r)) * static_cast<double>(wo(r, c));
        worst = std::max(worst, std::abs(acc - static_cast<double>(sar.at(i, c))));
      }
    }
  }
  return {worst <= 1e-5, "max |SAR - AHA W_O| over 20 prompts = " + fmt("%.3g", worst) + " (tol 1e-5)"};
}

// ---------------------------------------------------------------------------
// 4. REINFORCE correctness.

double planted_ce(const opt::PositionMask& m) {
  double ce = 1.0;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      if (m(i, j)) ce += i == 0 ? -0.2 : 0.1;
    }
  }
  return ce;
}

int planted_hits(bool use_baseline) {
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    opt::PolicyOptions o;
    o.seed = seed;
    o.use_baseline = use_baseline;
    const auto r = opt::run_reinforce(opt::BernoulliPolicy::make(4, 4, o), planted_ce, o);
    bool all = true;
    for (int j = 0; j < 4; ++j) all &= std::binary_search(r.positions.begin(), r.positions.end(), Position{0, j});
    hits += all;
  }
  return hits;
}

Outcome reinforce_correctness() {
  // (a) score vs central difference of the Bernoulli log-pmf.
  double worst_fd = 0.0;
  for (double p : {0.1, 0.5, 0.9}) {
    for (int m : {0, 1}) {
      const double h = 1e-5;
      auto logpmf = [m](double q) { return m ? std::log(q) : std::log(1.0 - q); };
      const double fd = (logpmf(p + h) - logpmf(p - h)) / (2 * h);
      worst_fd = std::max(worst_fd, std::abs(fd - opt::score(m, p)));
    }
  }
  // (b) probability-weighted enumeration over the 4 masks of a 2-cell grid
  // against the analytic gradient of E[R].
  const double r_table[2][2] = {{-0.9, -0.4}, {-0.7, -0.05}};  // R(m0, m1)
  opt::PolicyOptions o;
  o.learning_rate = 1e-3;
  auto policy = opt::BernoulliPolicy::make(1, 2, o);
  policy.p = {0.3, 0.6};
  std::vector<double> expected(2, 0.0);
  for (int m0 : {0, 1}) {
    for (int m1 : {0, 1}) {
      const double prob = (m0 ? 0.3 : 0.7) * (m1 ? 0.6 : 0.4);
      auto copy = policy;
      opt::apply_update(copy, opt::PositionMask{1, 2, {static_cast<std::uint8_t>(m0), static_cast<std::uint8_t>(m1)}},
                        r_table[m0][m1]);
      for (std::size_t k = 0; k < 2; ++k) expected[k] += prob * (copy.p[k] - policy.p[k]);
    }
  }
  const double p0 = 0.3, p1 = 0.6;
  const double g0 = (1 - p1) * (r_table[1][0] - r_table[0][0]) + p1 * (r_table[1][1] - r_table[0][1]);
  const double g1 = (1 - p0) * (r_table[0][1] - r_table[0][0]) + p0 * (r_table[1][1] - r_table[1][0]);
  const double worst_enum =
      std::max(std::abs(expected[0] - o.learning_rate * g0), std::abs(expected[1] - o.learning_rate * g1));
  // (c) planted grid at the default policy settings.
  const int hits = planted_hits(false);
  const int hits_baseline = planted_hits(true);
  note("planted grid with the optional moving-average baseline: " + std::to_string(hits_baseline) + "/10 seeds");
  const bool pass = worst_fd <= 1e-6 && worst_enum <= 1e-12 && hits >= 9;
  std::ostringstream d;
  d << "(a) max |score - FD| = " << fmt("%.2g", worst_fd) << "; (b) enumeration error = " << fmt("%.2g", worst_enum)
    << "; (c) planted grid recovered in " << hits << "/10 seeds at defaults (need 9)";
  return {pass, d.str()};
}

// ---------------------------------------------------------------------------
// 5. Clip and TopK.

PositionSet brute_top_k(const std::vector<double>& p, int segs) {
  const double sum = std::accumulate(p.begin(), p.end(), 0.0);
  const auto k = std::min(p.size(), static_cast<std::size_t>(std::ceil(sum)));
  std::vector<bool> used(p.size(), false);
  PositionSet out;
  for (std::size_t r = 0; r < k; ++r) {
    std::size_t best = p.size();
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (!used[i] && (best == p.size() || p[i] > p[best])) best = i;
    }
    used[best] = true;
    out.push_back({static_cast<int>(best) / segs, static_cast<int>(best) % segs});
  }
  std::sort(out.begin(), out.end());
  return out;
}

Outcome clip_and_top_k() {
  opt::PolicyOptions o;
  o.seed = 9;
  auto policy = opt::BernoulliPolicy::make(4, 8, o);
  std::mt19937_64 rng(policy.seed);
  std::mt19937_64 env(77);
  std::normal_distribution<double> noise(0.0, 5.0);
  const opt::CeFunction ce = [&](const opt::PositionMask& m) {
    double v = std::abs(noise(env));
    for (auto b : m.m) v += b ? 0.3 : 0.0;
    return v;
  };
  int violations = 0;
  for (int t = 1; t <= 1000; ++t) {
    opt::reinforce_step(policy, ce, rng, t);
    for (double p : policy.p) violations += (p < o.epsilon || p > 1.0 - o.epsilon);
  }
  int mismatches = 0;
  std::mt19937_64 gen(4);
  for (int trial = 0; trial < 500; ++trial) {
    const int L = 1 + static_cast<int>(gen() % 4), S = 1 + static_cast<int>(gen() % 8);
    auto pol = opt::BernoulliPolicy::make(L, S, o);
    for (auto& p : pol.p) p = trial % 2 ? 0.1 * (1 + static_cast<double>(gen() % 9)) : opt::uniform01(gen) * 0.98 + 0.01;
    const auto got = opt::top_k(pol);
    const auto want = brute_top_k(pol.p, S);
    const auto k = static_cast<std::size_t>(std::ceil(pol.sum()));
    mismatches += (got != want) || got.size() != std::min(k, pol.p.size());
  }
  std::ostringstream d;
  d << violations << " clip violations over 1000 steps x 32 cells; " << mismatches
    << "/500 TopK mismatches against the brute-force oracle";
  return {violations == 0 && mismatches == 0, d.str()};
}

// ---------------------------------------------------------------------------
// 6. Trained base model and the ICL gate.

struct BaseModel {
  model::Model model;
  harness::GateReport gate;
  double train_seconds = 0.0;
  bool cached = false;
};

BaseModel train_or_load(const harness::ExperimentConfig& config, const fs::path& cache) {
  const auto dir = cache / ("base-" + config.hash().substr(0, 16));
  const auto ckpt = dir / "checkpoint.dyv";
  const auto timing = dir / "train_seconds.txt";
  const taskgen::TaskFamily family(config.family);
  if (fs::exists(ckpt) && fs::exists(timing) && fs::exists(dir / "manifest.json")) {
    auto m = model::load_checkpoint(ckpt.string());
    const auto gate = harness::measure_icl_gate(m, family, config.gate);
    return {std::move(m), gate, std::stod(read_text_file(timing.string())), true};
  }
  auto c = config;
  c.out = dir.string();
  const auto t0 = Clock::now();
  harness::cmd_train_base(c, [](const std::string& line) {
    if (line.rfind("step ", 0) == 0 && line.find("000 ") == std::string::npos) return;
    note(line);
  });
  const double secs = seconds_since(t0);
  write_text_file(timing.string(), std::to_string(secs));
  auto m = model::load_checkpoint(ckpt.string());
  const auto gate = harness::measure_icl_gate(m, family, config.gate);
  return {std::move(m), gate, secs, false};
}

// ---------------------------------------------------------------------------
// 7-10. Pipeline runs.

struct RunKey {
  std::uint64_t task;
  std::uint64_t seed;
  int shots;
  int granularity;
  std::string mode;
  auto operator<=>(const RunKey&) const = default;
};

class Runs {
 public:
  Runs(const model::Model& m, const taskgen::TaskFamily& family) : model_(m), family_(family) {}

  const harness::RunOutcome& get(const RunKey& key) {
    auto it = runs_.find(key);
    if (it != runs_.end()) return it->second;
    harness::RunSpec spec;
    spec.task_id = key.task;
    spec.seed = key.seed;
    spec.shots = key.shots;
    spec.granularity = key.granularity;
    spec.mode = harness::ModeSpec::parse(key.mode);
    auto out = harness::run_pipeline(model_, family_, spec);
    std::ostringstream msg;
    msg << "task " << key.task << " seed " << key.seed << " N=" << key.shots << " S=" << key.granularity << ' '
        << key.mode << ": zero-shot " << fmt("%.3f", out.zero_shot.accuracy) << " icl "
        << fmt("%.3f", out.icl.accuracy) << " dyvec " << fmt("%.3f", out.dyvec.accuracy) << " (alpha="
        << out.artifact.strategy.alpha << " beta=" << out.artifact.strategy.beta << " k="
        << out.artifact.positions.size() << ")";
    note(msg.str());
    return runs_.emplace(key, std::move(out)).first->second;
  }

  // Mean DyVec accuracy over tasks x seeds for one setting.
  double mean_dyvec(int shots, int s, const std::string& mode) {
    double total = 0.0;
    for (auto t : kTasks) {
      for (auto seed : kSeeds) total += get({t, seed, shots, s, mode}).dyvec.accuracy;
    }
    return total / static_cast<double>(kTasks.size() * kSeeds.size());
  }

  std::string csv() const {
    std::vector<harness::AblationRow> rows;
    for (const auto& [k, r] : runs_) {
      harness::AblationRow row;
      row.task_id = k.task;
      row.seed = k.seed;
      row.source = "SAR";
      row.mode = k.mode;
      row.granularity = k.granularity;
      row.shots = k.shots;
      row.strategy = r.artifact.strategy;
      row.n_positions = static_cast<int>(r.artifact.positions.size());
      row.final_ce = r.search.winner().final_ce;
      row.zero_shot_accuracy = r.zero_shot.accuracy;
      row.icl_accuracy = r.icl.accuracy;
      row.dyvec_accuracy = r.dyvec.accuracy;
      row.dyvec_f1 = r.dyvec.macro_f1;
      rows.push_back(row);
    }
    return harness::ablation_csv(rows);
  }

 private:
  const model::Model& model_;
  const taskgen::TaskFamily& family_;
  std::map<RunKey, harness::RunOutcome> runs_;
};

Outcome efficacy(Runs& runs, double& secs_out) {
  const auto t0 = Clock::now();
  double zs = 0, icl = 0, dv = 0;
  for (auto t : kTasks) {
    for (auto seed : kSeeds) {
      const auto& r = runs.get({t, seed, 8, 4, "EQR"});
      zs += r.zero_shot.accuracy;
      icl += r.icl.accuracy;
      dv += r.dyvec.accuracy;
    }
  }
  const double n = static_cast<double>(kTasks.size() * kSeeds.size());
  zs /= n;
  icl /= n;
  dv /= n;
  secs_out = seconds_since(t0);
  const double gain = dv - zs;
  const bool pass = gain >= 0.30 && dv >= 0.70 * icl && secs_out <= 20 * 60;
  std::ostringstream d;
  d << "mean accuracy zero-shot " << fmt("%.3f", zs) << ", DyVec " << fmt("%.3f", dv) << ", 8-shot ICL "
    << fmt("%.3f", icl) << "; gain " << fmt("%.1f", 100 * gain) << " pp (need 30), DyVec/ICL "
    << fmt("%.3f", dv / icl) << " (need 0.70)";
  return {pass, d.str()};
}

// Same runs as the efficacy check with the optional reward baseline on.
// Printed for diagnosis only.
void efficacy_with_baseline_note(const model::Model& m, const taskgen::TaskFamily& family) {
  double dv = 0.0;
  for (auto t : kTasks) {
    for (auto seed : kSeeds) {
      harness::RunSpec spec;
      spec.task_id = t;
      spec.seed = seed;
      spec.policy.use_baseline = true;
      dv += harness::run_pipeline(m, family, spec).dyvec.accuracy;
    }
  }
  dv /= static_cast<double>(kTasks.size() * kSeeds.size());
  note("efficacy runs with the optional moving-average baseline: mean DyVec accuracy " + fmt("%.3f", dv));
}

Outcome eqr_ablation(Runs& runs) {
  const double eqr = runs.mean_dyvec(8, 4, "EQR");
  const double sh1 = runs.mean_dyvec(8, 4, "SHUFFLE:1");
  const double sh50 = runs.mean_dyvec(8, 4, "SHUFFLE:50");
  const double sh100 = runs.mean_dyvec(8, 4, "SHUFFLE:100");
  std::ostringstream d;
  d << "EQR " << fmt("%.3f", eqr) << " vs SHUFFLE(1) " << fmt("%.3f", sh1) << ", SHUFFLE(50) " << fmt("%.3f", sh50)
    << "; SHUFFLE(100) " << fmt("%.3f", sh100) << " (reported only)";
  return {eqr >= sh1 && eqr >= sh50, d.str()};
}

Outcome granularity_ablation(Runs& runs) {
  std::map<int, double> acc;
  for (int s : {1, 2, 4, 8}) acc[s] = runs.mean_dyvec(8, s, "EQR");
  const bool pass = acc[1] <= acc[2] && acc[2] <= acc[4] && acc[8] > acc[1];
  std::ostringstream d;
  d << "S=1 " << fmt("%.3f", acc[1]) << ", S=2 " << fmt("%.3f", acc[2]) << ", S=4 " << fmt("%.3f", acc[4])
    << ", S=8 " << fmt("%.3f", acc[8]) << " (need S=1<=S=2<=S=4 and S=8>S=1)";
  return {pass, d.str()};
}

Outcome transfer(Runs& runs, const model::Model& m, std::string& csv) {
  const std::vector<int> shots{4, 8, 16};
  bool self_exact = true;
  double cross_gain = 0.0, donor_gain = 0.0;
  int cells = 0;
  std::ostringstream out;
  out << "task_id,seed,segments_from,positions_from,zero_shot_accuracy,accuracy,f1,donor_gain\n";
  for (auto t : kTasks) {
    for (auto seed : kSeeds) {
      std::vector<extract::LatentFile> latents;
      std::vector<DyVecArtifact> artifacts;
      std::vector<std::string> labels;
      std::vector<const harness::RunOutcome*> source_runs;
      for (int n : shots) {
        const auto& r = runs.get({t, seed, n, 4, "EQR"});
        latents.push_back(r.latent);
        artifacts.push_back(r.artifact);
        labels.push_back(std::to_string(n));
        source_runs.push_back(&r);
      }
      const auto matrix = harness::transfer_matrix(m, labels, latents, labels, artifacts);
      for (const auto& c : matrix) {
        const auto x = static_cast<std::size_t>(std::find(labels.begin(), labels.end(), c.segments_from) - labels.begin());
        const auto k = static_cast<std::size_t>(std::find(labels.begin(), labels.end(), c.positions_from) - labels.begin());
        const auto& donor = *source_runs[k];
        const double dg = donor.dyvec.accuracy - donor.zero_shot.accuracy;
        out << t << ',' << seed << ',' << c.segments_from << ',' << c.positions_from << ',' << c.zero_shot_accuracy
            << ',' << c.accuracy << ',' << c.f1 << ',' << dg << '\n';
        if (x == k) {
          const auto& own = *source_runs[x];
          self_exact &= c.accuracy == own.dyvec.accuracy && c.f1 == own.dyvec.macro_f1 &&
                        c.zero_shot_accuracy == own.zero_shot.accuracy;
        } else {
          cross_gain += c.accuracy - c.zero_shot_accuracy;
          donor_gain += dg;
          ++cells;
        }
      }
    }
  }
  csv = out.str();
  const double retained = donor_gain > 0 ? cross_gain / donor_gain : 0.0;
  std::ostringstream d;
  d << "self-transfer " << (self_exact ? "exact" : "NOT exact") << "; cross-transfer keeps "
    << fmt("%.1f", 100 * retained) << "% of donor gain over zero-shot across " << cells << " cells (need 80%)";
  return {self_exact && retained >= 0.80, d.str()};
}

// ---------------------------------------------------------------------------
// 11. Efficiency shape.

Outcome efficiency(const model::Model& m, const taskgen::TaskFamily& family, const harness::RunOutcome& run,
                   std::string& csv) {
  const auto& task = family.library_task(run.artifact.task_id);
  std::vector<intervene::MethodSpec> specs(5);
  std::vector<std::string> names{"ZERO_SHOT", "DYVEC", "ICL4", "ICL8", "ICL16"};
  specs[1].method = intervene::Method::kDyVec;
  specs[1].artifact = &run.artifact;
  specs[1].dyvec.relaxed_strategy = true;
  const int shots[] = {4, 8, 16};
  for (int k = 0; k < 3; ++k) {
    specs[static_cast<std::size_t>(2 + k)].method = intervene::Method::kIcl;
    specs[static_cast<std::size_t>(2 + k)].demos = taskgen::sample_examples(task, shots[k], 100).examples;
  }
  std::vector<double> best(specs.size(), 1e300);
  intervene::TimingOptions timing;
  timing.rounds = 1;
  timing.min_queries = 300;
  for (int round = 0; round < 7; ++round) {
    for (std::size_t s = 0; s < specs.size(); ++s) {
      best[s] = std::min(best[s], intervene::ms_per_query(m, specs[s], run.test_queries, timing));
    }
  }
  std::ostringstream out;
  out << "method,ms_per_query\n";
  for (std::size_t s = 0; s < specs.size(); ++s) out << names[s] << ',' << best[s] << '\n';
  csv = out.str();
  const double overhead = best[1] / best[0] - 1.0;
  const bool order = best[1] < best[2] && best[2] < best[3] && best[3] < best[4];
  std::ostringstream d;
  d << "ms/query zero-shot " << fmt("%.4f", best[0]) << ", DyVec " << fmt("%.4f", best[1]) << ", ICL4 "
    << fmt("%.4f", best[2]) << ", ICL8 " << fmt("%.4f", best[3]) << ", ICL16 " << fmt("%.4f", best[4])
    << "; DyVec overhead " << fmt("%.1f", 100 * overhead) << "% (need < 10%)";
  return {order && overhead < 0.10, d.str()};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DyVec acceptance suite"};
  std::string cache_dir = "acceptance_cache";
  app.add_option("--cache-dir", cache_dir, "Directory for the trained base model and result tables");
  CLI11_PARSE(app, argc, argv);

  try {
    const fs::path cache(cache_dir);
    const auto results = cache / "results";
    fs::create_directories(results);
    const auto config = base_config();
    const taskgen::TaskFamily family(config.family);

    // The trained model is needed by most criteria; build it first.
    auto t0 = Clock::now();
    note("preparing base model (" + std::to_string(config.train.steps) + " training steps)");
    const auto base = train_or_load(config, cache);
    const double gate_secs = seconds_since(t0);
    const auto& m = base.model;
    timed_report(1, "identity injection", [&] { return identity_injection(m, family); });
    timed_report(2, "segmentation round trip", [] { return segmentation_round_trip(); });
    timed_report(3, "SAR/AHA consistency", [&] { return sar_aha_consistency(m, family); });
    timed_report(4, "REINFORCE correctness", [] { return reinforce_correctness(); });
    timed_report(5, "clip and TopK", [] { return clip_and_top_k(); });

    {
      std::ostringstream d;
      d << base.gate.shots << "-shot accuracy on " << base.gate.mappings << " held-out mappings "
        << fmt("%.3f", base.gate.accuracy) << " (need " << fmt("%.2f", base.gate.threshold) << "); training took "
        << fmt("%.0f", base.train_seconds) << " s" << (base.cached ? " (cached checkpoint)" : "")
        << " (limit 1800 s)";
      report(6, "ICL emergence gate", {base.gate.passed && base.train_seconds <= 1800, d.str()}, gate_secs);
    }

    Runs runs(m, family);
    double secs = 0.0;
    const Outcome efficacy_outcome = efficacy(runs, secs);
    report(7, "DyVec efficacy", efficacy_outcome, secs);
    timed_report(8, "EQR ablation", [&] { return eqr_ablation(runs); });
    timed_report(9, "granularity ablation", [&] { return granularity_ablation(runs); });
    std::string transfer_csv;
    timed_report(10, "transfer", [&] { return transfer(runs, m, transfer_csv); });
    write_text_file((results / "runs.csv").string(), runs.csv());
    write_text_file((results / "transfer.csv").string(), transfer_csv);
    std::string timing_csv;
    timed_report(11, "efficiency shape",
                 [&] { return efficiency(m, family, runs.get({1000, 0, 8, 4, "EQR"}), timing_csv); });
    write_text_file((results / "timing.csv").string(), timing_csv);
    note("result tables written to " + results.string());
    efficacy_with_baseline_note(m, family);
  } catch (const std::exception& e) {
    std::printf("FAIL [PRIMARY] acceptance aborted: %s\n", e.what());
    return 1;
  }
  std::printf("%d criteria failed\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
