// Command-line front end: verification harnesses, pipeline runs, and report
// regeneration. Every invocation writes into a fresh run directory under
// --out and records an immutable manifest with the resolved configuration.
//
// Exit codes: 0 pass, 1 fail, 2 inconclusive, 3 runtime error, 4 usage error.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "poolrl/csv.hpp"
#include "poolrl/experiments.hpp"
#include "poolrl/pipeline.hpp"
#include "poolrl/rng.hpp"

namespace fs = std::filesystem;
using namespace poolrl;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::uint64_t> seeds;
  std::string out_dir = "runs";
  int threads = 1;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path,
                  "JSON file overriding the documented defaults");
  cmd->add_option("--seed", args.seeds,
                  "Seed for the run; repeat the flag to run several seeds");
  cmd->add_option("--out", args.out_dir, "Parent directory for run directories")
      ->capture_default_str();
  cmd->add_option("--threads", args.threads,
                  "Requested worker threads (runs use one; the request is "
                  "recorded in the manifest)")
      ->capture_default_str();
}

Json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  return Json::parse(in);
}

std::string hex16(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string utc_stamp() {
  std::time_t now = std::chrono::system_clock::to_time_t(
      std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

fs::path unique_run_dir(const std::string& out, const std::string& kind,
                        std::uint64_t hash) {
  fs::create_directories(out);
  std::string base = kind + "-" + utc_stamp() + "-" + hex16(hash).substr(0, 8);
  for (int i = 0;; ++i) {
    fs::path dir =
        fs::path(out) / (i == 0 ? base : base + "-" + std::to_string(i));
    if (fs::create_directory(dir)) return dir;
  }
}

void write_manifest(const fs::path& file, const Json& manifest) {
  if (fs::exists(file))
    throw std::runtime_error("manifest already exists (manifests are "
                             "immutable): " + file.string());
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << manifest.dump(2) << "\n";
}

// CSV plus its sidecar carrying the configuration hash the rows came from.
void write_result_csv(const fs::path& dir, const std::string& name,
                      const ExperimentResult& result,
                      const std::string& config_hash) {
  {
    CsvWriter csv((dir / (name + ".csv")).string(), result.csv_header);
    for (const auto& row : result.csv_rows) csv.row(row);
  }
  Json sidecar = {{"file", name + ".csv"},
                  {"config_hash", config_hash},
                  {"columns", result.csv_header},
                  {"rows", result.csv_rows.size()}};
  write_manifest(dir / (name + ".csv.manifest.json"), sidecar);
}

Verdict combine(Verdict a, Verdict b) {
  if (a == Verdict::fail || b == Verdict::fail) return Verdict::fail;
  if (a == Verdict::inconclusive || b == Verdict::inconclusive)
    return Verdict::inconclusive;
  return Verdict::pass;
}

template <typename T>
void maybe_get(const Json& j, const char* key, T& slot) {
  if (j.contains(key)) slot = j.at(key).get<T>();
}

// --- per-harness config serialization; these are the documented defaults ---

Json experiment_config_json(const EffectiveRolloutConfig& c) {
  return {{"accuracies", c.accuracies},
          {"group_sizes", c.group_sizes},
          {"trials", c.trials},
          {"min_powered_trials", c.min_powered_trials},
          {"sigma_gate", c.sigma_gate},
          {"seed", c.seed}};
}
void apply_config(const Json& j, EffectiveRolloutConfig& c) {
  maybe_get(j, "accuracies", c.accuracies);
  maybe_get(j, "group_sizes", c.group_sizes);
  maybe_get(j, "trials", c.trials);
  maybe_get(j, "min_powered_trials", c.min_powered_trials);
  maybe_get(j, "sigma_gate", c.sigma_gate);
  maybe_get(j, "seed", c.seed);
}

Json experiment_config_json(const EfficiencySweepConfig& c) {
  return {{"arms", c.arms},
          {"correct_logit", c.correct_logit},
          {"correct_arm", c.correct_arm},
          {"noise_variance", c.noise_variance},
          {"group_size", c.group_size},
          {"curve_points", c.curve_points},
          {"max_ratio_fraction", c.max_ratio_fraction},
          {"sign_test_ratio_fraction", c.sign_test_ratio_fraction},
          {"seeds", c.seeds},
          {"trials_per_cell", c.trials_per_cell},
          {"min_r_squared", c.min_r_squared},
          {"mu_p_rel_tol", c.mu_p_rel_tol},
          {"sign_alpha", c.sign_alpha},
          {"include_adam", c.include_adam},
          {"adam_noise_variance", c.adam_noise_variance},
          {"adam_trials_per_cell", c.adam_trials_per_cell},
          {"adam_eta_max", c.adam_eta_max},
          {"adam_n_m", c.adam_n_m},
          {"adam_n_v", c.adam_n_v},
          {"seed", c.seed}};
}
void apply_config(const Json& j, EfficiencySweepConfig& c) {
  maybe_get(j, "arms", c.arms);
  maybe_get(j, "correct_logit", c.correct_logit);
  maybe_get(j, "correct_arm", c.correct_arm);
  maybe_get(j, "noise_variance", c.noise_variance);
  maybe_get(j, "group_size", c.group_size);
  maybe_get(j, "curve_points", c.curve_points);
  maybe_get(j, "max_ratio_fraction", c.max_ratio_fraction);
  maybe_get(j, "sign_test_ratio_fraction", c.sign_test_ratio_fraction);
  maybe_get(j, "seeds", c.seeds);
  maybe_get(j, "trials_per_cell", c.trials_per_cell);
  maybe_get(j, "min_r_squared", c.min_r_squared);
  maybe_get(j, "mu_p_rel_tol", c.mu_p_rel_tol);
  maybe_get(j, "sign_alpha", c.sign_alpha);
  maybe_get(j, "include_adam", c.include_adam);
  maybe_get(j, "adam_noise_variance", c.adam_noise_variance);
  maybe_get(j, "adam_trials_per_cell", c.adam_trials_per_cell);
  maybe_get(j, "adam_eta_max", c.adam_eta_max);
  maybe_get(j, "adam_n_m", c.adam_n_m);
  maybe_get(j, "adam_n_v", c.adam_n_v);
  maybe_get(j, "seed", c.seed);
}

Json experiment_config_json(const EquivalenceConfig& c) {
  return {{"arms", c.arms},
          {"correct_logit", c.correct_logit},
          {"correct_arm", c.correct_arm},
          {"ratio_fraction", c.ratio_fraction},
          {"large_n", c.large_n},
          {"small_n", c.small_n},
          {"noise_variance", c.noise_variance},
          {"sgd_trials_per_seed", c.sgd_trials_per_seed},
          {"adam_eta_large", c.adam_eta_large},
          {"adam_noise_variance", c.adam_noise_variance},
          {"adam_trials_per_seed", c.adam_trials_per_seed},
          {"adam_n_m", c.adam_n_m},
          {"adam_n_v", c.adam_n_v},
          {"seeds", c.seeds},
          {"alpha", c.alpha},
          {"signal_sigma", c.signal_sigma},
          {"seed", c.seed}};
}
void apply_config(const Json& j, EquivalenceConfig& c) {
  maybe_get(j, "arms", c.arms);
  maybe_get(j, "correct_logit", c.correct_logit);
  maybe_get(j, "correct_arm", c.correct_arm);
  maybe_get(j, "ratio_fraction", c.ratio_fraction);
  maybe_get(j, "large_n", c.large_n);
  maybe_get(j, "small_n", c.small_n);
  maybe_get(j, "noise_variance", c.noise_variance);
  maybe_get(j, "sgd_trials_per_seed", c.sgd_trials_per_seed);
  maybe_get(j, "adam_eta_large", c.adam_eta_large);
  maybe_get(j, "adam_noise_variance", c.adam_noise_variance);
  maybe_get(j, "adam_trials_per_seed", c.adam_trials_per_seed);
  maybe_get(j, "adam_n_m", c.adam_n_m);
  maybe_get(j, "adam_n_v", c.adam_n_v);
  maybe_get(j, "seeds", c.seeds);
  maybe_get(j, "alpha", c.alpha);
  maybe_get(j, "signal_sigma", c.signal_sigma);
  maybe_get(j, "seed", c.seed);
}

Json experiment_config_json(const AdamMomentConfig& c) {
  return {{"x_values", c.x_values}, {"gradient", c.gradient},
          {"eta", c.eta},           {"n_m", c.n_m},
          {"n_v", c.n_v},           {"trials", c.trials},
          {"m1_rel_tol", c.m1_rel_tol}, {"m2_rel_tol", c.m2_rel_tol},
          {"seed", c.seed}};
}
void apply_config(const Json& j, AdamMomentConfig& c) {
  maybe_get(j, "x_values", c.x_values);
  maybe_get(j, "gradient", c.gradient);
  maybe_get(j, "eta", c.eta);
  maybe_get(j, "n_m", c.n_m);
  maybe_get(j, "n_v", c.n_v);
  maybe_get(j, "trials", c.trials);
  maybe_get(j, "m1_rel_tol", c.m1_rel_tol);
  maybe_get(j, "m2_rel_tol", c.m2_rel_tol);
  maybe_get(j, "seed", c.seed);
}

Json experiment_config_json(const IsCorrectionConfig& c) {
  return {{"high_wrong_logit", c.high_wrong_logit},
          {"low_wrong_logit", c.low_wrong_logit},
          {"sharpen_temperature", c.sharpen_temperature},
          {"group_size_unclipped", c.group_size_unclipped},
          {"groups_unclipped", c.groups_unclipped},
          {"sigma_gate", c.sigma_gate},
          {"eps_clip", c.eps_clip},
          {"group_size_clipped", c.group_size_clipped},
          {"groups_clipped", c.groups_clipped},
          {"seed", c.seed}};
}
void apply_config(const Json& j, IsCorrectionConfig& c) {
  maybe_get(j, "high_wrong_logit", c.high_wrong_logit);
  maybe_get(j, "low_wrong_logit", c.low_wrong_logit);
  maybe_get(j, "sharpen_temperature", c.sharpen_temperature);
  maybe_get(j, "group_size_unclipped", c.group_size_unclipped);
  maybe_get(j, "groups_unclipped", c.groups_unclipped);
  maybe_get(j, "sigma_gate", c.sigma_gate);
  maybe_get(j, "eps_clip", c.eps_clip);
  maybe_get(j, "group_size_clipped", c.group_size_clipped);
  maybe_get(j, "groups_clipped", c.groups_clipped);
  maybe_get(j, "seed", c.seed);
}

Json experiment_config_json(const GradientFdConfig& c) {
  return {{"cases", c.cases},
          {"step", c.step},
          {"tolerance", c.tolerance},
          {"seed", c.seed}};
}
void apply_config(const Json& j, GradientFdConfig& c) {
  maybe_get(j, "cases", c.cases);
  maybe_get(j, "step", c.step);
  maybe_get(j, "tolerance", c.tolerance);
  maybe_get(j, "seed", c.seed);
}

Json experiment_config_json(const PoolMachineConfig& c) {
  return {{"random_sequences", c.random_sequences},
          {"max_events_per_sequence", c.max_events_per_sequence},
          {"problems", c.problems},
          {"budget_limit", c.budget_limit},
          {"exhaustive_problems", c.exhaustive_problems},
          {"exhaustive_budget", c.exhaustive_budget},
          {"seed", c.seed}};
}
void apply_config(const Json& j, PoolMachineConfig& c) {
  maybe_get(j, "random_sequences", c.random_sequences);
  maybe_get(j, "max_events_per_sequence", c.max_events_per_sequence);
  maybe_get(j, "problems", c.problems);
  maybe_get(j, "budget_limit", c.budget_limit);
  maybe_get(j, "exhaustive_problems", c.exhaustive_problems);
  maybe_get(j, "exhaustive_budget", c.exhaustive_budget);
  maybe_get(j, "seed", c.seed);
}

Json experiment_config_json(const RescueConfig& c) {
  return {{"vocab", c.vocab},
          {"length", c.length},
          {"target_accuracy_low", c.target_accuracy_low},
          {"target_accuracy_high", c.target_accuracy_high},
          {"small_n", c.small_n},
          {"large_n", c.large_n},
          {"eta", c.eta},
          {"steps", c.steps},
          {"tau_rl", c.tau_rl},
          {"seeds", c.seeds},
          {"small_max_success", c.small_max_success},
          {"large_min_success", c.large_min_success},
          {"fisher_alpha", c.fisher_alpha},
          {"seed", c.seed}};
}
void apply_config(const Json& j, RescueConfig& c) {
  maybe_get(j, "vocab", c.vocab);
  maybe_get(j, "length", c.length);
  maybe_get(j, "target_accuracy_low", c.target_accuracy_low);
  maybe_get(j, "target_accuracy_high", c.target_accuracy_high);
  maybe_get(j, "small_n", c.small_n);
  maybe_get(j, "large_n", c.large_n);
  maybe_get(j, "eta", c.eta);
  maybe_get(j, "steps", c.steps);
  maybe_get(j, "tau_rl", c.tau_rl);
  maybe_get(j, "seeds", c.seeds);
  maybe_get(j, "small_max_success", c.small_max_success);
  maybe_get(j, "large_min_success", c.large_min_success);
  maybe_get(j, "fisher_alpha", c.fisher_alpha);
  maybe_get(j, "seed", c.seed);
}

Json experiment_config_json(const DataScalingConfig& c) {
  return {{"problems", c.problems},
          {"vocab", c.vocab},
          {"length", c.length},
          {"correct_per_problem", c.correct_per_problem},
          {"solution_counts", c.solution_counts},
          {"sft_learning_rate", c.sft_learning_rate},
          {"sft_epochs", c.sft_epochs},
          {"eval_samples", c.eval_samples},
          {"pass_k", c.pass_k},
          {"duplicate_probe_samples", c.duplicate_probe_samples},
          {"seeds", c.seeds},
          {"alpha", c.alpha},
          {"max_duplicate_rate", c.max_duplicate_rate},
          {"seed", c.seed}};
}
void apply_config(const Json& j, DataScalingConfig& c) {
  maybe_get(j, "problems", c.problems);
  maybe_get(j, "vocab", c.vocab);
  maybe_get(j, "length", c.length);
  maybe_get(j, "correct_per_problem", c.correct_per_problem);
  maybe_get(j, "solution_counts", c.solution_counts);
  maybe_get(j, "sft_learning_rate", c.sft_learning_rate);
  maybe_get(j, "sft_epochs", c.sft_epochs);
  maybe_get(j, "eval_samples", c.eval_samples);
  maybe_get(j, "pass_k", c.pass_k);
  maybe_get(j, "duplicate_probe_samples", c.duplicate_probe_samples);
  maybe_get(j, "seeds", c.seeds);
  maybe_get(j, "alpha", c.alpha);
  maybe_get(j, "max_duplicate_rate", c.max_duplicate_rate);
  maybe_get(j, "seed", c.seed);
}

Json experiment_config_json(const PartitionConfig& c) {
  return {{"easy_problems", c.easy_problems},
          {"hard_problems", c.hard_problems},
          {"baseline_n", c.baseline_n},
          {"ladder", c.ladder},
          {"group_size", c.group_size},
          {"eta", c.eta},
          {"tau_rl", c.tau_rl},
          {"total_budget", c.total_budget},
          {"eval_samples", c.eval_samples},
          {"pass_k", c.pass_k},
          {"seeds", c.seeds},
          {"min_wins", c.min_wins},
          {"budget_tolerance", c.budget_tolerance},
          {"seed", c.seed}};
}
void apply_config(const Json& j, PartitionConfig& c) {
  maybe_get(j, "easy_problems", c.easy_problems);
  maybe_get(j, "hard_problems", c.hard_problems);
  maybe_get(j, "baseline_n", c.baseline_n);
  maybe_get(j, "ladder", c.ladder);
  maybe_get(j, "group_size", c.group_size);
  maybe_get(j, "eta", c.eta);
  maybe_get(j, "tau_rl", c.tau_rl);
  maybe_get(j, "total_budget", c.total_budget);
  maybe_get(j, "eval_samples", c.eval_samples);
  maybe_get(j, "pass_k", c.pass_k);
  maybe_get(j, "seeds", c.seeds);
  maybe_get(j, "min_wins", c.min_wins);
  maybe_get(j, "budget_tolerance", c.budget_tolerance);
  maybe_get(j, "seed", c.seed);
}

Json experiment_config_json(const MergeConfig& c) {
  return {{"problems_per_run", c.problems_per_run},
          {"vocab", c.vocab},
          {"length", c.length},
          {"correct_per_problem", c.correct_per_problem},
          {"rollout_n", c.rollout_n},
          {"eta", c.eta},
          {"steps", c.steps},
          {"tau_rl", c.tau_rl},
          {"replay_capacity", c.replay_capacity},
          {"min_ratio", c.min_ratio},
          {"distill_learning_rate", c.distill.learning_rate},
          {"distill_epochs", c.distill.epochs},
          {"distill_shuffle_seed", c.distill.shuffle_seed},
          {"seed", c.seed}};
}
void apply_config(const Json& j, MergeConfig& c) {
  maybe_get(j, "problems_per_run", c.problems_per_run);
  maybe_get(j, "vocab", c.vocab);
  maybe_get(j, "length", c.length);
  maybe_get(j, "correct_per_problem", c.correct_per_problem);
  maybe_get(j, "rollout_n", c.rollout_n);
  maybe_get(j, "eta", c.eta);
  maybe_get(j, "steps", c.steps);
  maybe_get(j, "tau_rl", c.tau_rl);
  maybe_get(j, "replay_capacity", c.replay_capacity);
  maybe_get(j, "min_ratio", c.min_ratio);
  maybe_get(j, "distill_learning_rate", c.distill.learning_rate);
  maybe_get(j, "distill_epochs", c.distill.epochs);
  maybe_get(j, "distill_shuffle_seed", c.distill.shuffle_seed);
  maybe_get(j, "seed", c.seed);
}

Json experiment_config_json(const DeterminismConfig& c) {
  return {{"problems", c.problems},
          {"vocab", c.vocab},
          {"length", c.length},
          {"interrupt_after_steps", c.interrupt_after_steps},
          {"max_seconds", c.max_seconds},
          {"checkpoint_path", c.checkpoint_path},
          {"seed", c.seed}};
}
void apply_config(const Json& j, DeterminismConfig& c) {
  maybe_get(j, "problems", c.problems);
  maybe_get(j, "vocab", c.vocab);
  maybe_get(j, "length", c.length);
  maybe_get(j, "interrupt_after_steps", c.interrupt_after_steps);
  maybe_get(j, "max_seconds", c.max_seconds);
  maybe_get(j, "checkpoint_path", c.checkpoint_path);
  maybe_get(j, "seed", c.seed);
}

// --- generic harness driver -------------------------------------------------

template <typename Config>
int run_harness(const CommonArgs& args, const std::string& kind,
                ExperimentResult (*runner)(const Config&)) {
  Config base;
  if (!args.config_path.empty())
    apply_config(load_json_file(args.config_path), base);
  std::vector<std::uint64_t> seeds =
      args.seeds.empty() ? std::vector<std::uint64_t>{base.seed} : args.seeds;

  Json resolved = experiment_config_json(base);
  Json seeds_json = seeds;
  std::uint64_t hash = fnv1a64(resolved.dump() + seeds_json.dump());
  std::string hash_text = hex16(hash);
  fs::path dir = unique_run_dir(args.out_dir, kind, hash);
  std::cout << "run dir: " << dir.string() << "\n";

  Verdict overall = Verdict::pass;
  Json results = Json::array();
  for (std::uint64_t seed : seeds) {
    Config config = base;
    config.seed = seed;
    ExperimentResult result = runner(config);
    overall = combine(overall, result.verdict);
    std::string csv_name = kind + "-seed" + std::to_string(seed);
    write_result_csv(dir, csv_name, result, hash_text);
    results.push_back({{"seed", seed},
                       {"verdict", verdict_name(result.verdict)},
                       {"detail", result.detail},
                       {"csv", csv_name + ".csv"},
                       {"stats", result.stats}});
    std::cout << kind << " seed " << seed << ": " << verdict_name(result.verdict)
              << " - " << result.detail << "\n";
  }

  write_manifest(dir / "manifest.json",
                 {{"kind", kind},
                  {"created_utc", utc_stamp()},
                  {"config", resolved},
                  {"config_hash", hash_text},
                  {"seeds", seeds},
                  {"threads_requested", args.threads},
                  {"threads_used", 1},
                  {"verdict", verdict_name(overall)},
                  {"results", results}});
  std::cout << "verdict: " << verdict_name(overall) << "\n";
  return verdict_exit_code(overall);
}

// sweep-efficiency bundles the curve fit with the matched (eta, N) pairs so
// one command covers both halves of the optimum story. Config keys "sweep"
// and "equivalence" address the two parts.
int run_sweep_efficiency(const CommonArgs& args) {
  EfficiencySweepConfig sweep;
  EquivalenceConfig equivalence;
  if (!args.config_path.empty()) {
    Json overrides = load_json_file(args.config_path);
    if (overrides.contains("sweep")) apply_config(overrides["sweep"], sweep);
    if (overrides.contains("equivalence"))
      apply_config(overrides["equivalence"], equivalence);
  }
  std::vector<std::uint64_t> seeds =
      args.seeds.empty() ? std::vector<std::uint64_t>{sweep.seed} : args.seeds;

  Json resolved = {{"sweep", experiment_config_json(sweep)},
                   {"equivalence", experiment_config_json(equivalence)}};
  Json seeds_json = seeds;
  std::uint64_t hash = fnv1a64(resolved.dump() + seeds_json.dump());
  std::string hash_text = hex16(hash);
  fs::path dir = unique_run_dir(args.out_dir, "sweep-efficiency", hash);
  std::cout << "run dir: " << dir.string() << "\n";

  Verdict overall = Verdict::pass;
  Json results = Json::array();
  for (std::uint64_t seed : seeds) {
    EfficiencySweepConfig sweep_config = sweep;
    sweep_config.seed = seed;
    ExperimentResult curve = run_efficiency_sweep(sweep_config);
    EquivalenceConfig equiv_config = equivalence;
    equiv_config.seed = seed;
    ExperimentResult pairs = run_equivalence_check(equiv_config);
    overall = combine(overall, combine(curve.verdict, pairs.verdict));
    std::string sweep_name = "sweep-seed" + std::to_string(seed);
    std::string equiv_name = "equivalence-seed" + std::to_string(seed);
    write_result_csv(dir, sweep_name, curve, hash_text);
    write_result_csv(dir, equiv_name, pairs, hash_text);
    results.push_back({{"seed", seed},
                       {"sweep",
                        {{"verdict", verdict_name(curve.verdict)},
                         {"detail", curve.detail},
                         {"csv", sweep_name + ".csv"},
                         {"stats", curve.stats}}},
                       {"equivalence",
                        {{"verdict", verdict_name(pairs.verdict)},
                         {"detail", pairs.detail},
                         {"csv", equiv_name + ".csv"},
                         {"stats", pairs.stats}}}});
    std::cout << "sweep seed " << seed << ": " << verdict_name(curve.verdict)
              << " - " << curve.detail << "\n";
    std::cout << "equivalence seed " << seed << ": "
              << verdict_name(pairs.verdict) << " - " << pairs.detail << "\n";
  }

  write_manifest(dir / "manifest.json",
                 {{"kind", "sweep-efficiency"},
                  {"created_utc", utc_stamp()},
                  {"config", resolved},
                  {"config_hash", hash_text},
                  {"seeds", seeds},
                  {"threads_requested", args.threads},
                  {"threads_used", 1},
                  {"verdict", verdict_name(overall)},
                  {"results", results}});
  std::cout << "verdict: " << verdict_name(overall) << "\n";
  return verdict_exit_code(overall);
}

int run_pipeline_command(const CommonArgs& args) {
  Json overrides =
      args.config_path.empty() ? Json::object() : load_json_file(args.config_path);

  // Pipeline settings merge over the defaults key by key.
  Json merged = config_to_json(PipelineConfig{});
  if (overrides.contains("pipeline"))
    for (auto& [key, value] : overrides["pipeline"].items()) merged[key] = value;
  PipelineConfig config = config_from_json(merged);

  ProblemSuite suite = overrides.contains("suite")
                           ? suite_from_json(overrides["suite"])
                           : make_determinism_suite(DeterminismConfig{});

  std::vector<std::uint64_t> seeds =
      args.seeds.empty() ? std::vector<std::uint64_t>{config.seed} : args.seeds;
  Json seeds_json = seeds;
  std::uint64_t hash =
      fnv1a64(config_to_json(config).dump() + suite_to_json(suite).dump() +
              seeds_json.dump());
  fs::path dir = unique_run_dir(args.out_dir, "run-pipeline", hash);
  std::cout << "run dir: " << dir.string() << "\n";

  Json results = Json::array();
  for (std::uint64_t seed : seeds) {
    PipelineConfig seeded = config;
    seeded.seed = seed;
    fs::path seed_dir = dir / ("seed-" + std::to_string(seed));
    fs::create_directories(seed_dir);
    FinalReport report =
        run_pipeline(suite, seeded, seed_dir / "checkpoint.json");
    write_run_outputs(report, seed_dir);
    results.push_back({{"seed", seed},
                       {"config_hash", report.config_hash},
                       {"iterations", report.iterations.size()},
                       {"total_rl_rollouts", report.total_rl_rollouts},
                       {"final_counts", report.final_counts}});
    std::cout << "pipeline seed " << seed << ": " << report.iterations.size()
              << " iterations, " << report.total_rl_rollouts
              << " RL rollouts, final pools U/S/D/F = "
              << report.final_counts[0] << "/" << report.final_counts[1] << "/"
              << report.final_counts[2] << "/" << report.final_counts[3]
              << "\n";
  }

  write_manifest(dir / "manifest.json",
                 {{"kind", "run-pipeline"},
                  {"created_utc", utc_stamp()},
                  {"config", config_to_json(config)},
                  {"config_hash", config_hash(config)},
                  {"problems", suite.size()},
                  {"seeds", seeds},
                  {"threads_requested", args.threads},
                  {"threads_used", 1},
                  {"results", results}});
  return 0;
}

// Rebuilds the derived tables from a finished run's report.json. Output is a
// pure function of the report, so regenerating is idempotent.
int run_report_command(const CommonArgs& args, const std::string& run_dir) {
  fs::path source = fs::path(run_dir) / "report.json";
  if (!fs::exists(source)) {
    // Multi-seed pipeline runs keep reports under seed-N subdirectories.
    throw std::runtime_error("no report.json under " + run_dir);
  }
  std::ifstream in(source);
  FinalReport report = report_from_json(Json::parse(in));
  std::string text = report_to_string(report);

  fs::path dir = unique_run_dir(args.out_dir, "report", fnv1a64(text));
  write_run_outputs(report, dir);
  write_manifest(dir / "manifest.json",
                 {{"kind", "report"},
                  {"created_utc", utc_stamp()},
                  {"source", source.string()},
                  {"config_hash", report.config_hash},
                  {"seed", report.seed},
                  {"threads_requested", args.threads},
                  {"threads_used", 1}});
  std::cout << "run dir: " << dir.string() << "\n"
            << "seed " << report.seed << ", " << report.iterations.size()
            << " iterations, final pools U/S/D/F = " << report.final_counts[0]
            << "/" << report.final_counts[1] << "/" << report.final_counts[2]
            << "/" << report.final_counts[3] << "\n";
  return 0;
}

int run_named_check(const CommonArgs& args, const std::string& name) {
  if (name == "effective-rollout")
    return run_harness<EffectiveRolloutConfig>(args, name,
                                               run_effective_rollout_check);
  if (name == "efficiency-sweep")
    return run_harness<EfficiencySweepConfig>(args, name, run_efficiency_sweep);
  if (name == "equivalence")
    return run_harness<EquivalenceConfig>(args, name, run_equivalence_check);
  if (name == "adam-moments")
    return run_harness<AdamMomentConfig>(args, name, run_adam_moment_check);
  if (name == "is-correction")
    return run_harness<IsCorrectionConfig>(args, name, run_is_correction_check);
  if (name == "gradient-fd")
    return run_harness<GradientFdConfig>(args, name, run_gradient_fd_check);
  if (name == "pool-machine")
    return run_harness<PoolMachineConfig>(args, name, run_pool_machine_check);
  if (name == "rescue")
    return run_harness<RescueConfig>(args, name, run_rescue_study);
  if (name == "data-scaling")
    return run_harness<DataScalingConfig>(args, name, run_data_scaling_study);
  if (name == "rollout-partition")
    return run_harness<PartitionConfig>(args, name, run_partition_study);
  if (name == "merge")
    return run_harness<MergeConfig>(args, name, run_merge_check);
  if (name == "determinism")
    return run_harness<DeterminismConfig>(args, name, run_determinism_check);
  throw std::runtime_error("unknown check name: " + name);
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pool-scheduled RL post-training lab"};
  app.require_subcommand(1);

  CommonArgs nhat_args;
  CLI::App* nhat = app.add_subcommand(
      "verify-nhat", "Effective-rollout formula against Monte Carlo");
  add_common(nhat, nhat_args);

  CommonArgs sweep_args;
  CLI::App* sweep = app.add_subcommand(
      "sweep-efficiency",
      "Efficiency quadratic fit plus matched (eta, N) equivalence pairs");
  add_common(sweep, sweep_args);

  CommonArgs adam_args;
  CLI::App* adam = app.add_subcommand(
      "verify-adam-moments", "Windowed Adam step moments against the series");
  add_common(adam, adam_args);

  CommonArgs pipeline_args;
  CLI::App* pipeline = app.add_subcommand(
      "run-pipeline", "Run the full pool pipeline (checkpointed, resumable)");
  add_common(pipeline, pipeline_args);

  CommonArgs scaling_args;
  CLI::App* scaling = app.add_subcommand(
      "ablate-data-scaling", "Distinct reference solutions vs pass rates");
  add_common(scaling, scaling_args);

  CommonArgs partition_args;
  CLI::App* partition = app.add_subcommand(
      "ablate-rollout-n",
      "Partitioned rollout-N ladder vs one fixed N at matched budget");
  add_common(partition, partition_args);

  CommonArgs report_args;
  std::string report_dir;
  CLI::App* report = app.add_subcommand(
      "report", "Regenerate tables from a finished run's report.json");
  report->add_option("run_dir", report_dir, "Directory holding report.json")
      ->required();
  add_common(report, report_args);

  CommonArgs check_args;
  std::string check_name;
  CLI::App* check = app.add_subcommand(
      "check", "Run one named verification harness");
  check
      ->add_option("--name", check_name,
                   "One of: effective-rollout, efficiency-sweep, equivalence, "
                   "adam-moments, is-correction, gradient-fd, pool-machine, "
                   "rescue, data-scaling, rollout-partition, merge, "
                   "determinism")
      ->required();
  add_common(check, check_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 4;
  }

  try {
    if (nhat->parsed())
      return run_harness<EffectiveRolloutConfig>(nhat_args, "verify-nhat",
                                                 run_effective_rollout_check);
    if (sweep->parsed()) return run_sweep_efficiency(sweep_args);
    if (adam->parsed())
      return run_harness<AdamMomentConfig>(adam_args, "verify-adam-moments",
                                           run_adam_moment_check);
    if (pipeline->parsed()) return run_pipeline_command(pipeline_args);
    if (scaling->parsed())
      return run_harness<DataScalingConfig>(scaling_args, "ablate-data-scaling",
                                            run_data_scaling_study);
    if (partition->parsed())
      return run_harness<PartitionConfig>(partition_args, "ablate-rollout-n",
                                          run_partition_study);
    if (report->parsed()) return run_report_command(report_args, report_dir);
    if (check->parsed()) return run_named_check(check_args, check_name);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 4;
}
