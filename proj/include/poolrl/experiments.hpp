#pragma once
// Verification experiments behind the CLI and the acceptance gate. Each
// harness builds its own small world (bandit or sequence suite), runs the
// measurement, and returns a verdict plus the rows it wants persisted.
// Defaults are the committed settings; callers may rebase the seed or widen
// grids, and underpowered runs report inconclusive rather than fail.

#include <cstdint>
#include <string>
#include <vector>

#include "poolrl/pipeline.hpp"

namespace poolrl {

enum class Verdict { pass, fail, inconclusive };

const char* verdict_name(Verdict verdict);
int verdict_exit_code(Verdict verdict); // pass 0, fail 1, inconclusive 2

struct ExperimentResult {
  Verdict verdict = Verdict::fail;
  std::string detail; // one-line human summary
  std::vector<std::string> csv_header;
  std::vector<std::vector<std::string>> csv_rows;
  Json stats = Json::object(); // machine-readable extras for the manifest
};

// --- effective-rollout formula vs Monte Carlo zero-variance rate -----------

struct EffectiveRolloutConfig {
  std::vector<double> accuracies = {0.01, 0.05, 0.1, 0.3, 0.5, 0.9};
  std::vector<int> group_sizes = {2, 8, 20, 64, 256};
  long trials = 100000;
  long min_powered_trials = 1000; // below this a miss is inconclusive, not fail
  double sigma_gate = 3.0;
  std::uint64_t seed = 1;
};
ExperimentResult run_effective_rollout_check(const EffectiveRolloutConfig& config = {});

// --- efficiency-vs-(eta/N) sweep on the injected-noise bandit --------------

struct EfficiencySweepConfig {
  int arms = 4;
  double correct_logit = 0.6; // remaining logits are 0
  int correct_arm = 0;
  double noise_variance = 8192.0; // Sigma = noise_variance * I
  int group_size = 8;
  int curve_points = 8;
  double max_ratio_fraction = 0.8;       // top of the u grid, as fraction of mu_p/mu_n
  double sign_test_ratio_fraction = 1.5; // u for the "past the root, E <= 0" test
  int seeds = 20;
  long trials_per_cell = 200000; // per (u, seed); sized so R^2 clears its gate
  double min_r_squared = 0.95;
  double mu_p_rel_tol = 0.10;
  double sign_alpha = 0.05;
  // Adam leg (reported, not gated): tiny noise keeps the expansions valid.
  bool include_adam = true;
  double adam_noise_variance = 2e-5;
  long adam_trials_per_cell = 500;
  double adam_eta_max = 2e-3;
  double adam_n_m = 10.0;
  double adam_n_v = 1000.0;
  std::uint64_t seed = 1;
};
ExperimentResult run_efficiency_sweep(const EfficiencySweepConfig& config = {});

// --- matched eta/N pairs: (eta, N) vs (eta/2, N/2) --------------------------

struct EquivalenceConfig {
  int arms = 4;
  double correct_logit = 0.6;
  int correct_arm = 0;
  double ratio_fraction = 0.4; // u, as fraction of the SGD stability root
  int large_n = 8;
  int small_n = 4;
  double noise_variance = 8192.0;
  long sgd_trials_per_seed = 20000;
  double adam_eta_large = 1e-3; // paired with large_n; the small arm halves it
  double adam_noise_variance = 2e-5;
  long adam_trials_per_seed = 2; // deliberately noise-dominated
  double adam_n_m = 10.0;
  double adam_n_v = 1000.0;
  int seeds = 20;
  double alpha = 0.05;
  double signal_sigma = 3.0; // arms must carry signal or the test is inconclusive
  std::uint64_t seed = 1;
};
ExperimentResult run_equivalence_check(const EquivalenceConfig& config = {});

// --- windowed-Adam step moments vs the expansion oracles --------------------

struct AdamMomentConfig {
  std::vector<double> x_values = {0.0025, 0.01, 0.04};
  double gradient = 1.0;
  double eta = 1.0;
  double n_m = 10.0;
  double n_v = 1000.0;
  long trials = 1000000;
  double m1_rel_tol = 0.02;
  double m2_rel_tol = 0.03;
  std::uint64_t seed = 1;
};
ExperimentResult run_adam_moment_check(const AdamMomentConfig& config = {});

// --- importance-correction bias audit under an engine mismatch -------------

struct IsCorrectionConfig {
  double high_wrong_logit = 0.8;
  double low_wrong_logit = -1.2; // two arms; their ratio lands near 1.5
  double sharpen_temperature = 0.8; // rollout engine divides logits by this
  int group_size_unclipped = 4;
  long groups_unclipped = 1000000;
  double sigma_gate = 3.0;
  double eps_clip = 0.2;
  int group_size_clipped = 8;
  long groups_clipped = 200000;
  std::uint64_t seed = 1;
};
ExperimentResult run_is_correction_check(const IsCorrectionConfig& config = {});

// --- loss gradient vs central finite differences ----------------------------

struct GradientFdConfig {
  int cases = 60;
  double step = 1e-5;
  double tolerance = 1e-6;
  std::uint64_t seed = 1;
};
ExperimentResult run_gradient_fd_check(const GradientFdConfig& config = {});

// --- pool state machine: random sequences + exhaustive small instances ------

struct PoolMachineConfig {
  int random_sequences = 10000;
  int max_events_per_sequence = 60;
  int problems = 8;
  long budget_limit = 40;
  int exhaustive_problems = 3;
  long exhaustive_budget = 3;
  std::uint64_t seed = 1;
};
ExperimentResult run_pool_machine_check(const PoolMachineConfig& config = {});

// --- hard-problem rescue: small vs large rollout N at fixed eta -------------

struct RescueConfig {
  int vocab = 4;
  int length = 4;
  double target_accuracy_low = 0.009; // post-SFT starting accuracy bracket
  double target_accuracy_high = 0.011;
  int small_n = 8;
  int large_n = 256;
  double eta = 1.0;
  int steps = 120; // equal per-arm step budget
  double tau_rl = 0.70;
  int seeds = 10;
  int small_max_success = 2;
  int large_min_success = 8;
  double fisher_alpha = 0.01;
  std::uint64_t seed = 1;
};
ExperimentResult run_rescue_study(const RescueConfig& config = {});

// --- data scaling: distinct solutions per problem vs post-SFT pass rates ----

struct DataScalingConfig {
  int problems = 6;
  int vocab = 4;
  // Each problem's correct set is one random 9-token stem followed by every
  // possible 3-token tail, so correct_per_problem must equal vocab^tail for
  // some tail length < length. Reference solutions share the stem and differ
  // in the tail; a policy that internalizes the stem generalizes to tails it
  // never saw, which keeps pass rates and training-set overlap decoupled.
  int length = 12;
  int correct_per_problem = 64;
  std::vector<int> solution_counts = {1, 2, 3, 5, 10};
  double sft_learning_rate = 0.25;
  int sft_epochs = 6;
  int eval_samples = 4000;
  int pass_k = 16;
  int duplicate_probe_samples = 20;
  int seeds = 10;
  double alpha = 0.05;
  double max_duplicate_rate = 0.10;
  std::uint64_t seed = 1;
};
ExperimentResult run_data_scaling_study(const DataScalingConfig& config = {});

// --- rollout allocation: accuracy-partitioned N ladder vs a single N --------

struct PartitionConfig {
  int easy_problems = 6; // vocab 4, length 2, 5 correct sequences
  int hard_problems = 2; // vocab 4, length 4, 2-3 correct sequences
  int baseline_n = 32;
  std::vector<int> ladder = {16, 32, 64, 128};
  int group_size = 2;
  double eta = 1.0;
  double tau_rl = 0.70;
  long total_budget = 128000; // rollouts per arm
  int eval_samples = 20;
  int pass_k = 16;
  int seeds = 10;
  int min_wins = 8;
  double budget_tolerance = 0.01;
  std::uint64_t seed = 1;
};
ExperimentResult run_partition_study(const PartitionConfig& config = {});

// --- merging two specialist runs through replay distillation ----------------

struct MergeConfig {
  int problems_per_run = 3; // two disjoint subsets of this size
  int vocab = 4;
  int length = 2;
  int correct_per_problem = 5;
  int rollout_n = 32;
  double eta = 1.0;
  int steps = 60;
  double tau_rl = 0.70;
  std::size_t replay_capacity = 100;
  double min_ratio = 0.9; // merged accuracy vs each specialist's own problems
  DistillConfig distill{};
  std::uint64_t seed = 1;
};
ExperimentResult run_merge_check(const MergeConfig& config = {});

// --- end-to-end pipeline: termination, determinism, checkpoint resume -------

struct DeterminismConfig {
  int problems = 50;
  int vocab = 4;
  int length = 3;
  int interrupt_after_steps = 3;
  double max_seconds = 300.0;
  std::string checkpoint_path; // empty -> under the system temp directory
  std::uint64_t seed = 1;
};
// The pipeline configuration used for the 50-problem run (also the smoke suite
// behind the CLI's pipeline command when no config file is given).
PipelineConfig determinism_pipeline_config(std::uint64_t seed);
ProblemSuite make_determinism_suite(const DeterminismConfig& config);
ExperimentResult run_determinism_check(const DeterminismConfig& config = {});

} // namespace poolrl
