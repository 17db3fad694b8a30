#pragma once
// End-to-end orchestration and persistence: JSON serialization for every
// durable object, the staged pipeline state machine (warmup SFT, iterations,
// target-policy retrain, final evaluation), checkpoint/resume at stage
// boundaries, and the FinalReport. Reports are byte-identical across reruns
// of the same (config, seed), including runs resumed from a checkpoint:
// every stage draws from RNG substreams derived positionally from the seed,
// so no generator state needs to be stored.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "poolrl/redistill.hpp"
#include "poolrl/scheduler.hpp"

namespace poolrl {

inline constexpr int kSchemaVersion = 1;

using Json = nlohmann::ordered_json;
using ProblemSuite = std::map<ProblemId, ProblemSpec>;

// --- serialization (exact double round-trip; deterministic key order) ---
Json policy_to_json(const TabularPolicy& policy);
TabularPolicy policy_from_json(const Json& j);
Json problem_to_json(const ProblemSpec& spec);
ProblemSpec problem_from_json(const Json& j);
Json suite_to_json(const ProblemSuite& suite);
ProblemSuite suite_from_json(const Json& j);
Json solution_to_json(const Solution& solution);
Solution solution_from_json(const Json& j);
Json pool_state_to_json(const PoolState& state);
PoolState pool_state_from_json(const Json& j);
Json replay_to_json(const ReplayBuffer& buffer);
ReplayBuffer replay_from_json(const Json& j);
Json config_to_json(const PipelineConfig& config);
PipelineConfig config_from_json(const Json& j);
Json metrics_to_json(const StepMetrics& metrics);
StepMetrics metrics_from_json(const Json& j);

// FNV-1a over the canonical config dump, as fixed-width hex.
std::string config_hash(const PipelineConfig& config);

struct GroupReport {
  int group_id = 0;
  std::vector<ProblemId> members;
  std::vector<int> n_history;
  long long steps = 0;
  long long rollouts = 0;
  bool succeeded = false;
};

struct IterationReport {
  int iteration = 0;
  long long solutions_added = 0;
  std::array<int, 4> counts_after_sft{};
  std::array<int, 4> counts_after_rl{};
  std::vector<GroupReport> groups;
  long long rl_rollouts = 0;
};

struct FinalReport {
  int schema_version = kSchemaVersion;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::array<int, 4> warmup_counts{};
  std::map<ProblemId, double> warmup_accuracy;
  std::vector<IterationReport> iterations;
  long long total_rl_rollouts = 0; // exactly sum over rl_steps of N x group size
  std::array<int, 4> final_counts{};
  std::map<ProblemId, double> final_accuracy; // under the target policy
  std::array<double, 4> final_pool_mean_accuracy{};
  std::vector<StepMetrics> step_log; // every optimizer step, in order
};

Json report_to_json(const FinalReport& report);
FinalReport report_from_json(const Json& j);
std::string report_to_string(const FinalReport& report);

enum class PipelinePhase { warmup, iterations, target, eval, done };
const char* phase_name(PipelinePhase phase);

struct PipelineState {
  PipelinePhase phase = PipelinePhase::warmup;
  int completed_iterations = 0;
  TabularPolicy initial_policy; // post-warmup; base for redistill and retrain
  TabularPolicy policy;         // the running policy
  TabularPolicy target_policy;  // set by the target stage
  PoolState pools;
  ReplayBuffer replay;
  std::vector<Solution> sft_archive;              // iteration-stage additions
  std::map<ProblemId, long long> generator_cursors;
  FinalReport report;
};

PipelineState make_pipeline_state(const ProblemSuite& suite,
                                  const PipelineConfig& config);

// Advances exactly one stage: warmup SFT + initial classification, one full
// iteration (SFT, re-measurement, grouped RL, re-distillation), the target
// retrain, or the final evaluation. Returns true while stages remain. The
// iteration phase ends at max_iterations or as soon as every problem is
// terminal.
bool pipeline_step(PipelineState& state, const ProblemSuite& suite,
                   const PipelineConfig& config);

// One iteration of the SFT -> measure -> group RL -> redistill loop;
// state.phase must be the iteration phase.
void run_iteration(PipelineState& state, const ProblemSuite& suite,
                   const PipelineConfig& config);

Json pipeline_state_to_json(const PipelineState& state);
PipelineState pipeline_state_from_json(const Json& j);
void save_checkpoint(const PipelineState& state,
                     const std::filesystem::path& file);
PipelineState load_checkpoint(const std::filesystem::path& file);

// Runs every remaining stage. With a checkpoint path, state is loaded from it
// when it exists (config-hash checked) and re-saved after every stage.
FinalReport run_pipeline(const ProblemSuite& suite, const PipelineConfig& config,
                         const std::filesystem::path& checkpoint_file = {});

// Renders a finished report into a run directory: report.json, metrics.jsonl,
// pool_counts.csv, group_rewards.csv, groups.csv (per-group rollout-size
// doubling history), and summary.txt. Idempotent.
void write_run_outputs(const FinalReport& report,
                       const std::filesystem::path& dir);

}  // namespace poolrl
