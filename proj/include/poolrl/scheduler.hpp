#pragma once
// Co-scaling orchestration: accuracy-sorted grouping of the Solvable pool,
// per-group rollout-size assignment from a difficulty ladder, plateau
// detection, and the per-group RL loop with N-doubling on plateau. The group
// learning rate never changes across doublings; N within a group only moves
// as N0 * 2^j.

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "poolrl/grpo.hpp"
#include "poolrl/pools.hpp"

namespace poolrl {

struct GroupPlan {
  enum class Status { pending, running, succeeded, failed };
  int group_id = 0;
  std::vector<ProblemId> members; // ascending accuracy order
  int current_n = 8;
  double eta = 1.0;
  long long step_budget = 40;     // optimizer steps per cycle at one N
  long long rollout_budget = 0;   // total rollouts across all of the group's cycles
  Status status = Status::pending;
};

struct SftStageConfig {
  double learning_rate = 0.5;
  int epochs = 10;
};

struct PipelineConfig {
  double tau_sft = 0.05;
  double tau_rl = 0.70;

  // Grouping and rollout scaling (desk-scale defaults; the paper-scale values
  // group_size=100, ladder 20..160 remain valid settings).
  int group_size = 8;
  std::vector<int> n_ladder = {8, 16, 32, 64};
  // Default assigns larger N to harder (lower accuracy) groups; the inverted
  // direction is available for ablation only.
  bool invert_n_ladder = false;

  // RL stage.
  double eta = 1.0;
  OptimizerState::Kind optimizer = OptimizerState::Kind::sgd;
  double eps_is = 0.2;
  EnginePerturbation perturbation{};
  long long steps_per_cycle = 40;
  int plateau_window = 20;
  double plateau_slope = 1e-4;
  long long rollout_budget_per_problem = 4096;
  int max_doublings = -1; // < 0: unlimited (budget is the only cap)

  // Accuracy measurement: 20 samples, or the exact value when enumerable.
  int accuracy_samples = 20;
  bool exact_accuracy_eval = true;

  // SFT stages.
  int warmup_solutions_per_problem = 1;
  SftStageConfig warmup_sft{0.5, 10};
  SftStageConfig iteration_sft{0.5, 10};
  SftStageConfig redistill_sft{0.3, 4};
  SftStageConfig target_sft{0.5, 10};    // final retrain, solution phase
  SftStageConfig target_replay{0.3, 4};  // final retrain, replay phase

  // Re-distillation base inside the iteration loop: the post-warmup initial
  // policy (default; what makes independent runs mergeable), or the running
  // policy, which just continues from the iteration's RL progress.
  enum class RedistillBase { initial, previous };
  RedistillBase redistill_base = RedistillBase::initial;
  int replay_capacity = 100;
  std::uint64_t shuffle_seed = 7; // replay training-order shuffle

  int max_iterations = 8;
  double temperature = 1.0;
  std::uint64_t seed = 1;
  int eval_samples = 20;
};

// Solvable problems sorted by ascending accuracy (ties by problem id),
// chunked into groups of `group_size`; the last group may be smaller. Empty
// Solvable set gives an empty list.
std::vector<GroupPlan> partition_groups(const PoolState& state, int group_size);

// Rollout size for the group at `rank` (0 = hardest) among `group_count`
// groups: linear interpolation over the ladder by rank, rounded; a single
// group takes the ladder midpoint.
int assign_initial_n(int rank, int group_count, const PipelineConfig& config);

// True iff the least-squares slope of the last `window` points is strictly
// below `slope_threshold`; histories shorter than the window return false.
bool detect_plateau(const std::vector<double>& reward_history, int window,
                    double slope_threshold);

struct GroupOutcome {
  bool succeeded = false;
  long long rollouts_used = 0;
  long long steps_used = 0;
  std::vector<int> n_history;             // N per cycle
  std::vector<Solution> replay_delta;     // correct solutions in rollout order
  std::vector<StepMetrics> metrics;       // one record per optimizer step
  std::vector<double> final_p_hats;       // aligned with the plan's members
};

// Runs the group's RL cycles until every member reaches tau_rl, a cycle shows
// no member improvement (members then route individually by classification),
// or rollout budgets run out (exhausted members fail; the rest route by
// classification). Emits and applies the corresponding pool events.
GroupOutcome run_group(TabularPolicy& policy, GroupPlan& plan,
                       PoolState& pool_state,
                       const std::map<ProblemId, ProblemSpec>& problems,
                       const PipelineConfig& config, std::mt19937_64& rng);

}  // namespace poolrl
