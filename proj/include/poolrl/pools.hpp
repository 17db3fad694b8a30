#pragma once
// The data-management state machine: every problem sits in exactly one of
// four pools (Unsolvable / Solvable / Solved / Failed), transitions are pure
// functions of explicit events, and the append-only event log makes runs
// replayable and the pipeline resumable. Solved and Failed are terminal.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "poolrl/env.hpp"
#include "poolrl/stats.hpp"

namespace poolrl {

enum class Pool { Unsolvable, Solvable, Solved, Failed };
const char* pool_name(Pool pool);

// Classification convention: [0, tau_sft) -> Unsolvable,
// [tau_sft, tau_rl) -> Solvable, [tau_rl, 1] -> Solved. Half-open at both
// boundaries, applied uniformly.
Pool classify(double p_hat, double tau_sft, double tau_rl);

// Solutions added per Unsolvable problem at iteration k: 2^k - 1.
long long solutions_to_add(int k);

struct ProblemRecord {
  Pool pool = Pool::Unsolvable;
  double p_hat = 0.0;
  int sample_count = 0;
  long long solutions_collected = 0;
  long long budget_spent = 0;  // rollout solutions; never exceeds budget_limit
  long long budget_limit = 0;
  std::optional<int> group_id;
};

struct PoolEvent {
  enum class Kind {
    accuracy_measured,
    solutions_added,
    rl_group_succeeded,
    rl_group_failed_budget_left,
    rl_group_failed_budget_exhausted,
  };
  Kind kind = Kind::accuracy_measured;

  // accuracy_measured / solutions_added target one problem.
  ProblemId problem;
  double p_hat = 0.0;
  int samples = 0;
  long long count = 0;

  // Group outcomes target every member; p-hats align with members (succeeded
  // and failed_budget_left). per_member_rollouts is each member's share of the
  // group's rollout spend.
  int group_id = -1;
  std::vector<ProblemId> members;
  std::vector<double> member_p_hats;
  long long per_member_rollouts = 0;
};

const char* event_kind_name(PoolEvent::Kind kind);

struct PoolState {
  double tau_sft = 0.05;
  double tau_rl = 0.70;
  std::map<ProblemId, ProblemRecord> problems;
  std::vector<PoolEvent> log; // append-only

  std::array<int, 4> counts() const;
};

PoolState make_pool_state(const std::vector<ProblemId>& problems,
                          long long budget_limit_per_problem,
                          double tau_sft = 0.05, double tau_rl = 0.70);

// Pure transition; validates the event against the current pools (unknown
// problems, events touching terminal pools, RL outcomes on non-Solvable
// members, or an exhaustion event that does not actually exhaust the budget
// all throw) and appends it to the log. Group success and failure-with-budget
// both route members individually through classify; the two kinds differ in
// audit meaning and in that exhaustion is what sends members to Failed.
PoolState apply_event(PoolState state, const PoolEvent& event);

struct AccuracyEstimate {
  double p_hat = 0.0;
  stats::Interval interval; // 95% Wilson; zero-width in exact mode
  int samples = 0;
  bool exact = false;
};

// Sampled accuracy (default 20 rollouts per problem) or, when the config says
// so and enumeration is feasible, the exact value.
AccuracyEstimate accuracy_estimate(const TabularPolicy& policy,
                                   const ProblemSpec& problem, int samples,
                                   std::mt19937_64& rng, bool use_exact = false);

}  // namespace poolrl
