#include "poolrl/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "poolrl/stats.hpp"

namespace poolrl {

std::vector<GroupPlan> partition_groups(const PoolState& state, int group_size) {
  if (group_size < 1)
    throw std::invalid_argument("partition_groups: group_size >= 1");

  std::vector<std::pair<double, ProblemId>> solvable;
  for (const auto& [id, rec] : state.problems)
    if (rec.pool == Pool::Solvable) solvable.emplace_back(rec.p_hat, id);
  std::sort(solvable.begin(), solvable.end());

  std::vector<GroupPlan> plans;
  for (std::size_t start = 0; start < solvable.size();
       start += static_cast<std::size_t>(group_size)) {
    GroupPlan plan;
    plan.group_id = static_cast<int>(plans.size());
    std::size_t stop =
        std::min(solvable.size(), start + static_cast<std::size_t>(group_size));
    for (std::size_t i = start; i < stop; ++i)
      plan.members.push_back(solvable[i].second);
    plans.push_back(std::move(plan));
  }
  return plans;
}

int assign_initial_n(int rank, int group_count, const PipelineConfig& config) {
  const std::vector<int>& ladder = config.n_ladder;
  if (ladder.empty()) throw std::invalid_argument("assign_initial_n: empty ladder");
  for (int n : ladder)
    if (n < 2) throw std::invalid_argument("assign_initial_n: ladder entries >= 2");
  if (group_count < 1 || rank < 0 || rank >= group_count)
    throw std::invalid_argument("assign_initial_n: rank outside [0, group_count)");

  const std::size_t s = ladder.size();
  if (group_count == 1) return ladder[(s - 1) / 2];

  // rank 0 is the hardest group; by default it gets the top of the ladder.
  double t = static_cast<double>(rank) / static_cast<double>(group_count - 1);
  double pos = config.invert_n_ladder ? t * static_cast<double>(s - 1)
                                      : (1.0 - t) * static_cast<double>(s - 1);
  std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  std::size_t hi = std::min(s - 1, lo + 1);
  double frac = pos - static_cast<double>(lo);
  double value = static_cast<double>(ladder[lo]) +
                 frac * static_cast<double>(ladder[hi] - ladder[lo]);
  return static_cast<int>(std::llround(value));
}

bool detect_plateau(const std::vector<double>& reward_history, int window,
                    double slope_threshold) {
  if (window < 2) throw std::invalid_argument("detect_plateau: window >= 2");
  if (reward_history.size() < static_cast<std::size_t>(window)) return false;
  std::vector<double> tail(reward_history.end() - window, reward_history.end());
  return stats::least_squares_slope(tail) < slope_threshold;
}

namespace {

double measure_p_hat(const TabularPolicy& policy, const ProblemSpec& spec,
                     const PipelineConfig& config, std::mt19937_64& rng) {
  return accuracy_estimate(policy, spec, config.accuracy_samples, rng,
                           config.exact_accuracy_eval)
      .p_hat;
}

}  // namespace

GroupOutcome run_group(TabularPolicy& policy, GroupPlan& plan,
                       PoolState& pool_state,
                       const std::map<ProblemId, ProblemSpec>& problems,
                       const PipelineConfig& config, std::mt19937_64& rng) {
  if (plan.members.empty()) throw std::invalid_argument("run_group: empty group");
  if (plan.current_n < 2) throw std::invalid_argument("run_group: N >= 2");
  if (plan.eta <= 0.0) throw std::invalid_argument("run_group: eta > 0");
  if (plan.step_budget < 0) throw std::invalid_argument("run_group: step_budget >= 0");

  std::vector<ProblemSpec> specs;
  specs.reserve(plan.members.size());
  for (const ProblemId& id : plan.members) {
    auto pit = problems.find(id);
    if (pit == problems.end())
      throw std::invalid_argument("run_group: unknown problem '" + id + "'");
    auto rit = pool_state.problems.find(id);
    if (rit == pool_state.problems.end() || rit->second.pool != Pool::Solvable)
      throw std::invalid_argument("run_group: member '" + id + "' not Solvable");
    rit->second.group_id = plan.group_id;
    specs.push_back(pit->second);
  }

  const long long m = static_cast<long long>(plan.members.size());
  const std::string label = "group:" + std::to_string(plan.group_id);

  OptimizerState opt;
  opt.kind = config.optimizer;
  opt.learning_rate = plan.eta;

  GroupOutcome outcome;
  plan.status = GroupPlan::Status::running;
  int n = plan.current_n;
  long long per_member_used = 0;  // rollouts spent per member (uniform)
  int doublings = 0;

  auto measure_all = [&]() {
    std::vector<double> phats(specs.size());
    for (std::size_t i = 0; i < specs.size(); ++i)
      phats[i] = measure_p_hat(policy, specs[i], config, rng);
    return phats;
  };

  while (true) {
    outcome.n_history.push_back(n);
    std::vector<double> cycle_start = measure_all();
    std::vector<double> phats = cycle_start;
    std::vector<double> history;
    bool out_of_budget = false;
    bool plateaued = false;
    long long steps_this_cycle = 0;

    while (steps_this_cycle < plan.step_budget) {
      if ((per_member_used + n) * m > plan.rollout_budget) {
        out_of_budget = true;
        break;
      }
      std::vector<RolloutGroup> batch;
      StepMetrics metrics = rl_step(policy, specs, n, opt, config.perturbation,
                                    config.eps_is, rng, &batch);
      metrics.label = label;
      outcome.metrics.push_back(metrics);
      for (const RolloutGroup& g : batch)
        for (const Solution& s : g.solutions)
          if (s.reward == 1) outcome.replay_delta.push_back(s);

      per_member_used += n;
      outcome.rollouts_used = per_member_used * m;
      outcome.steps_used += 1;
      steps_this_cycle += 1;
      history.push_back(metrics.mean_reward);

      phats = measure_all();
      bool all_solved = true;
      for (double p : phats)
        if (p < pool_state.tau_rl) all_solved = false;
      if (all_solved) {
        PoolEvent event;
        event.kind = PoolEvent::Kind::rl_group_succeeded;
        event.group_id = plan.group_id;
        event.members = plan.members;
        event.member_p_hats = phats;
        event.per_member_rollouts = per_member_used;
        pool_state = apply_event(std::move(pool_state), event);
        plan.status = GroupPlan::Status::succeeded;
        outcome.succeeded = true;
        outcome.final_p_hats = phats;
        return outcome;
      }
      if (detect_plateau(history, config.plateau_window, config.plateau_slope)) {
        plateaued = true;
        break;
      }
    }
    (void)plateaued;

    if (out_of_budget) {
      // Members that cannot fund one more step from their own pool budget are
      // done for good: any residual smaller than a rollout batch is written
      // off so Failed always means the budget is spent. The rest re-enter the
      // pool machinery with their actual spend charged.
      std::vector<ProblemId> exhausted, remaining;
      std::vector<double> remaining_p_hats;
      for (std::size_t i = 0; i < plan.members.size(); ++i) {
        const ProblemRecord& rec = pool_state.problems.at(plan.members[i]);
        if (rec.budget_spent + per_member_used + n > rec.budget_limit) {
          exhausted.push_back(plan.members[i]);
        } else {
          remaining.push_back(plan.members[i]);
          remaining_p_hats.push_back(phats[i]);
        }
      }
      for (const ProblemId& id : exhausted) {
        const ProblemRecord& rec = pool_state.problems.at(id);
        PoolEvent event;
        event.kind = PoolEvent::Kind::rl_group_failed_budget_exhausted;
        event.group_id = plan.group_id;
        event.members = {id};
        event.per_member_rollouts =
            std::max(per_member_used, rec.budget_limit - rec.budget_spent);
        pool_state = apply_event(std::move(pool_state), event);
      }
      if (!remaining.empty()) {
        PoolEvent event;
        event.kind = PoolEvent::Kind::rl_group_failed_budget_left;
        event.group_id = plan.group_id;
        event.members = remaining;
        event.member_p_hats = remaining_p_hats;
        event.per_member_rollouts = per_member_used;
        pool_state = apply_event(std::move(pool_state), event);
      }
      plan.status = GroupPlan::Status::failed;
      outcome.final_p_hats = phats;
      return outcome;
    }

    bool improved = false;
    for (std::size_t i = 0; i < phats.size(); ++i)
      if (phats[i] > cycle_start[i] + 1e-12) improved = true;

    if (!improved) {
      PoolEvent event;
      event.kind = PoolEvent::Kind::rl_group_failed_budget_left;
      event.group_id = plan.group_id;
      event.members = plan.members;
      event.member_p_hats = phats;
      event.per_member_rollouts = per_member_used;
      pool_state = apply_event(std::move(pool_state), event);
      plan.status = GroupPlan::Status::failed;
      outcome.final_p_hats = phats;
      return outcome;
    }

    // Progress but no success yet: double N (learning rate stays fixed)
    // unless the doubling cap says otherwise, and start another cycle.
    if (config.max_doublings < 0 || doublings < config.max_doublings) {
      n *= 2;
      doublings += 1;
      plan.current_n = n;
    }
  }
}

}  // namespace poolrl
