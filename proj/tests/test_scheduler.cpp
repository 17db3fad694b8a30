#include <doctest.h>

#include <cmath>
#include <map>
#include <stdexcept>
#include <vector>

#include "poolrl/rng.hpp"
#include "poolrl/scheduler.hpp"

using namespace poolrl;

namespace {

PoolEvent measured(const ProblemId& id, double p_hat) {
  PoolEvent e;
  e.kind = PoolEvent::Kind::accuracy_measured;
  e.problem = id;
  e.p_hat = p_hat;
  e.samples = 20;
  return e;
}

}  // namespace

TEST_CASE("grouping sorts the solvable pool by accuracy then id") {
  PoolState state = make_pool_state({"a", "b", "c", "d", "e", "f"}, 1000);
  state = apply_event(std::move(state), measured("a", 0.5));
  state = apply_event(std::move(state), measured("b", 0.3));
  state = apply_event(std::move(state), measured("c", 0.6));
  state = apply_event(std::move(state), measured("d", 0.3));
  state = apply_event(std::move(state), measured("e", 0.02)); // Unsolvable
  state = apply_event(std::move(state), measured("f", 0.9));  // Solved

  auto groups = partition_groups(state, 3);
  REQUIRE(groups.size() == 2);
  CHECK(groups[0].group_id == 0);
  CHECK(groups[1].group_id == 1);
  CHECK(groups[0].members == std::vector<ProblemId>{"b", "d", "a"});
  CHECK(groups[1].members == std::vector<ProblemId>{"c"});

  CHECK(partition_groups(make_pool_state({"x"}, 10), 3).empty());
  CHECK_THROWS_AS(partition_groups(state, 0), std::invalid_argument);
}

TEST_CASE("rollout sizes interpolate the ladder from hardest to easiest") {
  PipelineConfig config;
  config.n_ladder = {16, 32, 64, 128};

  // four groups map onto the ladder endpoints-first: hardest gets the top
  CHECK(assign_initial_n(0, 4, config) == 128);
  CHECK(assign_initial_n(1, 4, config) == 64);
  CHECK(assign_initial_n(2, 4, config) == 32);
  CHECK(assign_initial_n(3, 4, config) == 16);

  // three groups interpolate: the middle rank lands between rungs
  CHECK(assign_initial_n(0, 3, config) == 128);
  CHECK(assign_initial_n(1, 3, config) == 48); // midpoint of 32 and 64
  CHECK(assign_initial_n(2, 3, config) == 16);

  // a single group takes the ladder midpoint
  CHECK(assign_initial_n(0, 1, config) == 32);

  config.invert_n_ladder = true;
  CHECK(assign_initial_n(0, 4, config) == 16);
  CHECK(assign_initial_n(3, 4, config) == 128);
  config.invert_n_ladder = false;

  CHECK_THROWS_AS(assign_initial_n(4, 4, config), std::invalid_argument);
  CHECK_THROWS_AS(assign_initial_n(-1, 4, config), std::invalid_argument);
  PipelineConfig bad = config;
  bad.n_ladder = {};
  CHECK_THROWS_AS(assign_initial_n(0, 1, bad), std::invalid_argument);
  bad.n_ladder = {1, 8};
  CHECK_THROWS_AS(assign_initial_n(0, 1, bad), std::invalid_argument);
}

TEST_CASE("plateau detection uses a strict slope threshold on the tail") {
  // shorter than the window: not a plateau yet
  CHECK_FALSE(detect_plateau({0.1, 0.1}, 3, 1e-4));
  // flat tail: slope 0 < 1e-4
  CHECK(detect_plateau({0.0, 0.5, 0.5, 0.5, 0.5}, 3, 1e-4));
  // rising tail: slope 0.1 >= threshold
  CHECK_FALSE(detect_plateau({0.0, 0.1, 0.2, 0.3}, 3, 1e-4));
  // boundary: slope exactly equal to the threshold is not a plateau
  CHECK_FALSE(detect_plateau({0.0, 0.1, 0.2}, 3, 0.1));
  CHECK(detect_plateau({0.0, 0.1, 0.2}, 3, 0.1000001));
  // declining rewards count as plateaued (slope below threshold)
  CHECK(detect_plateau({0.5, 0.4, 0.3}, 3, 1e-4));
  CHECK_THROWS_AS(detect_plateau({0.1, 0.2}, 1, 1e-4), std::invalid_argument);
}

TEST_CASE("run_group validates the plan against the pool state") {
  ProblemSpec bandit = make_bandit("a", 2, 0);
  std::map<ProblemId, ProblemSpec> problems = {{"a", bandit}};
  TabularPolicy policy = make_uniform_policy({bandit});
  PoolState state = make_pool_state({"a"}, 1000);
  PipelineConfig config;
  auto rng = make_rng(1, {});

  GroupPlan plan;
  plan.members = {"a"};
  plan.current_n = 8;
  plan.eta = 1.0;
  plan.step_budget = 4;
  plan.rollout_budget = 1000;

  // "a" is still Unsolvable
  CHECK_THROWS_AS(run_group(policy, plan, state, problems, config, rng),
                  std::invalid_argument);
  state = apply_event(std::move(state), measured("a", 0.5));

  GroupPlan bad = plan;
  bad.members = {};
  CHECK_THROWS_AS(run_group(policy, bad, state, problems, config, rng),
                  std::invalid_argument);
  bad = plan;
  bad.current_n = 1;
  CHECK_THROWS_AS(run_group(policy, bad, state, problems, config, rng),
                  std::invalid_argument);
  bad = plan;
  bad.eta = 0.0;
  CHECK_THROWS_AS(run_group(policy, bad, state, problems, config, rng),
                  std::invalid_argument);
  bad = plan;
  bad.step_budget = -1;
  CHECK_THROWS_AS(run_group(policy, bad, state, problems, config, rng),
                  std::invalid_argument);
  bad = plan;
  bad.members = {"ghost"};
  CHECK_THROWS_AS(run_group(policy, bad, state, problems, config, rng),
                  std::invalid_argument);
}

TEST_CASE("run_group drives an easy bandit to success") {
  ProblemSpec bandit = make_bandit("a", 2, 0);
  std::map<ProblemId, ProblemSpec> problems = {{"a", bandit}};
  TabularPolicy policy = make_uniform_policy({bandit});
  PoolState state = make_pool_state({"a"}, 100000);
  state = apply_event(std::move(state), measured("a", 0.5));

  PipelineConfig config;
  config.exact_accuracy_eval = true;
  auto rng = make_rng(20, {fnv1a64("group-success")});

  GroupPlan plan;
  plan.group_id = 3;
  plan.members = {"a"};
  plan.current_n = 8;
  plan.eta = 1.0;
  plan.step_budget = 40;
  plan.rollout_budget = 100000;

  GroupOutcome outcome = run_group(policy, plan, state, problems, config, rng);
  CHECK(outcome.succeeded);
  CHECK(plan.status == GroupPlan::Status::succeeded);
  CHECK(state.problems.at("a").pool == Pool::Solved);
  CHECK_FALSE(state.problems.at("a").group_id.has_value());
  REQUIRE(outcome.final_p_hats.size() == 1);
  CHECK(outcome.final_p_hats[0] >= 0.70);
  CHECK(outcome.n_history == std::vector<int>{8});
  CHECK(outcome.rollouts_used == outcome.steps_used * 8);
  CHECK(outcome.metrics.size() == static_cast<std::size_t>(outcome.steps_used));
  CHECK(outcome.metrics.front().label == "group:3");
  CHECK(state.problems.at("a").budget_spent == outcome.rollouts_used);
  for (const Solution& s : outcome.replay_delta) {
    CHECK(s.reward == 1);
    CHECK(s.tokens == TokenSeq{0});
  }
  CHECK_FALSE(outcome.replay_delta.empty());
  CHECK(state.log.back().kind == PoolEvent::Kind::rl_group_succeeded);
}

TEST_CASE("a zero step budget fails the cycle without consuming rollouts") {
  ProblemSpec bandit = make_bandit("a", 2, 0);
  std::map<ProblemId, ProblemSpec> problems = {{"a", bandit}};
  TabularPolicy policy = make_uniform_policy({bandit});
  PoolState state = make_pool_state({"a"}, 1000);
  state = apply_event(std::move(state), measured("a", 0.5));

  PipelineConfig config;
  auto rng = make_rng(2, {});
  GroupPlan plan;
  plan.members = {"a"};
  plan.current_n = 8;
  plan.eta = 1.0;
  plan.step_budget = 0;
  plan.rollout_budget = 1000;

  GroupOutcome outcome = run_group(policy, plan, state, problems, config, rng);
  CHECK_FALSE(outcome.succeeded);
  CHECK(outcome.steps_used == 0);
  CHECK(outcome.rollouts_used == 0);
  CHECK(plan.status == GroupPlan::Status::failed);
  CHECK(state.problems.at("a").pool == Pool::Solvable); // p-hat 0.5 unchanged
  CHECK(state.problems.at("a").budget_spent == 0);
  CHECK(state.log.back().kind == PoolEvent::Kind::rl_group_failed_budget_left);
}

TEST_CASE("running out of the rollout budget fails members terminally") {
  // Exact accuracy 0.1 with a near-zero learning rate: nothing improves, and
  // the plan's rollout budget binds before the cycle's step budget does.
  ProblemSpec ba = make_bandit("a", 2, 0);
  ProblemSpec bb = make_bandit("b", 2, 0);
  std::map<ProblemId, ProblemSpec> problems = {{"a", ba}, {"b", bb}};
  TabularPolicy policy = make_uniform_policy({ba, bb});
  Eigen::VectorXd z(2);
  z << std::log(1.0 / 9.0), 0.0;
  std::get<Eigen::VectorXd>(policy.tables.at("a")) = z;
  std::get<Eigen::VectorXd>(policy.tables.at("b")) = z;

  PoolState state = make_pool_state({"a", "b"}, 20);
  state = apply_event(std::move(state), measured("a", 0.1));
  state = apply_event(std::move(state), measured("b", 0.1));

  PipelineConfig config;
  config.exact_accuracy_eval = true;
  auto rng = make_rng(5, {fnv1a64("exhaust")});

  GroupPlan plan;
  plan.members = {"a", "b"};
  plan.current_n = 8;
  plan.eta = 1e-9;
  plan.step_budget = 40;
  plan.rollout_budget = 32; // two steps of 8 rollouts x 2 members

  GroupOutcome outcome = run_group(policy, plan, state, problems, config, rng);
  CHECK_FALSE(outcome.succeeded);
  CHECK(outcome.steps_used == 2);
  CHECK(outcome.rollouts_used == 32);
  CHECK(outcome.n_history == std::vector<int>{8});
  // 16 spent per member + 8 more would exceed the per-problem limit of 20
  CHECK(state.problems.at("a").pool == Pool::Failed);
  CHECK(state.problems.at("b").pool == Pool::Failed);
  CHECK(state.problems.at("a").budget_spent == 20);
  CHECK(state.problems.at("b").budget_spent == 20);
  CHECK(state.log.back().kind ==
        PoolEvent::Kind::rl_group_failed_budget_exhausted);
}

TEST_CASE("improvement without success doubles N cycle over cycle") {
  ProblemSpec bandit = make_bandit("a", 2, 0);
  std::map<ProblemId, ProblemSpec> problems = {{"a", bandit}};
  TabularPolicy policy = make_uniform_policy({bandit});
  PoolState state = make_pool_state({"a"}, 56);
  state = apply_event(std::move(state), measured("a", 0.5));

  PipelineConfig config;
  config.exact_accuracy_eval = true;
  config.plateau_window = 20; // longer than any cycle here
  auto rng = make_rng(12, {fnv1a64("doubling")});

  GroupPlan plan;
  plan.members = {"a"};
  plan.current_n = 8;
  plan.eta = 0.1; // small enough that one step cannot reach tau_rl
  plan.step_budget = 1;
  plan.rollout_budget = 56; // 8 + 16 + 32, then the 64-cycle cannot start

  GroupOutcome outcome = run_group(policy, plan, state, problems, config, rng);
  CHECK_FALSE(outcome.succeeded);
  CHECK(outcome.n_history == std::vector<int>{8, 16, 32, 64});
  CHECK(outcome.steps_used == 3);
  CHECK(outcome.rollouts_used == 56);
  CHECK(plan.current_n == 64);
  // the per-problem budget (56) cannot fund the 64-rollout cycle: terminal
  CHECK(state.problems.at("a").pool == Pool::Failed);
  CHECK(state.problems.at("a").budget_spent == 56);
}

TEST_CASE("the doubling cap holds N fixed once reached") {
  ProblemSpec bandit = make_bandit("a", 2, 0);
  std::map<ProblemId, ProblemSpec> problems = {{"a", bandit}};
  TabularPolicy policy = make_uniform_policy({bandit});
  PoolState state = make_pool_state({"a"}, 1 << 20);
  state = apply_event(std::move(state), measured("a", 0.5));

  PipelineConfig config;
  config.exact_accuracy_eval = true;
  config.plateau_window = 20;
  config.max_doublings = 1;
  auto rng = make_rng(12, {fnv1a64("doubling-cap")});

  GroupPlan plan;
  plan.members = {"a"};
  plan.current_n = 8;
  plan.eta = 0.05;
  plan.step_budget = 1;
  plan.rollout_budget = 8 + 16 + 16 + 16;

  GroupOutcome outcome = run_group(policy, plan, state, problems, config, rng);
  // one doubling, then N pinned at 16 until the budget refuses the next cycle
  CHECK(outcome.n_history == std::vector<int>{8, 16, 16, 16, 16});
  CHECK(outcome.steps_used == 4);
  CHECK(outcome.rollouts_used == 56);
  CHECK(plan.current_n == 16);
  // plenty of per-problem budget left: failure is non-terminal
  CHECK(state.problems.at("a").pool == Pool::Solvable);
}
