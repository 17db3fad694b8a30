#include <doctest.h>

#include <Eigen/Dense>
#include <stdexcept>
#include <vector>

#include "poolrl/redistill.hpp"

using namespace poolrl;

namespace {

Solution sol(const ProblemId& id, TokenSeq tokens, int reward) {
  Solution s;
  s.problem_id = id;
  s.tokens = std::move(tokens);
  s.reward = reward;
  return s;
}

const Eigen::VectorXd& bandit_logits(const TabularPolicy& policy,
                                     const ProblemId& id) {
  return std::get<Eigen::VectorXd>(policy.tables.at(id));
}

// exact, bitwise-equal logit tables
bool same_logits(const TabularPolicy& a, const TabularPolicy& b,
                 const ProblemId& id) {
  const Eigen::VectorXd& x = bandit_logits(a, id);
  const Eigen::VectorXd& y = bandit_logits(b, id);
  return x.size() == y.size() && (x - y).cwiseAbs().maxCoeff() == 0.0;
}

}  // namespace

TEST_CASE("replay buffers keep only correct solutions, in arrival order") {
  ReplayBuffer buffer = make_replay_buffer(10);
  collect(buffer, {sol("p", {0}, 1), sol("p", {1}, 0), sol("q", {2}, 1),
                   sol("p", {3}, 1)});
  REQUIRE(buffer.buffers.at("p").size() == 2);
  REQUIRE(buffer.buffers.at("q").size() == 1);
  CHECK(buffer.buffers.at("p")[0].seq_no == 0);
  CHECK(buffer.buffers.at("q")[0].seq_no == 1);
  CHECK(buffer.buffers.at("p")[1].seq_no == 2);
  CHECK(buffer.total_size() == 3);
  CHECK_FALSE(buffer.all_empty());
  CHECK(make_replay_buffer(5).all_empty());
  CHECK_THROWS_AS(make_replay_buffer(0), std::invalid_argument);
}

TEST_CASE("per-problem capacity evicts oldest first") {
  ReplayBuffer buffer = make_replay_buffer(3);
  for (int i = 0; i < 5; ++i) collect(buffer, {sol("p", {i}, 1)});
  REQUIRE(buffer.buffers.at("p").size() == 3);
  CHECK(buffer.buffers.at("p")[0].tokens == TokenSeq{2});
  CHECK(buffer.buffers.at("p")[1].tokens == TokenSeq{3});
  CHECK(buffer.buffers.at("p")[2].tokens == TokenSeq{4});
  CHECK(buffer.buffers.at("p")[0].seq_no == 2);
}

TEST_CASE("group collection flattens groups in order") {
  ReplayBuffer buffer = make_replay_buffer(10);
  RolloutGroup g1 = make_group({sol("p", {0}, 1), sol("p", {1}, 0)});
  RolloutGroup g2 = make_group({sol("q", {2}, 1), sol("q", {3}, 1)});
  collect(buffer, std::vector<RolloutGroup>{g1, g2});
  CHECK(buffer.total_size() == 3);
  CHECK(buffer.buffers.at("p")[0].seq_no == 0);
  CHECK(buffer.buffers.at("q")[0].seq_no == 1);
  CHECK(buffer.buffers.at("q")[1].seq_no == 2);
}

TEST_CASE("buffer union is in canonical problem/arrival order") {
  ReplayBuffer buffer = make_replay_buffer(10);
  collect(buffer, {sol("zzz", {0}, 1), sol("aaa", {1}, 1), sol("zzz", {2}, 1)});
  std::vector<Solution> all = union_solutions(buffer);
  REQUIRE(all.size() == 3);
  CHECK(all[0].problem_id == "aaa");
  CHECK(all[1].problem_id == "zzz");
  CHECK(all[1].seq_no == 0);
  CHECK(all[2].seq_no == 2);
}

TEST_CASE("distilling a single solution matches the frozen trajectory") {
  ProblemSpec bandit = make_bandit("b", 4, 2);
  TabularPolicy base = make_uniform_policy({bandit});
  ReplayBuffer buffer = make_replay_buffer(10);
  collect(buffer, {sol("b", {2}, 1)});
  DistillConfig config; // lr 0.3, 4 epochs
  TabularPolicy out = redistill(base, buffer, config);
  CHECK(exact_accuracy(out, bandit) ==
        doctest::Approx(0.48884458983086987).epsilon(1e-12));
  // the base is untouched (distillation copies)
  CHECK(exact_accuracy(base, bandit) == doctest::Approx(0.25));

  ReplayBuffer empty = make_replay_buffer(10);
  CHECK_THROWS_AS(redistill(base, empty, config), std::invalid_argument);
}

TEST_CASE("a zero learning rate distills to the identical policy") {
  ProblemSpec bandit = make_bandit("b", 3, 0);
  TabularPolicy base = make_uniform_policy({bandit});
  std::get<Eigen::VectorXd>(base.tables.at("b")) << 0.4, -0.1, 0.0;
  DistillConfig config;
  config.learning_rate = 0.0;
  TabularPolicy out = distill_dataset(base, {sol("b", {1}, 1)}, config, "probe");
  CHECK(same_logits(out, base, "b"));
  CHECK_THROWS_AS(distill_dataset(base, {}, config, "probe"),
                  std::invalid_argument);
}

TEST_CASE("distillation depends on buffer contents, not assembly order") {
  ProblemSpec pa = make_bandit("a", 3, 0);
  ProblemSpec pb = make_bandit("b", 3, 1);
  TabularPolicy base = make_uniform_policy({pa, pb});
  DistillConfig config;

  ReplayBuffer forward = make_replay_buffer(10);
  collect(forward, {sol("a", {0}, 1), sol("b", {1}, 1), sol("a", {0}, 1)});
  ReplayBuffer reversed = make_replay_buffer(10);
  collect(reversed, {sol("a", {0}, 1), sol("a", {0}, 1), sol("b", {1}, 1)});
  // same per-problem contents; arrival interleaving differs across problems
  TabularPolicy out1 = redistill(base, forward, config);
  TabularPolicy out2 = redistill(base, reversed, config);
  CHECK(same_logits(out1, out2, "a"));
  CHECK(same_logits(out1, out2, "b"));
}

TEST_CASE("merging runs is order independent and skips re-eviction") {
  ProblemSpec bandit = make_bandit("b", 4, 1);
  TabularPolicy base = make_uniform_policy({bandit});
  DistillConfig config;

  ReplayBuffer run1 = make_replay_buffer(2);
  collect(run1, {sol("b", {1}, 1), sol("b", {1}, 1)});
  ReplayBuffer run2 = make_replay_buffer(2);
  collect(run2, {sol("b", {1}, 1), sol("b", {1}, 1)});

  TabularPolicy ab = merge_runs(base, {run1, run2}, config);
  TabularPolicy ba = merge_runs(base, {run2, run1}, config);
  CHECK(same_logits(ab, ba, "b"));

  // four solutions trained, not clipped to one run's capacity of two:
  // the merged policy is strictly more trained than a single run's.
  TabularPolicy single = merge_runs(base, {run1}, config);
  CHECK(exact_accuracy(ab, bandit) > exact_accuracy(single, bandit));

  CHECK_THROWS_AS(merge_runs(base, {}, config), std::invalid_argument);
  ReplayBuffer empty = make_replay_buffer(2);
  CHECK_THROWS_AS(merge_runs(base, {empty, empty}, config),
                  std::invalid_argument);
}

TEST_CASE("target retraining runs its two phases from the initial policy") {
  ProblemSpec bandit = make_bandit("b", 4, 3);
  TabularPolicy initial = make_uniform_policy({bandit});
  std::vector<Solution> sft = {sol("b", {3}, 1)};
  std::vector<Solution> replay = {sol("b", {3}, 1), sol("b", {3}, 1)};
  DistillConfig sft_phase{0.5, 2, 7};
  DistillConfig replay_phase{0.3, 1, 7};

  TabularPolicy target =
      train_target_policy(initial, sft, replay, sft_phase, replay_phase);
  TabularPolicy manual = distill_dataset(initial, sft, sft_phase, "target-sft");
  manual = distill_dataset(manual, replay, replay_phase, "target-replay");
  CHECK(same_logits(target, manual, "b"));

  // empty replay set: only the first phase runs
  TabularPolicy sft_only =
      train_target_policy(initial, sft, {}, sft_phase, replay_phase);
  CHECK_FALSE(same_logits(sft_only, manual, "b"));
  TabularPolicy first = distill_dataset(initial, sft, sft_phase, "target-sft");
  CHECK(same_logits(sft_only, first, "b"));

  CHECK_THROWS_AS(train_target_policy(initial, {}, replay, sft_phase, replay_phase),
                  std::invalid_argument);
}
