#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "poolrl/grpo.hpp"
#include "poolrl/rng.hpp"

using namespace poolrl;

namespace {

Solution bandit_solution(const ProblemId& id, int arm, int reward, double lp) {
  Solution s;
  s.problem_id = id;
  s.tokens = {arm};
  s.reward = reward;
  s.logprob_rollout = {lp};
  s.logprob_train = {lp};
  return s;
}

}  // namespace

TEST_CASE("group construction validates size and problem identity") {
  Solution a = bandit_solution("p", 0, 1, -0.7);
  Solution b = bandit_solution("p", 1, 0, -0.7);
  CHECK_NOTHROW(make_group({a, b}));
  CHECK_THROWS_AS(make_group({a}), std::invalid_argument);
  Solution other = bandit_solution("q", 0, 1, -0.7);
  CHECK_THROWS_AS(make_group({a, other}), std::invalid_argument);
}

TEST_CASE("group-normalized advantages match frozen values") {
  auto adv = grpo_advantages({1, 0, 0, 0});
  CHECK(adv[0] == doctest::Approx(1.732046807578115).epsilon(1e-12));
  for (int i = 1; i < 4; ++i)
    CHECK(adv[static_cast<std::size_t>(i)] ==
          doctest::Approx(-0.5773489358593717).epsilon(1e-12));

  auto two = grpo_advantages({1, 0});
  CHECK(two[0] == doctest::Approx(0.999998000004).epsilon(1e-12));
  CHECK(two[1] == doctest::Approx(-0.999998000004).epsilon(1e-12));
}

TEST_CASE("all-equal reward groups give exactly zero advantages") {
  for (auto rewards : {std::vector<int>{1, 1, 1}, std::vector<int>{0, 0}}) {
    for (double a : grpo_advantages(rewards)) CHECK(a == 0.0);
  }
}

TEST_CASE("advantage input validation") {
  CHECK_THROWS_AS(grpo_advantages({1}), std::invalid_argument);
  CHECK_THROWS_AS(grpo_advantages({1, 2}), std::invalid_argument);
  CHECK_THROWS_AS(grpo_advantages({-1, 0}), std::invalid_argument);
}

TEST_CASE("importance reweighting clips the ratio from above only") {
  double l12 = std::log(1.2), l3 = std::log(3.0), l01 = std::log(0.1);
  // ratio below the cap passes through
  CHECK(is_reweight(2.0, {l12}, {0.0}, 0.5)[0] == doctest::Approx(2.4).epsilon(1e-12));
  // ratio above the cap clips to 1 + eps
  CHECK(is_reweight(2.0, {l3}, {0.0}, 0.2)[0] == doctest::Approx(2.4).epsilon(1e-12));
  // small ratios are never clipped up
  CHECK(is_reweight(2.0, {l01}, {0.0}, 0.2)[0] == doctest::Approx(0.2).epsilon(1e-12));
  // the clip acts on the ratio, not on the signed product
  CHECK(is_reweight(-1.0, {l3}, {0.0}, 0.2)[0] == doctest::Approx(-1.2).epsilon(1e-12));
  // disabled clipping
  CHECK(is_reweight(2.0, {l3}, {0.0}, kNoIsClip)[0] == doctest::Approx(6.0).epsilon(1e-12));
  // per-token application
  auto per_token = is_reweight(1.0, {l12, l3}, {0.0, 0.0}, 0.2);
  CHECK(per_token[0] == doctest::Approx(1.2).epsilon(1e-12));
  CHECK(per_token[1] == doctest::Approx(1.2).epsilon(1e-12));

  CHECK_THROWS_AS(is_reweight(1.0, {0.0}, {0.0}, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(is_reweight(1.0, {1e4}, {0.0}, 0.2), std::runtime_error);
  CHECK_THROWS_AS(is_reweight(1.0, {0.0, 0.0}, {0.0}, 0.2), std::invalid_argument);
}

TEST_CASE("identical engines leave corrected advantages at their base") {
  RolloutGroup group = make_group(
      {bandit_solution("p", 0, 1, -0.69), bandit_solution("p", 1, 0, -0.69)});
  AdvantageSet adv = compute_advantages(group, 0.2);
  REQUIRE(adv.base.size() == 2);
  REQUIRE(adv.corrected.size() == 2);
  CHECK(adv.corrected[0][0] == doctest::Approx(adv.base[0]).epsilon(1e-15));
  CHECK(adv.corrected[1][0] == doctest::Approx(adv.base[1]).epsilon(1e-15));
}

TEST_CASE("batch loss gradient on a two-armed group matches hand arithmetic") {
  ProblemSpec bandit = make_bandit("p", 2, 0);
  TabularPolicy policy = make_uniform_policy({bandit});
  double lp = std::log(0.5);
  RolloutGroup group = make_group(
      {bandit_solution("p", 0, 1, lp), bandit_solution("p", 1, 0, lp)});
  AdvantageSet adv = compute_advantages(group, 0.2);
  ParamGrad grad = loss_gradient({group}, {adv}, policy);

  // -(1/2)[a*(e0 - p) - a*(e1 - p)] with a = 1/(0.5 + 1e-6), p = (0.5, 0.5)
  double expect = 0.5 * 0.999998000004;
  const Eigen::VectorXd& g = grad.entries.at("p").at(0);
  CHECK(g(0) == doctest::Approx(-expect).epsilon(1e-12));
  CHECK(g(1) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("zero-advantage groups still materialize their gradient slots") {
  ProblemSpec bandit = make_bandit("p", 2, 0);
  TabularPolicy policy = make_uniform_policy({bandit});
  double lp = std::log(0.5);
  RolloutGroup group = make_group(
      {bandit_solution("p", 0, 1, lp), bandit_solution("p", 0, 1, lp)});
  AdvantageSet adv = compute_advantages(group, 0.2);
  ParamGrad grad = loss_gradient({group}, {adv}, policy);
  CHECK_FALSE(grad.empty());
  CHECK(grad.norm() == 0.0);
}

TEST_CASE("sparse parameter containers: slot, norm, scale") {
  ParamGrad g;
  Eigen::VectorXd& v = g.slot("p", 0, 2);
  v << 3.0, 4.0;
  CHECK(g.norm() == doctest::Approx(5.0));
  g.scale(2.0);
  CHECK(g.norm() == doctest::Approx(10.0));
  CHECK(g.slot("p", 0, 2)(0) == doctest::Approx(6.0));
}

TEST_CASE("sgd step is exactly minus learning rate times gradient") {
  OptimizerState opt;
  opt.kind = OptimizerState::Kind::sgd;
  opt.learning_rate = 0.3;
  ParamGrad g;
  g.slot("p", 0, 2) << 2.0, -4.0;
  ParamGrad delta = optimizer_step(opt, g);
  CHECK(delta.entries.at("p").at(0)(0) == doctest::Approx(-0.6).epsilon(1e-15));
  CHECK(delta.entries.at("p").at(0)(1) == doctest::Approx(1.2).epsilon(1e-15));
  CHECK(opt.step == 1);
}

TEST_CASE("first adam step without bias correction matches the closed form") {
  OptimizerState opt;
  opt.kind = OptimizerState::Kind::adam;
  opt.learning_rate = 0.01;
  ParamGrad g;
  g.slot("p", 0, 2) << 1.0, -1.0;
  ParamGrad delta = optimizer_step(opt, g);
  // m = 0.1 g, v = 0.001 g^2 -> delta = -lr * 0.1 / (sqrt(0.001) + 1e-8)
  CHECK(delta.entries.at("p").at(0)(0) ==
        doctest::Approx(-0.031622766601686954).epsilon(1e-12));
  CHECK(delta.entries.at("p").at(0)(1) ==
        doctest::Approx(0.031622766601686954).epsilon(1e-12));
}

TEST_CASE("first adam step with bias correction is a signed learning-rate step") {
  OptimizerState opt;
  opt.kind = OptimizerState::Kind::adam;
  opt.learning_rate = 0.01;
  opt.bias_correction = true;
  ParamGrad g;
  g.slot("p", 0, 1) << 2.0;
  ParamGrad delta = optimizer_step(opt, g);
  CHECK(delta.entries.at("p").at(0)(0) ==
        doctest::Approx(-0.009999999950000001).epsilon(1e-12));
}

TEST_CASE("adam keeps decaying moments for keys absent from the batch") {
  OptimizerState opt;
  opt.kind = OptimizerState::Kind::adam;
  opt.learning_rate = 0.1;
  ParamGrad g1;
  g1.slot("a", 0, 1) << 1.0;
  optimizer_step(opt, g1);
  ParamGrad g2;
  g2.slot("b", 0, 1) << 1.0;
  ParamGrad delta = optimizer_step(opt, g2);
  // key "a" still moves on momentum alone
  REQUIRE(delta.entries.count("a") == 1);
  double m = 0.9 * 0.1;           // decayed first moment
  double v = 0.999 * 0.001;       // decayed second moment
  CHECK(delta.entries.at("a").at(0)(0) ==
        doctest::Approx(-0.1 * m / (std::sqrt(v) + 1e-8)).epsilon(1e-12));
  CHECK(delta.entries.count("b") == 1);
}

TEST_CASE("applying deltas validates node layout and finiteness") {
  ProblemSpec bandit = make_bandit("p", 2, 0);
  TabularPolicy policy = make_uniform_policy({bandit});
  ParamGrad delta;
  delta.slot("p", 0, 2) << 0.5, -0.5;
  apply_delta(policy, delta);
  const Eigen::VectorXd& z = std::get<Eigen::VectorXd>(policy.tables.at("p"));
  CHECK(z(0) == doctest::Approx(0.5));
  CHECK(z(1) == doctest::Approx(-0.5));

  ParamGrad bad_node;
  bad_node.slot("p", 1, 2) << 0.1, 0.1;
  CHECK_THROWS_AS(apply_delta(policy, bad_node), std::logic_error);

  ParamGrad non_finite;
  non_finite.slot("p", 0, 2) << std::numeric_limits<double>::infinity(), 0.0;
  CHECK_THROWS_AS(apply_delta(policy, non_finite), std::runtime_error);
}

TEST_CASE("one rl step: identical engines report unit ratios and no clipping") {
  ProblemSpec bandit = make_bandit("p", 2, 0);
  TabularPolicy policy = make_uniform_policy({bandit});
  OptimizerState opt;
  opt.learning_rate = 0.5;
  auto rng = make_rng(4, {fnv1a64("rl-step")});
  std::vector<RolloutGroup> groups;
  StepMetrics metrics =
      rl_step(policy, {bandit}, 16, opt, EnginePerturbation{}, 0.2, rng, &groups);

  CHECK(metrics.n == 16);
  CHECK(metrics.mean_is_ratio == 1.0);
  CHECK(metrics.clip_fraction == 0.0);
  REQUIRE(groups.size() == 1);
  CHECK(groups[0].size() == 16);
  CHECK((metrics.zero_var_fraction == 0.0 || metrics.zero_var_fraction == 1.0));
  CHECK(metrics.step == 1);
}

TEST_CASE("rl steps are reproducible and improve a bandit policy") {
  ProblemSpec bandit = make_bandit("p", 2, 0);
  auto run = [&]() {
    TabularPolicy policy = make_uniform_policy({bandit});
    OptimizerState opt;
    opt.learning_rate = 0.5;
    auto rng = make_rng(9, {fnv1a64("rl-improve")});
    for (int s = 0; s < 30; ++s)
      rl_step(policy, {bandit}, 16, opt, EnginePerturbation{}, 0.2, rng);
    return exact_accuracy(policy, bandit);
  };
  double acc1 = run();
  double acc2 = run();
  CHECK(acc1 == acc2);
  CHECK(acc1 > 0.75);
}

TEST_CASE("rl step input validation") {
  ProblemSpec bandit = make_bandit("p", 2, 0);
  TabularPolicy policy = make_uniform_policy({bandit});
  OptimizerState opt;
  auto rng = make_rng(1, {});
  CHECK_THROWS_AS(
      rl_step(policy, {bandit}, 1, opt, EnginePerturbation{}, 0.2, rng),
      std::invalid_argument);
  CHECK_THROWS_AS(
      rl_step(policy, {bandit}, 8, opt, EnginePerturbation{}, -0.5, rng),
      std::invalid_argument);
  CHECK_THROWS_AS(rl_step(policy, {}, 8, opt, EnginePerturbation{}, 0.2, rng),
                  std::invalid_argument);
}
