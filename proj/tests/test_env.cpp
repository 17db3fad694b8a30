#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <vector>

#include "poolrl/env.hpp"
#include "poolrl/rng.hpp"

using namespace poolrl;

namespace {

ProblemSpec tiny_seq() {
  return make_sequence("seq", 3, 2, {{0, 1}});
}

}  // namespace

TEST_CASE("problem construction validates its inputs") {
  CHECK_THROWS_AS(make_bandit("b", 1, 0), std::invalid_argument);
  CHECK_THROWS_AS(make_bandit("b", 4, 4), std::invalid_argument);
  CHECK_THROWS_AS(make_bandit("b", 4, -1), std::invalid_argument);
  CHECK_NOTHROW(make_bandit("b", 2, 1));

  CHECK_THROWS_AS(make_sequence("s", 2, 1, {}), std::invalid_argument);
  // wrong length / out-of-vocabulary token
  CHECK_THROWS_AS(make_sequence("s", 2, 2, {{0}}), std::invalid_argument);
  CHECK_THROWS_AS(make_sequence("s", 2, 2, {{0, 2}}), std::invalid_argument);
  // the correct set must be a strict subset of all V^T sequences
  CHECK_THROWS_AS(make_sequence("s", 2, 1, {{0}, {1}}), std::invalid_argument);
  // node keys must fit in 63 bits: V=8, T=20 needs 21*3 = 63 -> rejected
  CHECK_THROWS_AS(make_sequence("s", 8, 20, {TokenSeq(20, 0)}),
                  std::invalid_argument);
  CHECK_NOTHROW(make_sequence("s", 8, 19, {TokenSeq(19, 0)}));

  ProblemSpec dedup = make_sequence("s", 2, 2, {{0, 1}, {0, 1}, {0, 0}});
  CHECK(dedup.sequence().correct_set.size() == 2);
  CHECK(std::is_sorted(dedup.sequence().correct_codes.begin(),
                       dedup.sequence().correct_codes.end()));
}

TEST_CASE("sequence codes are big-endian base-V") {
  ProblemSpec spec = make_sequence("s", 3, 3, {{1, 2, 0}});
  CHECK(sequence_code(spec.sequence(), {1, 2, 0}) == 15);
  CHECK(sequence_code(spec.sequence(), {0, 0, 0}) == 0);
  CHECK(sequence_code(spec.sequence(), {2, 2, 2}) == 26);
}

TEST_CASE("prefix-tree child keys") {
  CHECK(child_node(0, 2, 0) == 1);
  CHECK(child_node(0, 2, 1) == 2);
  CHECK(child_node(2, 2, 0) == 5);
  CHECK(child_node(0, 4, 3) == 4);
}

TEST_CASE("exact accuracy on uniform policies") {
  ProblemSpec seq = tiny_seq();
  ProblemSpec bandit = make_bandit("b", 4, 2);
  TabularPolicy policy = make_uniform_policy({seq, bandit});
  CHECK(exact_accuracy(policy, seq) == doctest::Approx(1.0 / 9.0).epsilon(1e-15));
  CHECK(exact_accuracy(policy, bandit) == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("exact accuracy respects the sampling temperature") {
  ProblemSpec bandit = make_bandit("b", 2, 0);
  TabularPolicy policy = make_uniform_policy({bandit});
  std::get<Eigen::VectorXd>(policy.tables.at("b")) =
      (Eigen::VectorXd(2) << std::log(3.0), 0.0).finished();
  CHECK(exact_accuracy(policy, bandit) == doctest::Approx(0.75).epsilon(1e-12));
  policy.temperature = 2.0;
  double expected = std::sqrt(3.0) / (std::sqrt(3.0) + 1.0);
  CHECK(exact_accuracy(policy, bandit) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("exact accuracy refuses to enumerate past the cap") {
  ProblemSpec big = make_sequence("s", 2, 21, {TokenSeq(21, 0)});
  TabularPolicy policy = make_uniform_policy({big});
  CHECK_THROWS_AS((void)exact_accuracy(policy, big), std::domain_error);
  CHECK_NOTHROW((void)exact_accuracy(policy, big, 3e6));
}

TEST_CASE("sequence probability multiplies per-node softmax terms") {
  ProblemSpec seq = tiny_seq();
  TabularPolicy policy = make_uniform_policy({seq});
  CHECK(sequence_probability(policy, seq, {0, 1}) ==
        doctest::Approx(1.0 / 9.0).epsilon(1e-15));
  CHECK(sequence_probability(policy, seq, {2, 2}) ==
        doctest::Approx(1.0 / 9.0).epsilon(1e-15));
}

TEST_CASE("one training pass applies the exact per-node step") {
  ProblemSpec seq = make_sequence("s", 2, 2, {{0, 1}});
  TabularPolicy policy = make_uniform_policy({seq});
  Solution sol;
  sol.problem_id = "s";
  sol.tokens = {0, 1};
  sol.reward = 1;
  sft_update(policy, {sol}, 0.5, 1);

  const auto& table = std::get<SeqTable>(policy.tables.at("s"));
  // step per node is lr * (1/T) * (onehot - softmax) = 0.25 * (+-0.5)
  const Eigen::VectorXd& root = table.nodes.at(0);
  CHECK(root(0) == doctest::Approx(0.125).epsilon(1e-15));
  CHECK(root(1) == doctest::Approx(-0.125).epsilon(1e-15));
  const Eigen::VectorXd& after0 = table.nodes.at(child_node(0, 2, 0));
  CHECK(after0(0) == doctest::Approx(-0.125).epsilon(1e-15));
  CHECK(after0(1) == doctest::Approx(0.125).epsilon(1e-15));
  // untouched branch stays implicit / uniform
  CHECK(table.nodes.count(child_node(0, 2, 1)) == 0);
}

TEST_CASE("bandit training step and edge cases") {
  ProblemSpec bandit = make_bandit("b", 2, 0);
  TabularPolicy policy = make_uniform_policy({bandit});
  Solution sol;
  sol.problem_id = "b";
  sol.tokens = {0};
  sol.reward = 1;

  TabularPolicy before = policy;
  sft_update(policy, {sol}, 0.0, 5);
  CHECK(std::get<Eigen::VectorXd>(policy.tables.at("b")) ==
        std::get<Eigen::VectorXd>(before.tables.at("b")));
  sft_update(policy, {sol}, 0.5, 0);
  CHECK(std::get<Eigen::VectorXd>(policy.tables.at("b")) ==
        std::get<Eigen::VectorXd>(before.tables.at("b")));

  sft_update(policy, {sol}, 0.5, 1);
  const Eigen::VectorXd& z = std::get<Eigen::VectorXd>(policy.tables.at("b"));
  CHECK(z(0) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(z(1) == doctest::Approx(-0.25).epsilon(1e-15));

  CHECK_THROWS_AS(sft_update(policy, {sol}, -0.1, 1), std::invalid_argument);
  CHECK_THROWS_AS(sft_update(policy, {sol}, 0.5, -1), std::invalid_argument);
}

TEST_CASE("more epochs strictly raise the trained sequence probability") {
  ProblemSpec seq = make_sequence("s", 4, 3, {{1, 2, 3}});
  TabularPolicy policy = make_uniform_policy({seq});
  Solution sol;
  sol.problem_id = "s";
  sol.tokens = {1, 2, 3};
  sol.reward = 1;
  double last = exact_accuracy(policy, seq);
  for (int e = 0; e < 4; ++e) {
    sft_update(policy, {sol}, 0.4, 1);
    double acc = exact_accuracy(policy, seq);
    CHECK(acc > last);
    last = acc;
  }
}

TEST_CASE("bandit reward gradient closed form") {
  Eigen::VectorXd z = Eigen::VectorXd::Zero(2);
  Eigen::VectorXd g = bandit_reward_gradient(z, 0);
  CHECK(g(0) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(g(1) == doctest::Approx(-0.25).epsilon(1e-15));
}

TEST_CASE("bandit reward hessian matches finite differences") {
  Eigen::VectorXd z(4);
  z << 0.3, -0.1, 0.7, 0.0;
  int correct = 2;
  Eigen::MatrixXd h = bandit_reward_hessian(z, correct);
  CHECK(h.rows() == 4);
  CHECK((h - h.transpose()).norm() == doctest::Approx(0.0).epsilon(1e-14));
  double eps = 1e-6;
  for (int i = 0; i < 4; ++i) {
    Eigen::VectorXd zp = z, zm = z;
    zp(i) += eps;
    zm(i) -= eps;
    Eigen::VectorXd col =
        (bandit_reward_gradient(zp, correct) - bandit_reward_gradient(zm, correct)) /
        (2 * eps);
    for (int j = 0; j < 4; ++j)
      CHECK(h(j, i) == doctest::Approx(col(j)).epsilon(1e-4));
  }
}

TEST_CASE("sampling noise covariance closed forms") {
  // Uniform two-armed case: the score is identical for both outcomes, so the
  // centered estimator has exactly zero covariance.
  Eigen::VectorXd z0 = Eigen::VectorXd::Zero(2);
  Eigen::MatrixXd zero = bandit_noise_covariance(z0, 0);
  CHECK(zero.norm() == doctest::Approx(0.0).epsilon(1e-15));

  Eigen::VectorXd z(2);
  z << std::log(3.0), 0.0;
  Eigen::MatrixXd cov = bandit_noise_covariance(z, 0);
  CHECK(cov(0, 0) == doctest::Approx(3.0 / 64.0).epsilon(1e-12));
  CHECK(cov(0, 1) == doctest::Approx(-3.0 / 64.0).epsilon(1e-12));
  CHECK(cov(1, 1) == doctest::Approx(3.0 / 64.0).epsilon(1e-12));
}

TEST_CASE("policy-level analytics agree with the dense-logit forms") {
  ProblemSpec bandit = make_bandit("b", 3, 1);
  TabularPolicy policy = make_uniform_policy({bandit});
  Eigen::VectorXd z(3);
  z << 0.2, -0.4, 0.1;
  std::get<Eigen::VectorXd>(policy.tables.at("b")) = z;
  CHECK((analytic_reward_gradient(policy, bandit) - bandit_reward_gradient(z, 1))
            .norm() == doctest::Approx(0.0).epsilon(1e-15));
  CHECK((analytic_reward_hessian(policy, bandit) - bandit_reward_hessian(z, 1))
            .norm() == doctest::Approx(0.0).epsilon(1e-15));
  CHECK((estimator_noise_covariance(policy, bandit,
                                    NoiseEstimator::reinforce_baseline) -
         bandit_noise_covariance(z, 1))
            .norm() == doctest::Approx(0.0).epsilon(1e-15));
  policy.temperature = 2.0;
  CHECK_THROWS_AS((void)analytic_reward_gradient(policy, bandit),
                  std::invalid_argument);
  CHECK(parse_noise_estimator("reinforce_baseline") ==
        NoiseEstimator::reinforce_baseline);
  CHECK_THROWS_AS(parse_noise_estimator("bogus"), std::invalid_argument);
}

TEST_CASE("sampled solutions carry consistent rewards and log-probs") {
  ProblemSpec seq = make_sequence("s", 3, 2, {{0, 1}, {2, 2}});
  ProblemSpec bandit = make_bandit("b", 3, 1);
  TabularPolicy policy = make_uniform_policy({seq, bandit});
  auto rng = make_rng(11, {fnv1a64("sample")});

  for (const Solution& sol : sample_solutions(policy, seq, 200, rng)) {
    bool member = (sol.tokens == TokenSeq{0, 1}) || (sol.tokens == TokenSeq{2, 2});
    CHECK(sol.reward == (member ? 1 : 0));
    CHECK(sol.logprob_rollout.size() == 2);
    // engines identical: per-token rollout and train log-probs coincide
    for (std::size_t t = 0; t < 2; ++t)
      CHECK(sol.logprob_rollout[t] == doctest::Approx(sol.logprob_train[t]));
    CHECK(sol.logprob_train[0] == doctest::Approx(std::log(1.0 / 3.0)));
  }
  for (const Solution& sol : sample_solutions(policy, bandit, 100, rng)) {
    CHECK(sol.tokens.size() == 1);
    CHECK(sol.reward == (sol.tokens[0] == 1 ? 1 : 0));
  }
}

TEST_CASE("engine perturbations transform only the rollout side") {
  ProblemSpec bandit = make_bandit("b", 2, 0);
  TabularPolicy policy = make_uniform_policy({bandit});
  Eigen::VectorXd z(2);
  z << 1.0, 0.0;
  std::get<Eigen::VectorXd>(policy.tables.at("b")) = z;
  auto rng = make_rng(3, {fnv1a64("perturb")});

  SUBCASE("temperature scale divides the rollout logits") {
    EnginePerturbation pert{EnginePerturbation::Kind::temperature_scale, 2.0};
    for (const Solution& sol : sample_solutions(policy, bandit, 50, rng, pert)) {
      int arm = sol.tokens[0];
      CHECK(sol.logprob_train[0] == doctest::Approx(log_softmax_at(z, arm)));
      CHECK(sol.logprob_rollout[0] == doctest::Approx(log_softmax_at(z / 2.0, arm)));
    }
    EnginePerturbation bad{EnginePerturbation::Kind::temperature_scale, 0.0};
    CHECK_THROWS_AS(sample_solutions(policy, bandit, 1, rng, bad),
                    std::invalid_argument);
  }

  SUBCASE("quantization rounds rollout logits to the grid") {
    EnginePerturbation pert{EnginePerturbation::Kind::logit_quantization, 0.75};
    Eigen::VectorXd zq(2);
    zq << 0.75, 0.0; // round(1.0/0.75)*0.75
    for (const Solution& sol : sample_solutions(policy, bandit, 50, rng, pert)) {
      int arm = sol.tokens[0];
      CHECK(sol.logprob_rollout[0] == doctest::Approx(log_softmax_at(zq, arm)));
    }
    EnginePerturbation ident{EnginePerturbation::Kind::logit_quantization, 0.0};
    for (const Solution& sol : sample_solutions(policy, bandit, 10, rng, ident))
      CHECK(sol.logprob_rollout[0] == doctest::Approx(sol.logprob_train[0]));
    EnginePerturbation bad{EnginePerturbation::Kind::logit_quantization, -1.0};
    CHECK_THROWS_AS(sample_solutions(policy, bandit, 1, rng, bad),
                    std::invalid_argument);
  }

  SUBCASE("additive noise is drawn once per node per batch") {
    EnginePerturbation pert{EnginePerturbation::Kind::additive_logit_noise, 0.5};
    auto sols = sample_solutions(policy, bandit, 200, rng, pert);
    double lp_by_arm[2] = {0, 0};
    bool seen[2] = {false, false};
    for (const Solution& sol : sols) {
      int arm = sol.tokens[0];
      if (!seen[arm]) {
        seen[arm] = true;
        lp_by_arm[arm] = sol.logprob_rollout[0];
      } else {
        CHECK(sol.logprob_rollout[0] == doctest::Approx(lp_by_arm[arm]));
      }
      CHECK(sol.logprob_train[0] == doctest::Approx(log_softmax_at(z, arm)));
    }
    CHECK((seen[0] && seen[1]));
  }
}

TEST_CASE("duplicate rate is the max shared-prefix fraction") {
  auto mk = [](TokenSeq t) {
    Solution s;
    s.problem_id = "p";
    s.tokens = std::move(t);
    s.reward = 1;
    return s;
  };
  Solution gen = mk({0, 1, 2, 3});
  CHECK(duplicate_rate(gen, {mk({0, 1, 9, 9}), mk({0, 1, 2, 9})}) ==
        doctest::Approx(0.75));
  CHECK(duplicate_rate(gen, {mk({9, 9, 9, 9})}) == doctest::Approx(0.0));
  CHECK(duplicate_rate(gen, {mk({0, 1, 2, 3})}) == doctest::Approx(1.0));
  CHECK(duplicate_rate(mk({}), {mk({1, 2})}) == doctest::Approx(0.0));
  CHECK_THROWS_AS(duplicate_rate(gen, {}), std::invalid_argument);
}

TEST_CASE("pass@k closed-form values and guards") {
  std::vector<int> r20(20, 0);
  for (int i = 0; i < 5; ++i) r20[static_cast<std::size_t>(i)] = 1;
  CHECK(pass_at_k(r20, 16) == 1.0); // n - c = 15 < k
  CHECK(pass_at_k(r20, 1) == doctest::Approx(0.25));
  CHECK(pass_at_k({1, 1, 0, 0, 0}, 2) == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(pass_at_k({0, 0, 0}, 2) == doctest::Approx(0.0));
  CHECK_THROWS_AS(pass_at_k({1, 0}, 0), std::invalid_argument);
  CHECK_THROWS_AS(pass_at_k({1, 0}, 3), std::invalid_argument);
  CHECK_THROWS_AS(pass_at_k({1, 2}, 1), std::invalid_argument);
  CHECK_THROWS_AS(pass_at_k({}, 1), std::invalid_argument);
}

TEST_CASE("reference generator emits each correct sequence exactly once") {
  ProblemSpec seq = make_sequence("s", 2, 3,
                                  {{0, 0, 0}, {0, 1, 0}, {1, 0, 1}, {1, 1, 1}});
  ReferenceGenerator gen(seq, 5);
  std::set<TokenSeq> seen;
  while (auto t = gen.next()) seen.insert(*t);
  CHECK(seen.size() == 4);
  CHECK(gen.exhausted());
  CHECK(gen.next() == std::nullopt);
  for (const TokenSeq& t : seq.sequence().correct_set) CHECK(seen.count(t) == 1);

  ReferenceGenerator a(seq, 5), b(seq, 5);
  CHECK(a.next() == b.next());
  CHECK(a.next() == b.next());

  ReferenceGenerator fast(seq, 5);
  fast.skip(2);
  CHECK(fast.cursor() == 2);
  CHECK(fast.next() == a.next());
  fast.skip(100); // clamps at the end
  CHECK(fast.exhausted());
  CHECK(fast.remaining() == 0);
}

TEST_CASE("reference generator for a bandit yields the correct arm") {
  ProblemSpec bandit = make_bandit("b", 5, 3);
  ReferenceGenerator gen(bandit, 9);
  auto t = gen.next();
  REQUIRE(t.has_value());
  CHECK(*t == TokenSeq{3});
  CHECK(gen.next() == std::nullopt);
}
