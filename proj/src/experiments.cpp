#include "poolrl/experiments.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <limits>
#include <queue>
#include <set>
#include <stdexcept>
#include <variant>

#include "poolrl/csv.hpp"
#include "poolrl/rng.hpp"
#include "poolrl/sde_lab.hpp"
#include "poolrl/theory.hpp"

namespace poolrl {

const char* verdict_name(Verdict verdict) {
  switch (verdict) {
    case Verdict::pass: return "pass";
    case Verdict::fail: return "fail";
    case Verdict::inconclusive: return "inconclusive";
  }
  return "unknown";
}

int verdict_exit_code(Verdict verdict) {
  switch (verdict) {
    case Verdict::pass: return 0;
    case Verdict::fail: return 1;
    case Verdict::inconclusive: return 2;
  }
  return 3;
}

namespace {

std::uint64_t u64(long long v) { return static_cast<std::uint64_t>(v); }

std::string fmt_int(long long v) { return std::to_string(v); }

std::string detailf(const char* format, ...) {
  char buf[512];
  va_list args;
  va_start(args, format);
  std::vsnprintf(buf, sizeof buf, format, args);
  va_end(args);
  return std::string(buf);
}

TokenSeq decode_code(std::uint64_t code, int vocab, int length) {
  TokenSeq tokens(static_cast<std::size_t>(length));
  for (int i = length - 1; i >= 0; --i) {
    tokens[static_cast<std::size_t>(i)] = static_cast<int>(code % u64(vocab));
    code /= u64(vocab);
  }
  return tokens;
}

// ---------------------------------------------------------------------------
// Shared bandit world for the efficiency sweeps: a K-armed landscape with one
// raised logit, injected-Gaussian gradient noise, and the matching quadratic.
// ---------------------------------------------------------------------------

struct BanditWorld {
  int correct_arm = 0;
  Eigen::VectorXd theta0;
  Eigen::VectorXd g; // reward gradient at theta0
  Eigen::MatrixXd h;
  Eigen::MatrixXd sigma;
  theory::EfficiencyModel model; // SGD quadratic for this (landscape, noise)
  double r0 = 0.0;
};

BanditWorld make_bandit_world(int arms, double correct_logit, int correct_arm,
                              double noise_variance) {
  BanditWorld world;
  world.correct_arm = correct_arm;
  world.theta0 = Eigen::VectorXd::Zero(arms);
  world.theta0[correct_arm] = correct_logit;
  world.g = bandit_reward_gradient(world.theta0, correct_arm);
  world.h = bandit_reward_hessian(world.theta0, correct_arm);
  world.sigma =
      noise_variance * Eigen::MatrixXd::Identity(arms, arms);
  world.model = theory::sgd_efficiency_model(world.g, world.h, world.sigma);
  world.r0 = softmax(world.theta0)[correct_arm];
  return world;
}

// Mean one-step efficiency at eta with the first-order control variate: the
// exact linear response to the gradient noise is subtracted (it has zero
// mean), leaving the curvature terms the quadratic is made of measurable at
// far fewer trials.
double measured_efficiency_sgd(const BanditWorld& world,
                               const sde::NoisyGradientOracle& oracle,
                               double eta, int n, long trials,
                               std::mt19937_64& rng) {
  stats::NeumaierSum acc;
  for (long t = 0; t < trials; ++t) {
    Eigen::VectorXd ghat = sde::sample_loss_gradient(oracle, world.theta0, rng);
    Eigen::VectorXd theta1 = world.theta0 - eta * ghat;
    double dr = softmax(theta1)[world.correct_arm] - world.r0;
    double cv = eta * world.g.dot(-ghat - world.g);
    acc.add(dr - cv);
  }
  return acc.value() / static_cast<double>(trials) / static_cast<double>(n);
}

double measured_efficiency_adam(const BanditWorld& world,
                                const sde::NoisyGradientOracle& oracle,
                                double eta, int n, double n_m, double n_v,
                                long trials, std::mt19937_64& rng) {
  stats::NeumaierSum acc;
  for (long t = 0; t < trials; ++t) {
    Eigen::VectorXd delta = sde::sample_windowed_adam_delta(
        oracle, world.theta0, eta, n_m, n_v, sde::AdamParams{}, rng);
    acc.add(softmax(world.theta0 + delta)[world.correct_arm] - world.r0);
  }
  return acc.value() / static_cast<double>(trials) / static_cast<double>(n);
}

} // namespace

// ---------------------------------------------------------------------------
// Effective rollouts: Monte Carlo mixed-group rate vs N(1 - p^N - (1-p)^N).
// ---------------------------------------------------------------------------

ExperimentResult run_effective_rollout_check(const EffectiveRolloutConfig& config) {
  ExperimentResult result;
  result.csv_header = {"p",        "n",        "trials", "expected_effective",
                       "measured_effective", "sigma_effective", "z", "within_gate"};
  const bool powered = config.trials >= config.min_powered_trials;
  bool all_ok = true;
  double worst_z = 0.0;
  int cells = 0;
  for (double p : config.accuracies) {
    for (int n : config.group_sizes) {
      auto rng = make_rng(config.seed, {fnv1a64("effective-rollout"),
                                        u64(std::llround(p * 1e9)), u64(n)});
      double degenerate = sde::zero_variance_rate(p, n, config.trials, rng);
      double measured_q = 1.0 - degenerate;
      double expected = theory::effective_rollout(p, n);
      double q = expected / static_cast<double>(n);
      double sigma_q =
          std::sqrt(q * (1.0 - q) / static_cast<double>(config.trials));
      double z = sigma_q > 0.0 ? (measured_q - q) / sigma_q
                               : (measured_q == q ? 0.0
                                                  : std::numeric_limits<double>::infinity());
      bool ok = std::abs(z) <= config.sigma_gate;
      all_ok = all_ok && ok;
      worst_z = std::max(worst_z, std::abs(z));
      ++cells;
      result.csv_rows.push_back({csv_double(p), fmt_int(n), fmt_int(config.trials),
                                 csv_double(expected), csv_double(n * measured_q),
                                 csv_double(n * sigma_q), csv_double(z),
                                 ok ? "1" : "0"});
    }
  }
  result.stats["cells"] = cells;
  result.stats["worst_abs_z"] = worst_z;
  result.stats["trials"] = config.trials;
  result.stats["powered"] = powered;
  if (!powered) {
    result.verdict = Verdict::inconclusive;
    result.detail = detailf(
        "underpowered: %ld trials/cell (< %ld); confidence intervals too wide "
        "to gate",
        config.trials, config.min_powered_trials);
  } else {
    result.verdict = all_ok ? Verdict::pass : Verdict::fail;
    result.detail =
        detailf("%d cells, worst |z| = %.3f against the %.1f-sigma gate", cells,
                worst_z, config.sigma_gate);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Efficiency quadratic on the injected-noise bandit.
// ---------------------------------------------------------------------------

ExperimentResult run_efficiency_sweep(const EfficiencySweepConfig& config) {
  ExperimentResult result;
  result.csv_header = {"optimizer", "u", "eta", "n", "seed", "mean_efficiency"};

  BanditWorld world = make_bandit_world(config.arms, config.correct_logit,
                                        config.correct_arm, config.noise_variance);
  if (world.model.mu_n <= 0.0)
    throw std::invalid_argument(
        "efficiency sweep: this landscape/noise pair has no positive noise "
        "penalty, so there is no stability root to sweep up to");
  const double root = world.model.mu_p / world.model.mu_n;

  sde::NoisyGradientOracle oracle =
      sde::make_injected_oracle(config.correct_arm, world.sigma, config.group_size);

  std::vector<std::pair<double, double>> points;
  for (int j = 0; j < config.curve_points; ++j) {
    double u = root * config.max_ratio_fraction * (j + 1) /
               static_cast<double>(config.curve_points);
    double eta = u * config.group_size;
    for (int s = 0; s < config.seeds; ++s) {
      auto rng = make_rng(config.seed, {fnv1a64("sweep-sgd"), u64(j), u64(s)});
      double e = measured_efficiency_sgd(world, oracle, eta, config.group_size,
                                         config.trials_per_cell, rng);
      points.push_back({u, e});
      result.csv_rows.push_back({"sgd", csv_double(u), csv_double(eta),
                                 fmt_int(config.group_size), fmt_int(s),
                                 csv_double(e)});
    }
  }
  theory::EfficiencyFit fit = theory::fit_efficiency_curve(points);

  // Past the stability root the measured efficiency must go non-positive.
  double u_sign = root * config.sign_test_ratio_fraction;
  int positive = 0;
  for (int s = 0; s < config.seeds; ++s) {
    auto rng = make_rng(config.seed, {fnv1a64("sweep-sign"), u64(s)});
    double e = measured_efficiency_sgd(world, oracle, u_sign * config.group_size,
                                       config.group_size, config.trials_per_cell,
                                       rng);
    positive += e > 0.0 ? 1 : 0;
    result.csv_rows.push_back({"sgd-sign", csv_double(u_sign),
                               csv_double(u_sign * config.group_size),
                               fmt_int(config.group_size), fmt_int(s),
                               csv_double(e)});
  }
  double sign_p = stats::binomial_cdf_half(positive, config.seeds);

  double mu_p_rel_err =
      std::abs(fit.model.mu_p - world.model.mu_p) / world.model.mu_p;
  bool r2_ok = fit.r_squared >= config.min_r_squared;
  bool mu_ok = mu_p_rel_err <= config.mu_p_rel_tol;
  bool sign_ok = sign_p < config.sign_alpha;

  result.stats["sgd"] = {
      {"r_squared", fit.r_squared},
      {"mu_p_fit", fit.model.mu_p},
      {"mu_p_analytic", world.model.mu_p},
      {"mu_p_rel_err", mu_p_rel_err},
      {"mu_n_fit", fit.model.mu_n},
      {"mu_n_analytic", world.model.mu_n},
      {"stability_root", root},
      {"optimal_u_analytic", theory::optimal_eta_over_n(world.model)},
      {"sign_test_u", u_sign},
      {"sign_test_positive", positive},
      {"sign_test_p", sign_p},
  };

  std::string adam_note;
  if (config.include_adam) {
    Eigen::MatrixXd sigma_adam = config.adam_noise_variance *
                                 Eigen::MatrixXd::Identity(config.arms, config.arms);
    sde::NoisyGradientOracle adam_oracle = sde::make_injected_oracle(
        config.correct_arm, sigma_adam, config.group_size);
    theory::EfficiencyModel adam_model = theory::adam_efficiency_model(
        world.g, world.h, sigma_adam, config.adam_n_m);
    std::vector<std::pair<double, double>> adam_points;
    for (int j = 0; j < config.curve_points; ++j) {
      double eta = config.adam_eta_max * (j + 1) /
                   static_cast<double>(config.curve_points);
      double u = eta / config.group_size;
      for (int s = 0; s < config.seeds; ++s) {
        auto rng = make_rng(config.seed, {fnv1a64("sweep-adam"), u64(j), u64(s)});
        double e = measured_efficiency_adam(
            world, adam_oracle, eta, config.group_size, config.adam_n_m,
            config.adam_n_v, config.adam_trials_per_cell, rng);
        adam_points.push_back({u, e});
        result.csv_rows.push_back({"adam", csv_double(u), csv_double(eta),
                                   fmt_int(config.group_size), fmt_int(s),
                                   csv_double(e)});
      }
    }
    theory::EfficiencyFit adam_fit = theory::fit_efficiency_curve(adam_points);
    result.stats["adam"] = {
        {"r_squared", adam_fit.r_squared},
        {"mu_p_fit", adam_fit.model.mu_p},
        {"mu_p_analytic", adam_model.mu_p},
        {"mu_n_fit", adam_fit.model.mu_n},
        {"mu_n_analytic", adam_model.mu_n},
    };
    adam_note = detailf("; adam R2=%.4f mu_p %.4g vs %.4g (reported)",
                        adam_fit.r_squared, adam_fit.model.mu_p, adam_model.mu_p);
  }

  result.verdict = (r2_ok && mu_ok && sign_ok) ? Verdict::pass : Verdict::fail;
  result.detail = detailf(
      "sgd R2=%.4f (gate %.2f), mu_p rel err %.1f%% (gate %.0f%%), sign test "
      "p=%.4g at u=%.2f*root (%d/%d positive)%s",
      fit.r_squared, config.min_r_squared, 100.0 * mu_p_rel_err,
      100.0 * config.mu_p_rel_tol, sign_p, config.sign_test_ratio_fraction,
      positive, config.seeds, adam_note.c_str());
  return result;
}

// ---------------------------------------------------------------------------
// Matched eta/N arms: the efficiency must depend on eta and N only through
// their ratio, for both optimizers.
// ---------------------------------------------------------------------------

ExperimentResult run_equivalence_check(const EquivalenceConfig& config) {
  ExperimentResult result;
  result.csv_header = {"optimizer", "arm", "eta", "n", "seed", "mean_efficiency"};

  BanditWorld world = make_bandit_world(config.arms, config.correct_logit,
                                        config.correct_arm, config.noise_variance);
  if (world.model.mu_n <= 0.0)
    throw std::invalid_argument("equivalence check: no stability root");
  const double u = world.model.mu_p / world.model.mu_n * config.ratio_fraction;

  struct Arm {
    std::string optimizer;
    std::string name;
    double eta;
    int n;
    std::vector<double> means;
  };
  Arm arms[4] = {
      {"sgd", "large", u * config.large_n, config.large_n, {}},
      {"sgd", "small", u * config.small_n, config.small_n, {}},
      {"adam", "large", config.adam_eta_large, config.large_n, {}},
      {"adam", "small", config.adam_eta_large / 2.0, config.small_n, {}},
  };

  for (Arm& arm : arms) {
    bool sgd = arm.optimizer == "sgd";
    Eigen::MatrixXd sigma =
        (sgd ? config.noise_variance : config.adam_noise_variance) *
        Eigen::MatrixXd::Identity(config.arms, config.arms);
    sde::NoisyGradientOracle oracle =
        sde::make_injected_oracle(config.correct_arm, sigma, arm.n);
    for (int s = 0; s < config.seeds; ++s) {
      auto rng = make_rng(config.seed, {fnv1a64("equivalence"),
                                        fnv1a64(arm.optimizer), fnv1a64(arm.name),
                                        u64(s)});
      double e;
      if (sgd) {
        e = measured_efficiency_sgd(world, oracle, arm.eta, arm.n,
                                    config.sgd_trials_per_seed, rng);
      } else {
        stats::NeumaierSum acc;
        for (long t = 0; t < config.adam_trials_per_seed; ++t)
          acc.add(measured_efficiency_adam(world, oracle, arm.eta, arm.n,
                                           config.adam_n_m, config.adam_n_v, 1,
                                           rng));
        e = acc.value() / static_cast<double>(config.adam_trials_per_seed);
      }
      arm.means.push_back(e);
      result.csv_rows.push_back({arm.optimizer, arm.name, csv_double(arm.eta),
                                 fmt_int(arm.n), fmt_int(s), csv_double(e)});
    }
  }

  bool informative = true;
  for (const Arm& arm : arms) {
    double m = stats::mean(arm.means);
    double se = std::sqrt(stats::sample_variance(arm.means) /
                          static_cast<double>(arm.means.size()));
    result.stats["arm_" + arm.optimizer + "_" + arm.name] = {
        {"mean", m}, {"se", se}, {"eta", arm.eta}, {"n", arm.n}};
    if (se == 0.0 || std::abs(m) < config.signal_sigma * se) informative = false;
  }

  stats::WelchResult sgd_test = stats::welch_t_test(arms[0].means, arms[1].means);
  stats::WelchResult adam_test = stats::welch_t_test(arms[2].means, arms[3].means);
  result.stats["u"] = u;
  result.stats["sgd_p"] = sgd_test.p_two_sided;
  result.stats["adam_p"] = adam_test.p_two_sided;
  result.stats["alpha"] = config.alpha;

  if (!informative) {
    result.verdict = Verdict::inconclusive;
    result.detail = detailf(
        "an arm carries no measurable efficiency signal (|mean| < %.0f SE); "
        "equivalence cannot be distinguished from pure noise",
        config.signal_sigma);
  } else {
    bool ok = sgd_test.p_two_sided >= config.alpha &&
              adam_test.p_two_sided >= config.alpha;
    result.verdict = ok ? Verdict::pass : Verdict::fail;
    result.detail = detailf(
        "Welch p: sgd %.3f, adam %.3f (indistinguishable requires p >= %.2f); "
        "u=%.4g, arms (eta,N)=(%.4g,%d) vs (%.4g,%d)",
        sgd_test.p_two_sided, adam_test.p_two_sided, config.alpha, u,
        arms[0].eta, config.large_n, arms[1].eta, config.small_n);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Windowed-Adam step moments vs the series oracles.
// ---------------------------------------------------------------------------

ExperimentResult run_adam_moment_check(const AdamMomentConfig& config) {
  ExperimentResult result;
  result.csv_header = {"x",       "sigma",   "m1_measured", "m1_predicted",
                       "m1_rel_err", "m1_se", "m2_measured", "m2_predicted",
                       "m2_rel_err", "m2_se", "within_gate"};
  bool all_ok = true;
  double worst1 = 0.0, worst2 = 0.0;
  for (double x : config.x_values) {
    double sigma = std::abs(config.gradient) * std::sqrt(x);
    sde::NoisyGradientOracle oracle = sde::make_constant_oracle(
        Eigen::VectorXd::Constant(1, config.gradient),
        Eigen::MatrixXd::Constant(1, 1, sigma * sigma), 1);
    auto rng = make_rng(config.seed,
                        {fnv1a64("adam-moments"), u64(std::llround(x * 1e9))});
    sde::StepMoments moments = sde::measure_step_moments(
        oracle, sde::Optimizer::adam, config.eta, config.trials,
        Eigen::VectorXd::Zero(1), rng, config.n_m, config.n_v);
    double m1_pred = theory::adam_first_moment(config.gradient, sigma, config.eta,
                                               config.n_m, config.n_v);
    double m2_pred = theory::adam_second_moment(config.gradient, sigma,
                                                config.eta, config.n_m, config.n_v);
    double rel1 = std::abs(moments.mean_delta[0] - m1_pred) / std::abs(m1_pred);
    double rel2 = std::abs(moments.mean_delta_sq[0] - m2_pred) / std::abs(m2_pred);
    bool ok = rel1 <= config.m1_rel_tol && rel2 <= config.m2_rel_tol;
    all_ok = all_ok && ok;
    worst1 = std::max(worst1, rel1);
    worst2 = std::max(worst2, rel2);
    result.csv_rows.push_back(
        {csv_double(x), csv_double(sigma), csv_double(moments.mean_delta[0]),
         csv_double(m1_pred), csv_double(rel1), csv_double(moments.se_delta[0]),
         csv_double(moments.mean_delta_sq[0]), csv_double(m2_pred),
         csv_double(rel2), csv_double(moments.se_delta_sq[0]), ok ? "1" : "0"});
  }
  result.stats["worst_m1_rel_err"] = worst1;
  result.stats["worst_m2_rel_err"] = worst2;
  result.stats["trials"] = config.trials;
  result.verdict = all_ok ? Verdict::pass : Verdict::fail;
  result.detail = detailf(
      "worst rel err: first moment %.3f%% (gate %.0f%%), second moment %.3f%% "
      "(gate %.0f%%) over %zu x-values, %ld trials each",
      100.0 * worst1, 100.0 * config.m1_rel_tol, 100.0 * worst2,
      100.0 * config.m2_rel_tol, config.x_values.size(), config.trials);
  return result;
}

// ---------------------------------------------------------------------------
// Importance-correction audit under a sharpened rollout engine.
// ---------------------------------------------------------------------------

namespace {

// Correct-arm logit that keeps the sharpened engine's accuracy equal to the
// raw policy's. With the accuracy preserved, the per-token importance ratio
// on the correct arm is exactly 1 and the group reward distribution is
// identical under both engines, which is what makes the corrected gradient's
// expectation match the on-policy expectation exactly.
double solve_accuracy_preserving_logit(double high, double low,
                                       double temperature) {
  auto gap = [&](double lc) {
    Eigen::VectorXd z(4);
    z << lc, high, low, low;
    return softmax(z / temperature)[0] - softmax(z)[0];
  };
  double lo = -8.0, hi = 8.0;
  if (!(gap(lo) < 0.0 && gap(hi) > 0.0))
    throw std::logic_error("accuracy-preserving logit: bracket failed");
  for (int i = 0; i < 200; ++i) {
    double mid = 0.5 * (lo + hi);
    (gap(mid) < 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

Eigen::VectorXd group_gradient(const RolloutGroup& group,
                               const AdvantageSet& advantages,
                               const TabularPolicy& policy) {
  ParamGrad grad = loss_gradient({group}, {advantages}, policy);
  return grad.entries.at(group.problem_id).at(0);
}

// Exact on-policy expected gradient by enumerating every outcome tuple of an
// N-sample bandit group under the raw policy.
Eigen::VectorXd exact_onpolicy_gradient(const TabularPolicy& policy,
                                        const ProblemSpec& problem, int n) {
  const auto& z = std::get<Eigen::VectorXd>(policy.tables.at(problem.id));
  int arms = problem.bandit().arm_count;
  Eigen::VectorXd probs = softmax(z);
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(arms);
  std::vector<int> tuple(static_cast<std::size_t>(n), 0);
  while (true) {
    double pr = 1.0;
    std::vector<Solution> sols;
    sols.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      int tok = tuple[static_cast<std::size_t>(i)];
      pr *= probs[tok];
      double lp = log_softmax_at(z, tok);
      Solution sol;
      sol.problem_id = problem.id;
      sol.tokens = {tok};
      sol.logprob_rollout = {lp};
      sol.logprob_train = {lp};
      sol.reward = tok == problem.bandit().correct_arm ? 1 : 0;
      sol.seq_no = i;
      sols.push_back(std::move(sol));
    }
    RolloutGroup group = make_group(std::move(sols));
    AdvantageSet adv = compute_advantages(group, kNoIsClip);
    acc += pr * group_gradient(group, adv, policy);
    int pos = n - 1;
    while (pos >= 0 && ++tuple[static_cast<std::size_t>(pos)] == arms)
      tuple[static_cast<std::size_t>(pos--)] = 0;
    if (pos < 0) break;
  }
  return acc;
}

} // namespace

ExperimentResult run_is_correction_check(const IsCorrectionConfig& config) {
  ExperimentResult result;
  result.csv_header = {"section", "component", "value_a", "value_b", "sigma", "z"};

  double lc = solve_accuracy_preserving_logit(
      config.high_wrong_logit, config.low_wrong_logit, config.sharpen_temperature);
  ProblemSpec problem = make_bandit("is-audit", 4, 0);
  TabularPolicy policy = make_uniform_policy({problem});
  Eigen::VectorXd z(4);
  z << lc, config.high_wrong_logit, config.low_wrong_logit, config.low_wrong_logit;
  policy.tables.at(problem.id) = z;
  EnginePerturbation sharpen{EnginePerturbation::Kind::temperature_scale,
                             config.sharpen_temperature};

  Eigen::VectorXd p_train = softmax(z);
  Eigen::VectorXd p_rollout = softmax(z / config.sharpen_temperature);
  double accuracy_gap = std::abs(p_train[0] - p_rollout[0]);
  Eigen::VectorXd arm_ratio = p_train.cwiseQuotient(p_rollout);

  // --- unclipped: corrected Monte Carlo mean vs exact on-policy gradient ---
  int n_u = config.group_size_unclipped;
  Eigen::VectorXd exact = exact_onpolicy_gradient(policy, problem, n_u);
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(4), sumsq = Eigen::VectorXd::Zero(4);
  auto rng_u = make_rng(config.seed, {fnv1a64("is-unclipped")});
  for (long t = 0; t < config.groups_unclipped; ++t) {
    RolloutGroup group =
        make_group(sample_solutions(policy, problem, n_u, rng_u, sharpen));
    AdvantageSet adv = compute_advantages(group, kNoIsClip);
    Eigen::VectorXd g = group_gradient(group, adv, policy);
    sum += g;
    sumsq += g.cwiseProduct(g);
  }
  double inv_t = 1.0 / static_cast<double>(config.groups_unclipped);
  bool unclipped_ok = true;
  double worst_z = 0.0;
  for (int j = 0; j < 4; ++j) {
    double m = sum[j] * inv_t;
    double var = std::max(0.0, sumsq[j] * inv_t - m * m);
    double se = std::sqrt(var * inv_t);
    double zscore = se > 0.0 ? (m - exact[j]) / se : 0.0;
    worst_z = std::max(worst_z, std::abs(zscore));
    if (std::abs(zscore) > config.sigma_gate) unclipped_ok = false;
    result.csv_rows.push_back({"unclipped", fmt_int(j), csv_double(m),
                               csv_double(exact[j]), csv_double(se),
                               csv_double(zscore)});
  }

  // --- clipped: bias only where the ratio exceeds the cap ---
  int n_c = config.group_size_clipped;
  double cap = 1.0 + config.eps_clip;
  Eigen::VectorXd dsum = Eigen::VectorXd::Zero(4), dsq = Eigen::VectorXd::Zero(4);
  std::array<long, 4> clip_count{};
  long audit_violations = 0;   // a token changed by the cap despite ratio <= cap
  long clean_group_mismatch = 0; // clip-free group whose gradients differ bitwise
  long clean_groups = 0;
  auto rng_c = make_rng(config.seed, {fnv1a64("is-clipped")});
  for (long t = 0; t < config.groups_clipped; ++t) {
    RolloutGroup group =
        make_group(sample_solutions(policy, problem, n_c, rng_c, sharpen));
    AdvantageSet unclipped = compute_advantages(group, kNoIsClip);
    AdvantageSet clipped = compute_advantages(group, config.eps_clip);
    bool has_clip = false;
    for (int i = 0; i < group.size(); ++i) {
      const Solution& sol = group.solutions[static_cast<std::size_t>(i)];
      double ratio =
          std::exp(sol.logprob_train[0] - sol.logprob_rollout[0]);
      bool changed = clipped.corrected[static_cast<std::size_t>(i)][0] !=
                     unclipped.corrected[static_cast<std::size_t>(i)][0];
      if (changed) {
        has_clip = true;
        ++clip_count[static_cast<std::size_t>(sol.tokens[0])];
        if (ratio <= cap) ++audit_violations;
      }
    }
    Eigen::VectorXd d = group_gradient(group, clipped, policy) -
                        group_gradient(group, unclipped, policy);
    if (!has_clip) {
      ++clean_groups;
      if ((d.array() != 0.0).any()) ++clean_group_mismatch;
    }
    dsum += d;
    dsq += d.cwiseProduct(d);
  }
  double inv_c = 1.0 / static_cast<double>(config.groups_clipped);
  double max_bias_z = 0.0;
  for (int j = 0; j < 4; ++j) {
    double m = dsum[j] * inv_c;
    double var = std::max(0.0, dsq[j] * inv_c - m * m);
    double se = std::sqrt(var * inv_c);
    double zscore = se > 0.0 ? m / se : 0.0;
    max_bias_z = std::max(max_bias_z, std::abs(zscore));
    result.csv_rows.push_back({"clip-bias", fmt_int(j), csv_double(m),
                               csv_double(0.0), csv_double(se),
                               csv_double(zscore)});
  }
  for (int j = 0; j < 4; ++j)
    result.csv_rows.push_back({"arm-audit", fmt_int(j),
                               csv_double(arm_ratio[j]),
                               csv_double(static_cast<double>(
                                   clip_count[static_cast<std::size_t>(j)])),
                               "", ""});

  bool tail_clipped = true, head_clean = true;
  for (int j = 0; j < 4; ++j) {
    if (arm_ratio[j] > cap && clip_count[static_cast<std::size_t>(j)] == 0)
      tail_clipped = false;
    if (arm_ratio[j] <= cap && clip_count[static_cast<std::size_t>(j)] != 0)
      head_clean = false;
  }
  bool clipped_ok = tail_clipped && head_clean && audit_violations == 0 &&
                    clean_group_mismatch == 0 && max_bias_z > config.sigma_gate;

  result.stats["correct_logit"] = lc;
  result.stats["accuracy_gap"] = accuracy_gap;
  result.stats["arm_ratios"] = {arm_ratio[0], arm_ratio[1], arm_ratio[2],
                                arm_ratio[3]};
  result.stats["unclipped_worst_z"] = worst_z;
  result.stats["clip_counts"] = clip_count;
  result.stats["clean_groups"] = clean_groups;
  result.stats["max_bias_z"] = max_bias_z;

  if (accuracy_gap > 1e-10) {
    result.verdict = Verdict::inconclusive;
    result.detail = detailf(
        "engine accuracy not preserved (gap %.3g); on-policy comparison is "
        "not exact under this configuration",
        accuracy_gap);
  } else {
    result.verdict = (unclipped_ok && clipped_ok) ? Verdict::pass : Verdict::fail;
    result.detail = detailf(
        "unclipped worst |z| = %.2f over %ld groups; cap audit: tail clips on "
        "ratio %.2f arms only, %ld clip-free groups bit-identical, bias z = "
        "%.1f",
        worst_z, config.groups_unclipped, arm_ratio[2], clean_groups,
        max_bias_z);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Loss gradient vs central finite differences on random configurations.
// ---------------------------------------------------------------------------

namespace {

// Scalar surrogate whose analytic gradient the trainer computes: per-token
// weights (the corrected advantages) are frozen, the log-probabilities are
// functions of the policy.
double surrogate_loss(const std::vector<RolloutGroup>& groups,
                      const std::vector<AdvantageSet>& advantages,
                      const TabularPolicy& policy) {
  int total = 0;
  for (const RolloutGroup& group : groups) total += group.size();
  stats::NeumaierSum acc;
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const RolloutGroup& group = groups[gi];
    const PolicyTable& table = policy.tables.at(group.problem_id);
    for (std::size_t i = 0; i < group.solutions.size(); ++i) {
      const Solution& sol = group.solutions[i];
      double weighted = 0.0;
      if (std::holds_alternative<Eigen::VectorXd>(table)) {
        weighted = advantages[gi].corrected[i][0] *
                   log_softmax_at(std::get<Eigen::VectorXd>(table), sol.tokens[0]);
      } else {
        const SeqTable& seq = std::get<SeqTable>(table);
        std::uint64_t node = 0;
        for (std::size_t t = 0; t < sol.tokens.size(); ++t) {
          auto it = seq.nodes.find(node);
          Eigen::VectorXd zeros;
          const Eigen::VectorXd& logits =
              it != seq.nodes.end()
                  ? it->second
                  : (zeros = Eigen::VectorXd::Zero(seq.vocab));
          weighted += advantages[gi].corrected[i][t] *
                      log_softmax_at(logits, sol.tokens[t]);
          node = child_node(node, seq.vocab, sol.tokens[t]);
        }
      }
      acc.add(-(1.0 / total) * weighted /
              static_cast<double>(sol.tokens.size()));
    }
  }
  return acc.value();
}

double* policy_param(TabularPolicy& policy, const ProblemId& id,
                     std::uint64_t node, Eigen::Index k) {
  PolicyTable& table = policy.tables.at(id);
  if (std::holds_alternative<Eigen::VectorXd>(table))
    return &std::get<Eigen::VectorXd>(table)[k];
  return &std::get<SeqTable>(table).nodes.at(node)[k];
}

} // namespace

ExperimentResult run_gradient_fd_check(const GradientFdConfig& config) {
  ExperimentResult result;
  result.csv_header = {"case", "kind", "parameters", "max_abs_diff", "grad_norm"};
  double worst = 0.0;
  bool all_ok = true;

  for (int c = 0; c < config.cases; ++c) {
    auto rng = make_rng(config.seed, {fnv1a64("fd-case"), u64(c)});
    std::normal_distribution<double> gauss(0.0, 1.0);
    ProblemSpec spec;
    TabularPolicy policy;
    std::string kind;
    if (c % 2 == 0) {
      kind = "bandit";
      int arms = 2 + c % 4;
      spec = make_bandit("fd", arms, static_cast<int>(rng() % u64(arms)));
      policy = make_uniform_policy({spec});
      auto& logits = std::get<Eigen::VectorXd>(policy.tables.at(spec.id));
      for (Eigen::Index k = 0; k < logits.size(); ++k) logits[k] = gauss(rng);
    } else {
      kind = "sequence";
      int vocab = 2 + c % 2;
      int length = 1 + c % 3;
      std::uint64_t total = 1;
      for (int t = 0; t < length; ++t) total *= u64(vocab);
      std::set<std::uint64_t> codes;
      // keep the set a strict subset: at least one sequence stays incorrect
      std::size_t want = 1 + static_cast<std::size_t>(
                                 rng() % std::min<std::uint64_t>(4, total - 1));
      while (codes.size() < want) codes.insert(rng() % total);
      std::vector<TokenSeq> correct;
      for (std::uint64_t code : codes)
        correct.push_back(decode_code(code, vocab, length));
      spec = make_sequence("fd", vocab, length, std::move(correct));
      policy = make_uniform_policy({spec});
      auto& table = std::get<SeqTable>(policy.tables.at(spec.id));
      // Materialize the whole (tiny) prefix tree with random logits.
      std::vector<std::uint64_t> frontier = {0};
      for (int depth = 0; depth < length; ++depth) {
        std::vector<std::uint64_t> next;
        for (std::uint64_t node : frontier) {
          Eigen::VectorXd logits(vocab);
          for (int k = 0; k < vocab; ++k) logits[k] = gauss(rng);
          table.nodes[node] = logits;
          if (depth + 1 < length)
            for (int s = 0; s < vocab; ++s)
              next.push_back(child_node(node, vocab, s));
        }
        frontier = std::move(next);
      }
    }

    EnginePerturbation pert;
    if (c % 3 == 0)
      pert = {EnginePerturbation::Kind::temperature_scale, 1.3};
    double eps = (c % 2 == 0) ? kNoIsClip : 0.2;
    int n = 3 + c % 4;
    RolloutGroup group =
        make_group(sample_solutions(policy, spec, n, rng, pert));
    AdvantageSet adv = compute_advantages(group, eps);
    std::vector<RolloutGroup> groups = {group};
    std::vector<AdvantageSet> advs = {adv};
    ParamGrad grad = loss_gradient(groups, advs, policy);

    double max_diff = 0.0;
    int params = 0;
    for (const auto& [id, nodes] : grad.entries) {
      for (const auto& [node, gvec] : nodes) {
        for (Eigen::Index k = 0; k < gvec.size(); ++k) {
          TabularPolicy probe = policy;
          double* slot = policy_param(probe, id, node, k);
          double original = *slot;
          *slot = original + config.step;
          double up = surrogate_loss(groups, advs, probe);
          *slot = original - config.step;
          double down = surrogate_loss(groups, advs, probe);
          double fd = (up - down) / (2.0 * config.step);
          max_diff = std::max(max_diff, std::abs(fd - gvec[k]));
          ++params;
        }
      }
    }
    worst = std::max(worst, max_diff);
    bool ok = max_diff <= config.tolerance;
    all_ok = all_ok && ok;
    result.csv_rows.push_back({fmt_int(c), kind, fmt_int(params),
                               csv_double(max_diff), csv_double(grad.norm())});
  }

  // Degenerate groups: identical rewards must give an exactly zero gradient.
  bool zero_ok = true;
  for (int c = 0; c < 5; ++c) {
    auto rng = make_rng(config.seed, {fnv1a64("fd-zero"), u64(c)});
    ProblemSpec spec = make_bandit("fd0", 3, 0);
    TabularPolicy policy = make_uniform_policy({spec});
    std::vector<Solution> sols =
        sample_solutions(policy, spec, 4, rng, EnginePerturbation{});
    for (Solution& sol : sols) sol.reward = 1;
    RolloutGroup group = make_group(std::move(sols));
    AdvantageSet adv = compute_advantages(group, 0.2);
    ParamGrad grad = loss_gradient({group}, {adv}, policy);
    if (grad.norm() != 0.0) zero_ok = false;
  }

  result.stats["worst_abs_diff"] = worst;
  result.stats["cases"] = config.cases;
  result.stats["zero_advantage_exact"] = zero_ok;
  result.verdict = (all_ok && zero_ok) ? Verdict::pass : Verdict::fail;
  result.detail = detailf(
      "%d random configurations, worst |analytic - central FD| = %.3g (gate "
      "%.0e); all-equal-reward groups give exactly zero gradient: %s",
      config.cases, worst, config.tolerance, zero_ok ? "yes" : "no");
  return result;
}

// ---------------------------------------------------------------------------
// Pool state machine: randomized sequences plus exhaustive small instances.
// ---------------------------------------------------------------------------

namespace {

struct PoolInvariantCheck {
  long violations = 0;
  std::string first;

  void expect(bool ok, const char* what) {
    if (!ok) {
      ++violations;
      if (first.empty()) first = what;
    }
  }
};

void check_pool_invariants(const PoolState& state,
                           const std::map<ProblemId, ProblemRecord>& previous,
                           PoolInvariantCheck& check) {
  auto counts = state.counts();
  int total = counts[0] + counts[1] + counts[2] + counts[3];
  check.expect(total == static_cast<int>(state.problems.size()),
               "pool counts must partition the problem set");
  for (const auto& [id, rec] : state.problems) {
    check.expect(rec.budget_spent >= 0 && rec.budget_spent <= rec.budget_limit,
                 "budget spend must stay within [0, limit]");
    if (rec.pool == Pool::Failed)
      check.expect(rec.budget_spent >= rec.budget_limit,
                   "Failed requires an exhausted budget");
    if (rec.pool != Pool::Failed)
      check.expect(classify(rec.p_hat, state.tau_sft, state.tau_rl) == rec.pool,
                   "non-Failed pool must match the accuracy classification");
    auto prev = previous.find(id);
    if (prev != previous.end()) {
      check.expect(rec.budget_spent >= prev->second.budget_spent,
                   "budget spend must be monotone");
      if (prev->second.pool == Pool::Solved)
        check.expect(rec.pool == Pool::Solved, "Solved is terminal");
      if (prev->second.pool == Pool::Failed)
        check.expect(rec.pool == Pool::Failed, "Failed is terminal");
    }
  }
}

// Abstract 3-problem instance: p-hat menu {0, 0.3, 0.9}, budget 3, spends
// {1, 3}. Encodes (pool, spent, p-hat) per problem into a dense key.
constexpr double kMenu[3] = {0.0, 0.3, 0.9};

int menu_index(double p) {
  for (int i = 0; i < 3; ++i)
    if (p == kMenu[i]) return i;
  return -1;
}

std::uint64_t encode_pool_state(const PoolState& state) {
  std::uint64_t key = 0;
  std::uint64_t base = 1;
  for (const auto& [id, rec] : state.problems) {
    int pidx = menu_index(rec.p_hat);
    if (pidx < 0) throw std::logic_error("abstract state: p_hat off-menu");
    std::uint64_t code = (static_cast<std::uint64_t>(rec.pool) * 4 +
                          u64(rec.budget_spent)) *
                             3 +
                         u64(pidx);
    key += code * base;
    base *= 48;
  }
  return key;
}

PoolState decode_pool_state(std::uint64_t key, const std::vector<ProblemId>& ids,
                            long long budget) {
  PoolState state = make_pool_state(ids, budget);
  for (const ProblemId& id : ids) {
    std::uint64_t code = key % 48;
    key /= 48;
    ProblemRecord& rec = state.problems.at(id);
    rec.p_hat = kMenu[code % 3];
    rec.budget_spent = static_cast<long long>((code / 3) % 4);
    rec.pool = static_cast<Pool>(code / 12);
  }
  return state;
}

} // namespace

ExperimentResult run_pool_machine_check(const PoolMachineConfig& config) {
  ExperimentResult result;
  result.csv_header = {"check", "value"};
  PoolInvariantCheck check;

  const double menu[6] = {0.0, 0.02, 0.3, 0.6, 0.9, 1.0};
  std::vector<ProblemId> ids;
  for (int i = 0; i < config.problems; ++i) ids.push_back("p" + std::to_string(i));

  long events_applied = 0, invalid_probes = 0, replays = 0;
  for (int s = 0; s < config.random_sequences; ++s) {
    auto rng = make_rng(config.seed, {fnv1a64("pool-random"), u64(s)});
    PoolState state = make_pool_state(ids, config.budget_limit);
    auto pick = [&](const std::vector<ProblemId>& from) {
      return from[rng() % from.size()];
    };
    for (int e = 0; e < config.max_events_per_sequence; ++e) {
      std::vector<ProblemId> live, unsolvable, solvable;
      for (const auto& [id, rec] : state.problems) {
        if (rec.pool == Pool::Unsolvable || rec.pool == Pool::Solvable)
          live.push_back(id);
        if (rec.pool == Pool::Unsolvable) unsolvable.push_back(id);
        if (rec.pool == Pool::Solvable) solvable.push_back(id);
      }
      if (live.empty()) break;

      PoolEvent event;
      switch (rng() % 6) {
        case 0:
        case 1: {
          event.kind = PoolEvent::Kind::accuracy_measured;
          event.problem = pick(live);
          event.p_hat = menu[rng() % 6];
          event.samples = 20;
          break;
        }
        case 2: {
          if (unsolvable.empty()) continue;
          event.kind = PoolEvent::Kind::solutions_added;
          event.problem = pick(unsolvable);
          event.count = solutions_to_add(static_cast<int>(rng() % 4));
          break;
        }
        default: {
          if (solvable.empty()) continue;
          std::size_t take = 1 + rng() % std::min<std::size_t>(3, solvable.size());
          std::shuffle(solvable.begin(), solvable.end(), rng);
          event.members.assign(solvable.begin(),
                               solvable.begin() + static_cast<long>(take));
          event.group_id = e;
          int kind_pick = static_cast<int>(rng() % 3);
          if (kind_pick == 0) {
            event.kind = PoolEvent::Kind::rl_group_succeeded;
          } else if (kind_pick == 1) {
            event.kind = PoolEvent::Kind::rl_group_failed_budget_left;
          } else {
            event.kind = PoolEvent::Kind::rl_group_failed_budget_exhausted;
          }
          if (event.kind == PoolEvent::Kind::rl_group_failed_budget_exhausted) {
            long long need = 0;
            for (const ProblemId& id : event.members)
              need = std::max(need, config.budget_limit -
                                        state.problems.at(id).budget_spent);
            event.per_member_rollouts = need + static_cast<long long>(rng() % 3);
          } else {
            event.per_member_rollouts =
                static_cast<long long>(rng() % u64(config.budget_limit + 1));
            for (std::size_t i = 0; i < event.members.size(); ++i)
              event.member_p_hats.push_back(menu[rng() % 6]);
          }
          break;
        }
      }

      std::map<ProblemId, ProblemRecord> previous = state.problems;
      state = apply_event(state, event);
      ++events_applied;
      check_pool_invariants(state, previous, check);

      if (e % 7 == 3) {
        // Invalid-event probes must throw and leave the state untouched.
        PoolEvent bad;
        bad.kind = PoolEvent::Kind::accuracy_measured;
        bad.problem = "no-such-problem";
        bad.p_hat = 0.5;
        bool threw = false;
        try {
          apply_event(state, bad);
        } catch (const std::exception&) {
          threw = true;
        }
        check.expect(threw, "unknown problem id must be rejected");
        if (!solvable.empty()) {
          PoolEvent premature;
          premature.kind = PoolEvent::Kind::rl_group_failed_budget_exhausted;
          premature.members = {solvable.front()};
          premature.per_member_rollouts = 0;
          bool rejected = false;
          try {
            PoolState copy = apply_event(state, premature);
            // Valid only if the member's budget really is exhausted.
            rejected = copy.problems.at(solvable.front()).budget_spent >=
                       config.budget_limit;
          } catch (const std::exception&) {
            rejected = true;
          }
          check.expect(rejected,
                       "exhaustion without an exhausted budget must be rejected");
        }
        ++invalid_probes;
      }
    }

    // Event-sourcing: replaying the log from scratch reproduces the state.
    PoolState replayed = make_pool_state(ids, config.budget_limit);
    for (const PoolEvent& event : state.log)
      replayed = apply_event(replayed, event);
    bool same = replayed.problems.size() == state.problems.size();
    if (same) {
      for (const auto& [id, rec] : state.problems) {
        const ProblemRecord& other = replayed.problems.at(id);
        same = same && other.pool == rec.pool && other.p_hat == rec.p_hat &&
               other.budget_spent == rec.budget_spent &&
               other.solutions_collected == rec.solutions_collected;
      }
    }
    check.expect(same, "log replay must reproduce the state");
    ++replays;
  }

  // Exhaustive exploration of the 3-problem abstraction. Measurement stays
  // below tau_rl here, so reaching all-terminal genuinely needs the RL events.
  std::vector<ProblemId> abc = {"a", "b", "c"};
  std::map<std::uint64_t, int> index;
  std::vector<std::uint64_t> keys;
  std::vector<std::vector<int>> edges;
  std::deque<int> queue;
  {
    PoolState init = make_pool_state(abc, config.exhaustive_budget);
    std::uint64_t k0 = encode_pool_state(init);
    index[k0] = 0;
    keys.push_back(k0);
    edges.emplace_back();
    queue.push_back(0);
  }
  auto note_state = [&](const PoolState& next, int from) {
    std::uint64_t key = encode_pool_state(next);
    auto [it, inserted] = index.try_emplace(key, static_cast<int>(keys.size()));
    if (inserted) {
      keys.push_back(key);
      edges.emplace_back();
      queue.push_back(it->second);
    }
    edges[static_cast<std::size_t>(from)].push_back(it->second);
  };
  while (!queue.empty()) {
    int at = queue.front();
    queue.pop_front();
    PoolState state =
        decode_pool_state(keys[static_cast<std::size_t>(at)], abc,
                          config.exhaustive_budget);
    std::vector<ProblemId> solvable;
    for (const auto& [id, rec] : state.problems) {
      if (rec.pool == Pool::Unsolvable || rec.pool == Pool::Solvable) {
        for (double p : {0.0, 0.3}) {
          PoolEvent event;
          event.kind = PoolEvent::Kind::accuracy_measured;
          event.problem = id;
          event.p_hat = p;
          event.samples = 20;
          note_state(apply_event(state, event), at);
        }
      }
      if (rec.pool == Pool::Solvable) solvable.push_back(id);
    }
    for (std::size_t mask = 1; mask < (1u << solvable.size()); ++mask) {
      std::vector<ProblemId> members;
      for (std::size_t b = 0; b < solvable.size(); ++b)
        if (mask & (1u << b)) members.push_back(solvable[b]);
      // Success and failure-with-budget: every member p-hat assignment.
      std::vector<std::size_t> assign(members.size(), 0);
      while (true) {
        for (long long spend : {1LL, 3LL}) {
          for (auto kind : {PoolEvent::Kind::rl_group_succeeded,
                            PoolEvent::Kind::rl_group_failed_budget_left}) {
            PoolEvent event;
            event.kind = kind;
            event.group_id = 0;
            event.members = members;
            for (std::size_t a : assign) event.member_p_hats.push_back(kMenu[a]);
            event.per_member_rollouts = spend;
            note_state(apply_event(state, event), at);
          }
        }
        std::size_t pos = 0;
        while (pos < assign.size() && ++assign[pos] == 3) assign[pos++] = 0;
        if (pos == assign.size()) break;
      }
      PoolEvent exhausted;
      exhausted.kind = PoolEvent::Kind::rl_group_failed_budget_exhausted;
      exhausted.group_id = 0;
      exhausted.members = members;
      exhausted.per_member_rollouts = config.exhaustive_budget;
      note_state(apply_event(state, exhausted), at);
    }
  }
  // Every reachable state must be able to reach the all-terminal absorbing set.
  std::vector<char> reaches(keys.size(), 0);
  for (std::size_t i = 0; i < keys.size(); ++i) {
    PoolState state = decode_pool_state(keys[i], abc, config.exhaustive_budget);
    auto counts = state.counts();
    if (counts[0] == 0 && counts[1] == 0) reaches[i] = 1;
  }
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t i = 0; i < keys.size(); ++i) {
      if (reaches[i]) continue;
      for (int next : edges[i]) {
        if (reaches[static_cast<std::size_t>(next)]) {
          reaches[i] = 1;
          changed = true;
          break;
        }
      }
    }
  }
  long stuck = std::count(reaches.begin(), reaches.end(), 0);
  check.expect(stuck == 0,
               "every reachable state must reach Solved/Failed for all problems");

  result.csv_rows.push_back({"random_sequences", fmt_int(config.random_sequences)});
  result.csv_rows.push_back({"events_applied", fmt_int(events_applied)});
  result.csv_rows.push_back({"invalid_probes", fmt_int(invalid_probes)});
  result.csv_rows.push_back({"log_replays", fmt_int(replays)});
  result.csv_rows.push_back({"exhaustive_states", fmt_int(static_cast<long long>(keys.size()))});
  result.csv_rows.push_back({"states_missing_termination", fmt_int(stuck)});
  result.csv_rows.push_back({"invariant_violations", fmt_int(check.violations)});
  result.stats["exhaustive_states"] = keys.size();
  result.stats["violations"] = check.violations;
  if (!check.first.empty()) result.stats["first_violation"] = check.first;

  result.verdict = check.violations == 0 ? Verdict::pass : Verdict::fail;
  result.detail = detailf(
      "%ld events over %d random sequences, %ld log replays, %zu exhaustive "
      "states (%ld cannot terminate); %ld invariant violations%s%s",
      events_applied, config.random_sequences, replays, keys.size(), stuck,
      check.violations, check.first.empty() ? "" : ": ",
      check.first.c_str());
  return result;
}

// ---------------------------------------------------------------------------
// Hard-problem rescue: small vs large rollout N at the same learning rate.
// ---------------------------------------------------------------------------

namespace {

// Deterministic SFT of a uniform policy onto one solution until the exact
// accuracy lands inside [low, high]; returns the prepared policy.
TabularPolicy prepare_hard_start(const ProblemSpec& spec, const TokenSeq& tokens,
                                 double low, double high) {
  TabularPolicy base = make_uniform_policy({spec});
  Solution sol;
  sol.problem_id = spec.id;
  sol.tokens = tokens;
  sol.reward = 1;
  auto accuracy_at = [&](double lr) {
    TabularPolicy policy = base;
    sft_update(policy, {sol}, lr, 1);
    return exact_accuracy(policy, spec);
  };
  double target = 0.5 * (low + high);
  double lo = 0.0, hi = 8.0;
  if (accuracy_at(hi) < target)
    throw std::logic_error("hard-start calibration: bracket failed");
  for (int i = 0; i < 100; ++i) {
    double mid = 0.5 * (lo + hi);
    (accuracy_at(mid) < target ? lo : hi) = mid;
  }
  double lr = 0.5 * (lo + hi);
  double p = accuracy_at(lr);
  if (p < low || p > high)
    throw std::logic_error("hard-start calibration: accuracy off-bracket");
  TabularPolicy policy = base;
  sft_update(policy, {sol}, lr, 1);
  return policy;
}

} // namespace

ExperimentResult run_rescue_study(const RescueConfig& config) {
  ExperimentResult result;
  result.csv_header = {"n", "seed", "success", "steps_to_success", "final_accuracy"};

  TokenSeq target(static_cast<std::size_t>(config.length));
  for (int t = 0; t < config.length; ++t)
    target[static_cast<std::size_t>(t)] = t % config.vocab;
  ProblemSpec spec = make_sequence("rescue", config.vocab, config.length, {target});
  TabularPolicy start = prepare_hard_start(
      spec, target, config.target_accuracy_low, config.target_accuracy_high);
  double p0 = exact_accuracy(start, spec);

  std::map<int, int> successes;
  for (int n : {config.small_n, config.large_n}) {
    int wins = 0;
    for (int s = 0; s < config.seeds; ++s) {
      TabularPolicy policy = start;
      OptimizerState opt;
      opt.kind = OptimizerState::Kind::sgd;
      opt.learning_rate = config.eta;
      auto rng = make_rng(config.seed, {fnv1a64("rescue"), u64(n), u64(s)});
      int hit_step = -1;
      double p = p0;
      for (int step = 1; step <= config.steps; ++step) {
        rl_step(policy, {spec}, n, opt, EnginePerturbation{}, 0.2, rng);
        p = exact_accuracy(policy, spec);
        if (p >= config.tau_rl) {
          hit_step = step;
          break;
        }
      }
      wins += hit_step > 0 ? 1 : 0;
      result.csv_rows.push_back({fmt_int(n), fmt_int(s), hit_step > 0 ? "1" : "0",
                                 fmt_int(hit_step), csv_double(p)});
    }
    successes[n] = wins;
  }

  int small_wins = successes[config.small_n];
  int large_wins = successes[config.large_n];
  double fisher = stats::fisher_exact_p_greater(small_wins, config.seeds,
                                                large_wins, config.seeds);
  result.stats["start_accuracy"] = p0;
  result.stats["small_n_successes"] = small_wins;
  result.stats["large_n_successes"] = large_wins;
  result.stats["fisher_p"] = fisher;
  bool ok = small_wins <= config.small_max_success &&
            large_wins >= config.large_min_success && fisher < config.fisher_alpha;
  result.verdict = ok ? Verdict::pass : Verdict::fail;
  result.detail = detailf(
      "start p=%.4f; N=%d rescued %d/%d seeds, N=%d rescued %d/%d (gates <=%d "
      "and >=%d), Fisher p=%.2e (gate %.2f)",
      p0, config.small_n, small_wins, config.seeds, config.large_n, large_wins,
      config.seeds, config.small_max_success, config.large_min_success, fisher,
      config.fisher_alpha);
  return result;
}

// ---------------------------------------------------------------------------
// Data scaling: distinct reference solutions per problem vs pass rates.
// ---------------------------------------------------------------------------

ExperimentResult run_data_scaling_study(const DataScalingConfig& config) {
  ExperimentResult result;
  result.csv_header = {"seed",  "m",         "problem", "pass1",
                       "pass16", "duplicate", "minimal_m"};

  // Correct set = one random stem x every tail of the shortest length whose
  // tail count reaches correct_per_problem (required to match exactly).
  int tail_len = 0;
  long tail_count = 1;
  while (tail_count < config.correct_per_problem && tail_len < config.length) {
    tail_count *= config.vocab;
    ++tail_len;
  }
  if (tail_count != config.correct_per_problem || tail_len >= config.length)
    throw std::invalid_argument(
        "data-scaling: correct_per_problem must be vocab^tail for a tail "
        "length shorter than the sequence length");
  int stem_len = config.length - tail_len;

  std::vector<ProblemSpec> problems;
  for (int i = 0; i < config.problems; ++i) {
    auto rng = make_rng(config.seed, {fnv1a64("scale-suite"), u64(i)});
    TokenSeq stem(static_cast<std::size_t>(stem_len));
    for (int t = 0; t < stem_len; ++t)
      stem[static_cast<std::size_t>(t)] =
          static_cast<int>(rng() % u64(config.vocab));
    std::vector<TokenSeq> correct;
    for (long code = 0; code < tail_count; ++code) {
      TokenSeq seq = stem;
      TokenSeq tail = decode_code(static_cast<std::uint64_t>(code),
                                  config.vocab, tail_len);
      seq.insert(seq.end(), tail.begin(), tail.end());
      correct.push_back(std::move(seq));
    }
    problems.push_back(make_sequence("scale-" + std::to_string(i), config.vocab,
                                     config.length, correct));
  }
  int m_max = *std::max_element(config.solution_counts.begin(),
                                config.solution_counts.end());

  std::vector<double> xs, pass1_points, pass16_points;
  stats::NeumaierSum dup_sum;
  long dup_count = 0;
  // minimal M with nonzero pass@16, per (seed, problem); -1 = never.
  std::vector<std::vector<int>> minimal_m(
      static_cast<std::size_t>(config.seeds),
      std::vector<int>(static_cast<std::size_t>(config.problems), -1));

  for (int s = 0; s < config.seeds; ++s) {
    for (int m : config.solution_counts) {
      TabularPolicy policy = make_uniform_policy(problems);
      std::vector<Solution> dataset;
      std::vector<std::vector<Solution>> per_problem(
          static_cast<std::size_t>(config.problems));
      for (int i = 0; i < config.problems; ++i) {
        ReferenceGenerator gen(problems[static_cast<std::size_t>(i)],
                               derive_seed(config.seed, {fnv1a64("scale-data"),
                                                         u64(s), u64(i)}));
        for (int j = 0; j < m; ++j) {
          auto tokens = gen.next();
          if (!tokens) break;
          Solution sol;
          sol.problem_id = problems[static_cast<std::size_t>(i)].id;
          sol.tokens = *tokens;
          sol.reward = 1;
          sol.seq_no = static_cast<std::int64_t>(dataset.size());
          per_problem[static_cast<std::size_t>(i)].push_back(sol);
          dataset.push_back(std::move(sol));
        }
      }
      sft_update(policy, dataset, config.sft_learning_rate, config.sft_epochs);

      stats::NeumaierSum suite1, suite16;
      for (int i = 0; i < config.problems; ++i) {
        const ProblemSpec& spec = problems[static_cast<std::size_t>(i)];
        auto eval_rng = make_rng(config.seed, {fnv1a64("scale-eval"), u64(s),
                                               u64(m), u64(i)});
        std::vector<Solution> sols =
            sample_solutions(policy, spec, config.eval_samples, eval_rng);
        std::vector<int> rewards;
        for (const Solution& sol : sols) rewards.push_back(sol.reward);
        double p1 = pass_at_k(rewards, 1);
        double p16 = pass_at_k(rewards, config.pass_k);
        suite1.add(p1);
        suite16.add(p16);
        if (p16 > 0.0) {
          int& slot = minimal_m[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)];
          if (slot < 0 || m < slot) slot = m;
        }
        std::string dup_cell;
        if (m == m_max) {
          auto dup_rng = make_rng(config.seed,
                                  {fnv1a64("scale-dup"), u64(s), u64(i)});
          std::vector<Solution> generated = sample_solutions(
              policy, spec, config.duplicate_probe_samples, dup_rng);
          stats::NeumaierSum problem_dup;
          for (const Solution& gen : generated) {
            double dup =
                duplicate_rate(gen, per_problem[static_cast<std::size_t>(i)]);
            problem_dup.add(dup);
            dup_sum.add(dup);
            ++dup_count;
          }
          dup_cell = csv_double(problem_dup.value() / generated.size());
        }
        result.csv_rows.push_back({fmt_int(s), fmt_int(m), spec.id,
                                   csv_double(p1), csv_double(p16), dup_cell,
                                   ""});
      }
      xs.push_back(static_cast<double>(m));
      pass1_points.push_back(suite1.value() / config.problems);
      pass16_points.push_back(suite16.value() / config.problems);
    }
  }
  for (int s = 0; s < config.seeds; ++s)
    for (int i = 0; i < config.problems; ++i)
      result.csv_rows.push_back(
          {fmt_int(s), "", problems[static_cast<std::size_t>(i)].id, "", "", "",
           fmt_int(minimal_m[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)])});

  stats::SpearmanResult rho1 = stats::spearman(xs, pass1_points);
  stats::SpearmanResult rho16 = stats::spearman(xs, pass16_points);
  double mean_dup = dup_count > 0 ? dup_sum.value() / dup_count : 0.0;
  result.stats["spearman_pass1"] = {{"rho", rho1.rho}, {"p", rho1.p_one_sided}};
  result.stats["spearman_pass16"] = {{"rho", rho16.rho}, {"p", rho16.p_one_sided}};
  result.stats["mean_duplicate_rate"] = mean_dup;

  bool ok = rho1.rho > 0.0 && rho1.p_one_sided < config.alpha &&
            rho16.rho > 0.0 && rho16.p_one_sided < config.alpha &&
            mean_dup < config.max_duplicate_rate;
  result.verdict = ok ? Verdict::pass : Verdict::fail;
  result.detail = detailf(
      "pass@1 Spearman rho=%.3f p=%.2e, pass@16 rho=%.3f p=%.2e (gates rho>0, "
      "p<%.2f); duplicate rate %.3f at M=%d (gate < %.2f)",
      rho1.rho, rho1.p_one_sided, rho16.rho, rho16.p_one_sided, config.alpha,
      mean_dup, m_max, config.max_duplicate_rate);
  return result;
}

// ---------------------------------------------------------------------------
// Rollout allocation: partitioned N ladder vs one fixed N at a shared budget.
// ---------------------------------------------------------------------------

namespace {

std::vector<ProblemSpec> make_partition_suite(const PartitionConfig& config,
                                              std::uint64_t seed) {
  std::vector<ProblemSpec> problems;
  for (int i = 0; i < config.easy_problems; ++i) {
    auto rng = make_rng(seed, {fnv1a64("partition-easy"), u64(i)});
    std::set<std::uint64_t> codes;
    while (codes.size() < 5) codes.insert(rng() % 16);
    std::vector<TokenSeq> correct;
    for (std::uint64_t code : codes) correct.push_back(decode_code(code, 4, 2));
    problems.push_back(
        make_sequence("easy-" + std::to_string(i), 4, 2, std::move(correct)));
  }
  for (int j = 0; j < config.hard_problems; ++j) {
    auto rng = make_rng(seed, {fnv1a64("partition-hard"), u64(j)});
    std::set<std::uint64_t> codes;
    std::size_t want = 2 + static_cast<std::size_t>(j % 2);
    while (codes.size() < want) codes.insert(rng() % 256);
    std::vector<TokenSeq> correct;
    for (std::uint64_t code : codes) correct.push_back(decode_code(code, 4, 4));
    problems.push_back(
        make_sequence("hard-" + std::to_string(j), 4, 4, std::move(correct)));
  }
  return problems;
}

} // namespace

ExperimentResult run_partition_study(const PartitionConfig& config) {
  ExperimentResult result;
  result.csv_header = {"seed", "arm", "problem", "pass16", "rollouts_spent",
                       "hard_solved"};

  std::vector<ProblemSpec> problems = make_partition_suite(config, config.seed);
  int wins = 0;
  bool accounting_ok = true;
  double worst_gap = 0.0;

  for (int s = 0; s < config.seeds; ++s) {
    struct ArmOutcome {
      double suite_pass16 = 0.0;
      long long spent = 0;
      int hard_solved = 0;
      bool solved_all = false;
      std::map<ProblemId, double> per_problem;
    };
    auto evaluate = [&](const TabularPolicy& policy, const char* arm) {
      ArmOutcome out;
      stats::NeumaierSum acc;
      for (std::size_t i = 0; i < problems.size(); ++i) {
        auto rng = make_rng(config.seed, {fnv1a64("partition-eval"),
                                          fnv1a64(arm), u64(s), u64(i)});
        std::vector<Solution> sols =
            sample_solutions(policy, problems[i], config.eval_samples, rng);
        std::vector<int> rewards;
        for (const Solution& sol : sols) rewards.push_back(sol.reward);
        double p16 = pass_at_k(rewards, config.pass_k);
        out.per_problem[problems[i].id] = p16;
        acc.add(p16);
        if (problems[i].id.rfind("hard-", 0) == 0 &&
            exact_accuracy(policy, problems[i]) >= config.tau_rl)
          ++out.hard_solved;
      }
      out.suite_pass16 = acc.value() / static_cast<double>(problems.size());
      return out;
    };
    auto all_solved = [&](const TabularPolicy& policy) {
      for (const ProblemSpec& spec : problems)
        if (exact_accuracy(policy, spec) < config.tau_rl) return false;
      return true;
    };

    // Baseline: every problem at the same fixed N until budget or success.
    ArmOutcome base;
    {
      TabularPolicy policy = make_uniform_policy(problems);
      OptimizerState opt;
      opt.kind = OptimizerState::Kind::sgd;
      opt.learning_rate = config.eta;
      auto rng = make_rng(config.seed, {fnv1a64("partition-base"), u64(s)});
      long long cost =
          static_cast<long long>(problems.size()) * config.baseline_n;
      while (base.spent + cost <= config.total_budget) {
        if (all_solved(policy)) break;
        rl_step(policy, problems, config.baseline_n, opt, EnginePerturbation{},
                0.2, rng);
        base.spent += cost;
      }
      base.solved_all = all_solved(policy);
      ArmOutcome eval = evaluate(policy, "baseline");
      eval.spent = base.spent;
      eval.solved_all = base.solved_all;
      base = eval;
    }

    // Partitioned: accuracy-sorted pairs, ladder N per rank, shared budget.
    ArmOutcome part;
    {
      TabularPolicy policy = make_uniform_policy(problems);
      OptimizerState opt;
      opt.kind = OptimizerState::Kind::sgd;
      opt.learning_rate = config.eta;
      auto rng = make_rng(config.seed, {fnv1a64("partition-ladder"), u64(s)});

      std::vector<std::pair<double, ProblemId>> order;
      std::map<ProblemId, const ProblemSpec*> by_id;
      for (const ProblemSpec& spec : problems) {
        order.push_back({exact_accuracy(policy, spec), spec.id});
        by_id[spec.id] = &spec;
      }
      std::sort(order.begin(), order.end());
      struct Group {
        std::vector<ProblemSpec> members;
        int n = 0;
        bool active = true;
      };
      std::vector<Group> groups;
      for (std::size_t at = 0; at < order.size(); at += u64(config.group_size)) {
        Group group;
        for (std::size_t i = at;
             i < std::min(order.size(), at + u64(config.group_size)); ++i)
          group.members.push_back(*by_id.at(order[i].second));
        groups.push_back(std::move(group));
      }
      PipelineConfig ladder_config;
      ladder_config.n_ladder = config.ladder;
      for (std::size_t rank = 0; rank < groups.size(); ++rank)
        groups[rank].n = assign_initial_n(static_cast<int>(rank),
                                          static_cast<int>(groups.size()),
                                          ladder_config);

      bool any_active = true;
      while (any_active) {
        any_active = false;
        for (Group& group : groups) {
          if (!group.active) continue;
          bool done = true;
          for (const ProblemSpec& spec : group.members)
            if (exact_accuracy(policy, spec) < config.tau_rl) done = false;
          long long cost =
              static_cast<long long>(group.members.size()) * group.n;
          if (done || part.spent + cost > config.total_budget) {
            group.active = false;
            continue;
          }
          rl_step(policy, group.members, group.n, opt, EnginePerturbation{},
                  0.2, rng);
          part.spent += cost;
          any_active = true;
        }
      }
      ArmOutcome eval = evaluate(policy, "ladder");
      eval.spent = part.spent;
      eval.solved_all = all_solved(policy);
      part = eval;
    }

    double gap = static_cast<double>(std::llabs(part.spent - base.spent)) /
                 static_cast<double>(config.total_budget);
    worst_gap = std::max(worst_gap, gap);
    if (gap > config.budget_tolerance && !base.solved_all && !part.solved_all)
      accounting_ok = false;
    if (part.suite_pass16 >= base.suite_pass16) ++wins;

    for (const ProblemSpec& spec : problems) {
      result.csv_rows.push_back({fmt_int(s), "baseline", spec.id,
                                 csv_double(base.per_problem.at(spec.id)),
                                 fmt_int(base.spent), fmt_int(base.hard_solved)});
      result.csv_rows.push_back({fmt_int(s), "ladder", spec.id,
                                 csv_double(part.per_problem.at(spec.id)),
                                 fmt_int(part.spent), fmt_int(part.hard_solved)});
    }
  }

  result.stats["wins"] = wins;
  result.stats["seeds"] = config.seeds;
  result.stats["worst_budget_gap"] = worst_gap;
  bool ok = wins >= config.min_wins && accounting_ok;
  result.verdict = ok ? Verdict::pass : Verdict::fail;
  result.detail = detailf(
      "ladder arm >= baseline pass@16 in %d/%d seeds (gate >= %d); worst "
      "rollout accounting gap %.3f%% (gate %.1f%% when budget-limited)",
      wins, config.seeds, config.min_wins, 100.0 * worst_gap,
      100.0 * config.budget_tolerance);
  return result;
}

// ---------------------------------------------------------------------------
// Merging two specialist runs through replay distillation.
// ---------------------------------------------------------------------------

ExperimentResult run_merge_check(const MergeConfig& config) {
  ExperimentResult result;
  result.csv_header = {"run", "problem", "specialist_accuracy", "merged_accuracy",
                       "ratio"};

  std::vector<ProblemSpec> problems;
  for (int i = 0; i < 2 * config.problems_per_run; ++i) {
    auto rng = make_rng(config.seed, {fnv1a64("merge-suite"), u64(i)});
    std::uint64_t total = 1;
    for (int t = 0; t < config.length; ++t) total *= u64(config.vocab);
    std::set<std::uint64_t> codes;
    while (codes.size() < static_cast<std::size_t>(config.correct_per_problem))
      codes.insert(rng() % total);
    std::vector<TokenSeq> correct;
    for (std::uint64_t code : codes)
      correct.push_back(decode_code(code, config.vocab, config.length));
    problems.push_back(make_sequence("merge-" + std::to_string(i), config.vocab,
                                     config.length, std::move(correct)));
  }

  TabularPolicy initial = make_uniform_policy(problems);
  std::vector<TabularPolicy> specialists;
  std::vector<ReplayBuffer> buffers;
  for (int r = 0; r < 2; ++r) {
    std::vector<ProblemSpec> subset(
        problems.begin() + r * config.problems_per_run,
        problems.begin() + (r + 1) * config.problems_per_run);
    TabularPolicy policy = initial;
    ReplayBuffer buffer = make_replay_buffer(config.replay_capacity);
    OptimizerState opt;
    opt.kind = OptimizerState::Kind::sgd;
    opt.learning_rate = config.eta;
    auto rng = make_rng(config.seed, {fnv1a64("merge-run"), u64(r)});
    for (int step = 0; step < config.steps; ++step) {
      std::vector<RolloutGroup> groups;
      rl_step(policy, subset, config.rollout_n, opt, EnginePerturbation{}, 0.2,
              rng, &groups);
      collect(buffer, groups);
      bool done = true;
      for (const ProblemSpec& spec : subset)
        if (exact_accuracy(policy, spec) < config.tau_rl) done = false;
      if (done) break;
    }
    specialists.push_back(std::move(policy));
    buffers.push_back(std::move(buffer));
  }

  TabularPolicy merged = merge_runs(initial, buffers, config.distill);
  bool ok = true;
  double worst = std::numeric_limits<double>::infinity();
  for (int r = 0; r < 2; ++r) {
    for (int i = 0; i < config.problems_per_run; ++i) {
      const ProblemSpec& spec =
          problems[static_cast<std::size_t>(r * config.problems_per_run + i)];
      double own = exact_accuracy(specialists[static_cast<std::size_t>(r)], spec);
      double got = exact_accuracy(merged, spec);
      double ratio = own > 0.0 ? got / own
                               : std::numeric_limits<double>::infinity();
      worst = std::min(worst, ratio);
      if (ratio < config.min_ratio) ok = false;
      result.csv_rows.push_back({fmt_int(r), spec.id, csv_double(own),
                                 csv_double(got), csv_double(ratio)});
    }
  }

  result.stats["worst_ratio"] = worst;
  result.stats["replay_sizes"] = {buffers[0].total_size(), buffers[1].total_size()};
  result.verdict = ok ? Verdict::pass : Verdict::fail;
  result.detail = detailf(
      "merged/specialist accuracy ratio >= %.2f on every problem: worst %.3f "
      "(replay sizes %zu, %zu)",
      config.min_ratio, worst, buffers[0].total_size(), buffers[1].total_size());
  return result;
}

// ---------------------------------------------------------------------------
// End-to-end pipeline determinism, termination, and checkpoint resume.
// ---------------------------------------------------------------------------

PipelineConfig determinism_pipeline_config(std::uint64_t seed) {
  PipelineConfig config;
  config.steps_per_cycle = 25;
  config.plateau_window = 10;
  // Small enough that stagnating problems exhaust their budget (and land in
  // Failed) within the iteration cap, so the run is guaranteed to terminate
  // with every problem in a terminal pool.
  config.rollout_budget_per_problem = 512;
  config.max_iterations = 8;
  config.seed = seed;
  return config;
}

ProblemSuite make_determinism_suite(const DeterminismConfig& config) {
  ProblemSuite suite;
  std::uint64_t total = 1;
  for (int t = 0; t < config.length; ++t) total *= u64(config.vocab);
  for (int i = 0; i < config.problems; ++i) {
    // Correct-set sizes sweep 1..48 so warmup classification covers all three
    // live pools; the code stride is odd, hence collision-free mod the space.
    std::size_t size = 1 + (static_cast<std::size_t>(i) * 17) % 48;
    std::set<std::uint64_t> codes;
    for (std::size_t j = 0; j < size; ++j)
      codes.insert((u64(i) * 7 + u64(j) * 13) % total);
    std::vector<TokenSeq> correct;
    for (std::uint64_t code : codes)
      correct.push_back(decode_code(code, config.vocab, config.length));
    char id[16];
    std::snprintf(id, sizeof id, "p%02d", i);
    suite.emplace(id, make_sequence(id, config.vocab, config.length,
                                    std::move(correct)));
  }
  return suite;
}

ExperimentResult run_determinism_check(const DeterminismConfig& config) {
  ExperimentResult result;
  result.csv_header = {"run", "identical_to_first", "unsolvable", "solvable",
                       "solved", "failed", "total_rl_rollouts", "iterations"};

  auto started = std::chrono::steady_clock::now();
  ProblemSuite suite = make_determinism_suite(config);
  PipelineConfig pipeline = determinism_pipeline_config(config.seed);

  FinalReport first = run_pipeline(suite, pipeline);
  std::string first_text = report_to_string(first);
  FinalReport second = run_pipeline(suite, pipeline);
  std::string second_text = report_to_string(second);

  namespace fs = std::filesystem;
  fs::path checkpoint = config.checkpoint_path.empty()
                            ? fs::temp_directory_path() / "poolrl-determinism.ckpt.json"
                            : fs::path(config.checkpoint_path);
  std::error_code ec;
  fs::remove(checkpoint, ec);
  PipelineState state = make_pipeline_state(suite, pipeline);
  for (int k = 0; k < config.interrupt_after_steps; ++k)
    pipeline_step(state, suite, pipeline);
  save_checkpoint(state, checkpoint);
  PipelineState resumed = load_checkpoint(checkpoint);
  while (pipeline_step(resumed, suite, pipeline)) {
  }
  std::string resumed_text = report_to_string(resumed.report);
  fs::remove(checkpoint, ec);

  double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
          .count();

  auto add_row = [&](const char* name, const FinalReport& report,
                     const std::string& text) {
    result.csv_rows.push_back(
        {name, text == first_text ? "1" : "0", fmt_int(report.final_counts[0]),
         fmt_int(report.final_counts[1]), fmt_int(report.final_counts[2]),
         fmt_int(report.final_counts[3]), fmt_int(report.total_rl_rollouts),
         fmt_int(static_cast<long long>(report.iterations.size()))});
  };
  add_row("fresh-a", first, first_text);
  add_row("fresh-b", second, second_text);
  add_row("resumed", resumed.report, resumed_text);

  bool identical = first_text == second_text && first_text == resumed_text;
  bool terminal = first.final_counts[0] == 0 && first.final_counts[1] == 0;
  bool fast = elapsed < config.max_seconds;
  result.stats["elapsed_seconds"] = elapsed;
  result.stats["report_bytes"] = first_text.size();
  result.stats["identical"] = identical;
  result.stats["all_terminal"] = terminal;

  result.verdict = (identical && terminal && fast) ? Verdict::pass : Verdict::fail;
  result.detail = detailf(
      "%d problems -> pools U/S/D/F = %d/%d/%d/%d; three runs (two fresh, one "
      "resumed after %d stages) %s byte-identical (%zu bytes); %.1fs (budget "
      "%.0fs)",
      config.problems, first.final_counts[0], first.final_counts[1],
      first.final_counts[2], first.final_counts[3],
      config.interrupt_after_steps,
      identical ? "are" : "are NOT", first_text.size(), elapsed,
      config.max_seconds);
  return result;
}

} // namespace poolrl
