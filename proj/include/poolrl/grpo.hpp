#pragma once
// The RL engine: group-normalized advantages, the per-token importance
// correction between the rollout and train engines, the batch loss gradient,
// and SGD/Adam parameter updates. There is intentionally no KL term, no
// entropy bonus, and no old/current ratio clip: the policy updates exactly
// once per rollout batch, so that ratio is identically 1.

#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "poolrl/env.hpp"

namespace poolrl {

struct RolloutGroup {
  ProblemId problem_id;
  std::vector<Solution> solutions;

  int size() const { return static_cast<int>(solutions.size()); }
};

// Validates N >= 2 and a consistent problem id.
RolloutGroup make_group(std::vector<Solution> solutions);

struct AdvantageSet {
  std::vector<double> base;                    // per solution
  std::vector<std::vector<double>> corrected;  // per solution, per token
};

// Sparse parameter-aligned container (gradients, optimizer moments, deltas).
// Bandit tables live at node key 0.
struct ParamGrad {
  std::map<ProblemId, std::map<std::uint64_t, Eigen::VectorXd>> entries;

  bool empty() const { return entries.empty(); }
  double norm() const;
  void scale(double factor);
  Eigen::VectorXd& slot(const ProblemId& id, std::uint64_t node, Eigen::Index dim);
};

struct OptimizerState {
  enum class Kind { sgd, adam };
  Kind kind = Kind::sgd;
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;       // denominator floor in the Adam step
  bool bias_correction = false; // windowed-moment theory models plain averages
  long step = 0;
  ParamGrad m;
  ParamGrad v;
};

// (r_i - mean) / (population std + 1e-6); all-equal groups give exact zeros
// (forced before the floor applies).
std::vector<double> grpo_advantages(const std::vector<int>& rewards);

inline constexpr double kNoIsClip = std::numeric_limits<double>::infinity();

// Per-token corrected advantages for one solution:
// min(exp(lp_train - lp_rollout), 1 + eps_is) * base_advantage. Upper clip
// only; eps_is may be +infinity to disable clipping.
std::vector<double> is_reweight(double base_advantage,
                                const std::vector<double>& train_logprobs,
                                const std::vector<double>& rollout_logprobs,
                                double eps_is);

AdvantageSet compute_advantages(const RolloutGroup& group, double eps_is);

// -(1/G) sum_i (1/|o_i|) sum_t corrected_{i,t} * grad log pi(o_{i,t}), where
// G counts all solutions across all groups in the batch.
ParamGrad loss_gradient(const std::vector<RolloutGroup>& groups,
                        const std::vector<AdvantageSet>& advantages,
                        const TabularPolicy& policy);

// Applies exactly one update; returns the parameter delta. Adam updates
// moments for every key that has ever carried gradient, so momentum decays
// rather than freezing when a later batch has zero gradient on a key.
ParamGrad optimizer_step(OptimizerState& state, const ParamGrad& gradient);

void apply_delta(TabularPolicy& policy, const ParamGrad& delta);

struct StepMetrics {
  long step = 0;
  std::string label;        // problem_id or group_id
  int n = 0;                // rollout group size
  double mean_reward = 0.0;
  double zero_var_fraction = 0.0;
  double mean_is_ratio = 0.0;
  double clip_fraction = 0.0;
  double grad_norm = 0.0;
};

// One rollout batch (N solutions per problem) followed by one optimizer step.
// When out_groups is given the sampled groups are copied there (for replay
// collection and audits).
StepMetrics rl_step(TabularPolicy& policy, const std::vector<ProblemSpec>& problems,
                    int n, OptimizerState& optimizer,
                    const EnginePerturbation& perturbation, double eps_is,
                    std::mt19937_64& rng,
                    std::vector<RolloutGroup>* out_groups = nullptr);

}  // namespace poolrl
