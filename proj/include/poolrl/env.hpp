#pragma once
// Synthetic task environments with tabular softmax policies. Both task kinds
// keep accuracy, gradients, and (for bandits) Hessians and estimator noise
// covariances exactly computable, so every downstream measurement can be
// checked against a closed form.

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

namespace poolrl {

using ProblemId = std::string;
using TokenSeq = std::vector<int>;

struct BanditProblem {
  int arm_count = 2;   // K >= 2
  int correct_arm = 0; // in [0, K)
};

// Fixed-length token sequences over a vocabulary; a solution is correct iff it
// is a member of the explicit correct set.
struct SequenceProblem {
  int vocab_size = 2; // V
  int length = 1;     // T
  std::vector<TokenSeq> correct_set;          // deduped + sorted
  std::vector<std::uint64_t> correct_codes;   // base-V codes of correct_set, sorted
};

struct ProblemSpec {
  ProblemId id;
  std::variant<BanditProblem, SequenceProblem> task;

  bool is_bandit() const { return std::holds_alternative<BanditProblem>(task); }
  const BanditProblem& bandit() const { return std::get<BanditProblem>(task); }
  const SequenceProblem& sequence() const { return std::get<SequenceProblem>(task); }
};

ProblemSpec make_bandit(ProblemId id, int arm_count, int correct_arm);
ProblemSpec make_sequence(ProblemId id, int vocab_size, int length,
                          std::vector<TokenSeq> correct_set);

// Prefix-tree node keys for sequence policies: root = 0, child(k, s) = k*V+1+s.
// Keys stay below 2^63 for every problem make_sequence accepts.
inline std::uint64_t child_node(std::uint64_t key, int vocab, int symbol) {
  return key * static_cast<std::uint64_t>(vocab) + 1 +
         static_cast<std::uint64_t>(symbol);
}
std::uint64_t sequence_code(const SequenceProblem& problem, const TokenSeq& tokens);

// Per-prefix logit table; a node absent from the map carries all-zero logits
// (uniform distribution). Tables stay sparse: only visited/trained prefixes
// materialize, which is what makes V^T ~ 2^60 problems workable.
struct SeqTable {
  int vocab = 0;
  int length = 0;
  std::map<std::uint64_t, Eigen::VectorXd> nodes;
};

using PolicyTable = std::variant<Eigen::VectorXd, SeqTable>; // bandit logits | sequence nodes

struct TabularPolicy {
  double temperature = 1.0; // sampling only; training/scoring uses raw logits
  std::map<ProblemId, PolicyTable> tables;

  bool has_table(const ProblemId& id) const { return tables.count(id) != 0; }
  // Creates the (empty/uniform) table for a problem if missing.
  void ensure_table(const ProblemSpec& spec);
};

TabularPolicy make_uniform_policy(const std::vector<ProblemSpec>& problems,
                                  double temperature = 1.0);

// Models the rollout-engine/train-engine gap: the rollout side samples from a
// transformed copy of the logits while training always scores with the raw
// policy. kind=none with unit temperature makes the two engines identical.
struct EnginePerturbation {
  enum class Kind { none, temperature_scale, logit_quantization, additive_logit_noise };
  Kind kind = Kind::none;
  double magnitude = 0.0;
};

struct Solution {
  ProblemId problem_id;
  TokenSeq tokens;
  std::vector<double> logprob_rollout; // per token, under the sampling distribution
  std::vector<double> logprob_train;   // per token, under the raw policy
  int reward = 0;                      // 0/1: membership in the correct set
  std::int64_t seq_no = 0;             // collection order; used by replay FIFO audits
};

Eigen::VectorXd softmax(const Eigen::VectorXd& logits);
double log_softmax_at(const Eigen::VectorXd& logits, int index);

// Draws n solutions. Rollout log-probs are taken under the actual sampling
// distribution (perturbed logits / temperature); train log-probs under the raw
// policy. additive_logit_noise draws one noise vector per node per call, so
// the perturbed engine is fixed across the returned batch.
std::vector<Solution> sample_solutions(
    const TabularPolicy& policy, const ProblemSpec& problem, int n,
    std::mt19937_64& rng,
    const EnginePerturbation& perturbation = EnginePerturbation{});

inline constexpr double kExactAccuracyCap = 1e6;

// Exact probability that one sampled solution is correct (under the sampling
// temperature, unperturbed engine). Sequence problems enumerate the correct
// set only, but the documented contract still caps V^T: beyond the cap the
// caller must use sampled estimation.
double exact_accuracy(const TabularPolicy& policy, const ProblemSpec& problem,
                      double enumeration_cap = kExactAccuracyCap);

// Exact probability of one specific token sequence under the sampling
// distribution (no enumeration involved).
double sequence_probability(const TabularPolicy& policy,
                            const ProblemSpec& problem,
                            const TokenSeq& tokens);

// Gradient ascent on each solution's mean per-token log-likelihood. One epoch
// is one in-order pass over `solutions`, taking one step per solution, so
// optimization pressure scales with dataset size. Deterministic; lr = 0 is the
// identity. Throws if logits go non-finite (learning rate too large).
void sft_update(TabularPolicy& policy, const std::vector<Solution>& solutions,
                double learning_rate, int epochs);

// Closed-form single-bandit analytics (unit temperature required): these are
// the exact quantities the efficiency theory consumes.
Eigen::VectorXd analytic_reward_gradient(const TabularPolicy& policy,
                                         const ProblemSpec& bandit);
Eigen::MatrixXd analytic_reward_hessian(const TabularPolicy& policy,
                                        const ProblemSpec& bandit);

// Dense-logit variants used by the simulation harnesses, which evolve a raw
// logit vector rather than a full policy.
Eigen::VectorXd bandit_reward_gradient(const Eigen::VectorXd& logits, int correct_arm);
Eigen::MatrixXd bandit_reward_hessian(const Eigen::VectorXd& logits, int correct_arm);
Eigen::MatrixXd bandit_noise_covariance(const Eigen::VectorXd& logits, int correct_arm);

enum class NoiseEstimator { reinforce_baseline };
NoiseEstimator parse_noise_estimator(const std::string& name);

// Exact single-sample covariance of the REINFORCE estimator with the exact
// mean baseline, (r - p) * grad log pi(a); enumerated over arms.
Eigen::MatrixXd estimator_noise_covariance(const TabularPolicy& policy,
                                           const ProblemSpec& bandit,
                                           NoiseEstimator estimator);

// Max over training solutions of (longest common prefix / generated length);
// empty generated sequence defined as 0.
double duplicate_rate(const Solution& generated,
                      const std::vector<Solution>& training_set);

// Unbiased pass@k: 1 - C(n-c, k)/C(n, k), evaluated as a stable product.
double pass_at_k(const std::vector<int>& rewards, int k);

// Reference-solution source: the correct set in seed-shuffled order, each
// sequence emitted once (distinctness until exhaustion).
class ReferenceGenerator {
 public:
  ReferenceGenerator() = default;
  ReferenceGenerator(const ProblemSpec& spec, std::uint64_t seed);
  std::optional<TokenSeq> next();
  bool exhausted() const { return cursor_ >= order_.size(); }
  std::size_t remaining() const { return order_.size() - cursor_; }
  std::size_t cursor() const { return cursor_; }
  // Resume support: fast-forward a freshly constructed generator.
  void skip(std::size_t count);

 private:
  std::vector<TokenSeq> order_;
  std::size_t cursor_ = 0;
};

}  // namespace poolrl
