#include "poolrl/env.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "poolrl/rng.hpp"
#include "poolrl/stats.hpp"

namespace poolrl {

namespace {

void check_finite(const Eigen::VectorXd& v, const char* what) {
  if (!v.allFinite())
    throw std::runtime_error(std::string("non-finite logits after ") + what +
                             " (learning rate too large?)");
}

// Largest node key is (V^(T+1)-1)/(V-1) - 1; require V^(T+1) < 2^63.
bool node_keys_fit(int vocab, int length) {
  long double bits = (static_cast<long double>(length) + 1.0L) *
                     std::log2(static_cast<long double>(vocab));
  return bits < 63.0L;
}

const Eigen::VectorXd* find_node(const SeqTable& table, std::uint64_t key) {
  auto it = table.nodes.find(key);
  return it == table.nodes.end() ? nullptr : &it->second;
}

Eigen::VectorXd node_logits(const SeqTable& table, std::uint64_t key) {
  if (const Eigen::VectorXd* z = find_node(table, key)) return *z;
  return Eigen::VectorXd::Zero(table.vocab);
}

Eigen::VectorXd perturb_logits(const Eigen::VectorXd& z,
                               const EnginePerturbation& pert,
                               std::mt19937_64& rng) {
  switch (pert.kind) {
    case EnginePerturbation::Kind::none:
      return z;
    case EnginePerturbation::Kind::temperature_scale: {
      if (pert.magnitude <= 0.0)
        throw std::invalid_argument("temperature_scale magnitude must be > 0");
      return z / pert.magnitude;
    }
    case EnginePerturbation::Kind::logit_quantization: {
      if (pert.magnitude < 0.0)
        throw std::invalid_argument("logit_quantization magnitude must be >= 0");
      if (pert.magnitude == 0.0) return z;
      Eigen::VectorXd q = z;
      for (Eigen::Index i = 0; i < q.size(); ++i)
        q[i] = std::round(q[i] / pert.magnitude) * pert.magnitude;
      return q;
    }
    case EnginePerturbation::Kind::additive_logit_noise: {
      if (pert.magnitude < 0.0)
        throw std::invalid_argument("additive_logit_noise magnitude must be >= 0");
      Eigen::VectorXd q = z;
      std::normal_distribution<double> gauss(0.0, 1.0);
      for (Eigen::Index i = 0; i < q.size(); ++i)
        q[i] += pert.magnitude * gauss(rng);
      return q;
    }
  }
  throw std::logic_error("unknown perturbation kind");
}

int sample_categorical(const Eigen::VectorXd& probs, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double u = unif(rng);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size() - 1); // guard against rounding at u ~ 1
}

}  // namespace

ProblemSpec make_bandit(ProblemId id, int arm_count, int correct_arm) {
  if (arm_count < 2) throw std::invalid_argument("bandit needs K >= 2");
  if (correct_arm < 0 || correct_arm >= arm_count)
    throw std::invalid_argument("correct_arm out of range");
  return ProblemSpec{std::move(id), BanditProblem{arm_count, correct_arm}};
}

ProblemSpec make_sequence(ProblemId id, int vocab_size, int length,
                          std::vector<TokenSeq> correct_set) {
  if (vocab_size < 2) throw std::invalid_argument("sequence needs V >= 2");
  if (length < 1) throw std::invalid_argument("sequence needs T >= 1");
  if (!node_keys_fit(vocab_size, length))
    throw std::invalid_argument("V^(T+1) too large for 63-bit node keys");
  if (correct_set.empty()) throw std::invalid_argument("correct_set empty");
  std::sort(correct_set.begin(), correct_set.end());
  correct_set.erase(std::unique(correct_set.begin(), correct_set.end()),
                    correct_set.end());

  SequenceProblem p;
  p.vocab_size = vocab_size;
  p.length = length;
  for (const TokenSeq& s : correct_set) {
    if (static_cast<int>(s.size()) != length)
      throw std::invalid_argument("correct sequence has wrong length");
    for (int t : s)
      if (t < 0 || t >= vocab_size)
        throw std::invalid_argument("correct sequence symbol out of vocab");
  }
  p.correct_set = std::move(correct_set);

  long double total = std::pow(static_cast<long double>(vocab_size),
                               static_cast<long double>(length));
  if (static_cast<long double>(p.correct_set.size()) >= total)
    throw std::invalid_argument("correct_set must be a strict subset of V^T");

  p.correct_codes.reserve(p.correct_set.size());
  for (const TokenSeq& s : p.correct_set) p.correct_codes.push_back(sequence_code(p, s));
  std::sort(p.correct_codes.begin(), p.correct_codes.end());
  return ProblemSpec{std::move(id), std::move(p)};
}

std::uint64_t sequence_code(const SequenceProblem& problem, const TokenSeq& tokens) {
  std::uint64_t code = 0;
  for (int t : tokens)
    code = code * static_cast<std::uint64_t>(problem.vocab_size) +
           static_cast<std::uint64_t>(t);
  return code;
}

void TabularPolicy::ensure_table(const ProblemSpec& spec) {
  if (has_table(spec.id)) return;
  if (spec.is_bandit()) {
    tables.emplace(spec.id, Eigen::VectorXd::Zero(spec.bandit().arm_count));
  } else {
    SeqTable t;
    t.vocab = spec.sequence().vocab_size;
    t.length = spec.sequence().length;
    tables.emplace(spec.id, std::move(t));
  }
}

TabularPolicy make_uniform_policy(const std::vector<ProblemSpec>& problems,
                                  double temperature) {
  if (temperature <= 0.0) throw std::invalid_argument("temperature must be > 0");
  TabularPolicy policy;
  policy.temperature = temperature;
  for (const ProblemSpec& p : problems) policy.ensure_table(p);
  return policy;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  Eigen::VectorXd shifted = logits.array() - logits.maxCoeff();
  Eigen::VectorXd e = shifted.array().exp();
  return e / e.sum();
}

double log_softmax_at(const Eigen::VectorXd& logits, int index) {
  double m = logits.maxCoeff();
  double lse = std::log((logits.array() - m).exp().sum()) + m;
  return logits[index] - lse;
}

std::vector<Solution> sample_solutions(const TabularPolicy& policy,
                                       const ProblemSpec& problem, int n,
                                       std::mt19937_64& rng,
                                       const EnginePerturbation& perturbation) {
  if (n < 1) throw std::invalid_argument("sample_solutions: n must be >= 1");
  auto table_it = policy.tables.find(problem.id);
  if (table_it == policy.tables.end())
    throw std::out_of_range("sample_solutions: no policy table for problem '" +
                            problem.id + "'");
  const double tau = policy.temperature;

  std::vector<Solution> out;
  out.reserve(static_cast<std::size_t>(n));

  if (problem.is_bandit()) {
    const auto& z = std::get<Eigen::VectorXd>(table_it->second);
    Eigen::VectorXd zr = perturb_logits(z, perturbation, rng);
    Eigen::VectorXd sample_probs = softmax(zr / tau);
    for (int i = 0; i < n; ++i) {
      int arm = sample_categorical(sample_probs, rng);
      Solution s;
      s.problem_id = problem.id;
      s.tokens = {arm};
      s.logprob_rollout = {log_softmax_at(zr / tau, arm)};
      s.logprob_train = {log_softmax_at(z, arm)};
      s.reward = (arm == problem.bandit().correct_arm) ? 1 : 0;
      out.push_back(std::move(s));
    }
    return out;
  }

  const SeqTable& table = std::get<SeqTable>(table_it->second);
  const SequenceProblem& sp = problem.sequence();
  // Perturbed logits are cached per node so the rollout engine is one fixed
  // transformation across the whole batch (noise kinds included).
  std::map<std::uint64_t, Eigen::VectorXd> perturbed_cache;
  for (int i = 0; i < n; ++i) {
    Solution s;
    s.problem_id = problem.id;
    s.tokens.reserve(sp.length);
    std::uint64_t node = 0;
    for (int t = 0; t < sp.length; ++t) {
      Eigen::VectorXd z = node_logits(table, node);
      auto cached = perturbed_cache.find(node);
      if (cached == perturbed_cache.end())
        cached = perturbed_cache.emplace(node, perturb_logits(z, perturbation, rng)).first;
      const Eigen::VectorXd& zr = cached->second;
      Eigen::VectorXd sample_probs = softmax(zr / tau);
      int sym = sample_categorical(sample_probs, rng);
      s.tokens.push_back(sym);
      s.logprob_rollout.push_back(log_softmax_at(zr / tau, sym));
      s.logprob_train.push_back(log_softmax_at(z, sym));
      node = child_node(node, sp.vocab_size, sym);
    }
    std::uint64_t code = sequence_code(sp, s.tokens);
    s.reward = std::binary_search(sp.correct_codes.begin(), sp.correct_codes.end(),
                                  code)
                   ? 1
                   : 0;
    out.push_back(std::move(s));
  }
  return out;
}

namespace {
double sequence_probability_impl(const SeqTable& table, double tau,
                                 const SequenceProblem& sp, const TokenSeq& tokens) {
  double logp = 0.0;
  std::uint64_t node = 0;
  for (int t = 0; t < sp.length; ++t) {
    Eigen::VectorXd z = node_logits(table, node) / tau;
    logp += log_softmax_at(z, tokens[t]);
    node = child_node(node, sp.vocab_size, tokens[t]);
  }
  return std::exp(logp);
}
}  // namespace

double sequence_probability(const TabularPolicy& policy,
                            const ProblemSpec& problem, const TokenSeq& tokens) {
  if (problem.is_bandit())
    throw std::invalid_argument("sequence_probability: sequence problems only");
  const SequenceProblem& sp = problem.sequence();
  if (static_cast<int>(tokens.size()) != sp.length)
    throw std::invalid_argument("sequence_probability: wrong length");
  auto it = policy.tables.find(problem.id);
  if (it == policy.tables.end())
    throw std::out_of_range("sequence_probability: no policy table");
  return sequence_probability_impl(std::get<SeqTable>(it->second),
                                   policy.temperature, sp, tokens);
}

double exact_accuracy(const TabularPolicy& policy, const ProblemSpec& problem,
                      double enumeration_cap) {
  auto table_it = policy.tables.find(problem.id);
  if (table_it == policy.tables.end())
    throw std::out_of_range("exact_accuracy: no policy table for problem '" +
                            problem.id + "'");
  const double tau = policy.temperature;
  if (problem.is_bandit()) {
    const auto& z = std::get<Eigen::VectorXd>(table_it->second);
    return softmax(z / tau)[problem.bandit().correct_arm];
  }
  const SequenceProblem& sp = problem.sequence();
  long double total = std::pow(static_cast<long double>(sp.vocab_size),
                               static_cast<long double>(sp.length));
  if (total > static_cast<long double>(enumeration_cap))
    throw std::domain_error(
        "exact_accuracy: V^T exceeds the enumeration cap; use sampled "
        "estimation (accuracy_estimate) instead");
  const SeqTable& table = std::get<SeqTable>(table_it->second);
  stats::NeumaierSum acc;
  for (const TokenSeq& s : sp.correct_set)
    acc.add(sequence_probability_impl(table, tau, sp, s));
  return std::min(1.0, acc.value());
}

void sft_update(TabularPolicy& policy, const std::vector<Solution>& solutions,
                double learning_rate, int epochs) {
  if (solutions.empty()) throw std::invalid_argument("sft_update: no solutions");
  if (learning_rate < 0.0) throw std::invalid_argument("sft_update: negative lr");
  if (epochs < 0) throw std::invalid_argument("sft_update: negative epochs");
  if (learning_rate == 0.0 || epochs == 0) return;

  for (int e = 0; e < epochs; ++e) {
    for (const Solution& sol : solutions) {
      auto table_it = policy.tables.find(sol.problem_id);
      if (table_it == policy.tables.end())
        throw std::out_of_range("sft_update: no policy table for problem '" +
                                sol.problem_id + "'");
      if (auto* z = std::get_if<Eigen::VectorXd>(&table_it->second)) {
        if (sol.tokens.size() != 1)
          throw std::invalid_argument("bandit solution must have one token");
        Eigen::VectorXd probs = softmax(*z);
        Eigen::VectorXd grad = -probs;
        grad[sol.tokens[0]] += 1.0;
        *z += learning_rate * grad;
        check_finite(*z, "sft_update");
      } else {
        SeqTable& table = std::get<SeqTable>(table_it->second);
        double inv_len = 1.0 / static_cast<double>(sol.tokens.size());
        // Evaluate the whole-solution gradient at the current parameters, then
        // apply it once (one ascent step per solution). Nodes along a path are
        // distinct, so evaluate+apply per node in path order is equivalent.
        std::uint64_t node = 0;
        for (int t = 0; t < static_cast<int>(sol.tokens.size()); ++t) {
          auto [it, inserted] =
              table.nodes.try_emplace(node, Eigen::VectorXd::Zero(table.vocab));
          (void)inserted;
          Eigen::VectorXd probs = softmax(it->second);
          Eigen::VectorXd grad = -probs;
          grad[sol.tokens[t]] += 1.0;
          it->second += learning_rate * inv_len * grad;
          check_finite(it->second, "sft_update");
          node = child_node(node, table.vocab, sol.tokens[t]);
        }
      }
    }
  }
}

Eigen::VectorXd bandit_reward_gradient(const Eigen::VectorXd& logits,
                                       int correct_arm) {
  Eigen::VectorXd p = softmax(logits);
  double pc = p[correct_arm];
  Eigen::VectorXd g = -pc * p;
  g[correct_arm] += pc;
  return g;
}

Eigen::MatrixXd bandit_reward_hessian(const Eigen::VectorXd& logits,
                                      int correct_arm) {
  Eigen::VectorXd p = softmax(logits);
  int k = static_cast<int>(p.size());
  double pc = p[correct_arm];
  Eigen::MatrixXd h(k, k);
  for (int i = 0; i < k; ++i) {
    double di = (i == correct_arm) ? 1.0 : 0.0;
    for (int j = 0; j < k; ++j) {
      double dj = (j == correct_arm) ? 1.0 : 0.0;
      double dij = (i == j) ? 1.0 : 0.0;
      h(i, j) = pc * ((di - p[i]) * (dj - p[j]) - p[i] * (dij - p[j]));
    }
  }
  return h;
}

Eigen::MatrixXd bandit_noise_covariance(const Eigen::VectorXd& logits,
                                        int correct_arm) {
  Eigen::VectorXd p = softmax(logits);
  int k = static_cast<int>(p.size());
  double pc = p[correct_arm];
  Eigen::VectorXd g = bandit_reward_gradient(logits, correct_arm);
  Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(k, k);
  for (int a = 0; a < k; ++a) {
    double r = (a == correct_arm) ? 1.0 : 0.0;
    Eigen::VectorXd score = -p;
    score[a] += 1.0;
    sigma += p[a] * (r - pc) * (r - pc) * score * score.transpose();
  }
  sigma -= g * g.transpose();
  return sigma;
}

namespace {
const Eigen::VectorXd& bandit_logits_or_throw(const TabularPolicy& policy,
                                              const ProblemSpec& problem,
                                              const char* op) {
  if (!problem.is_bandit())
    throw std::invalid_argument(std::string(op) + ": bandit problems only");
  if (policy.temperature != 1.0)
    throw std::invalid_argument(std::string(op) +
                                ": analytics assume unit sampling temperature");
  auto it = policy.tables.find(problem.id);
  if (it == policy.tables.end())
    throw std::out_of_range(std::string(op) + ": no policy table");
  return std::get<Eigen::VectorXd>(it->second);
}
}  // namespace

Eigen::VectorXd analytic_reward_gradient(const TabularPolicy& policy,
                                         const ProblemSpec& bandit) {
  const auto& z = bandit_logits_or_throw(policy, bandit, "analytic_reward_gradient");
  return bandit_reward_gradient(z, bandit.bandit().correct_arm);
}

Eigen::MatrixXd analytic_reward_hessian(const TabularPolicy& policy,
                                        const ProblemSpec& bandit) {
  const auto& z = bandit_logits_or_throw(policy, bandit, "analytic_reward_hessian");
  return bandit_reward_hessian(z, bandit.bandit().correct_arm);
}

NoiseEstimator parse_noise_estimator(const std::string& name) {
  if (name == "reinforce_baseline") return NoiseEstimator::reinforce_baseline;
  throw std::invalid_argument("unsupported noise estimator: " + name);
}

Eigen::MatrixXd estimator_noise_covariance(const TabularPolicy& policy,
                                           const ProblemSpec& bandit,
                                           NoiseEstimator estimator) {
  if (estimator != NoiseEstimator::reinforce_baseline)
    throw std::invalid_argument("unsupported noise estimator");
  const auto& z =
      bandit_logits_or_throw(policy, bandit, "estimator_noise_covariance");
  return bandit_noise_covariance(z, bandit.bandit().correct_arm);
}

double duplicate_rate(const Solution& generated,
                      const std::vector<Solution>& training_set) {
  if (training_set.empty())
    throw std::invalid_argument("duplicate_rate: empty training set");
  if (generated.tokens.empty()) return 0.0;
  std::size_t best = 0;
  for (const Solution& t : training_set) {
    std::size_t lcp = 0;
    std::size_t limit = std::min(generated.tokens.size(), t.tokens.size());
    while (lcp < limit && generated.tokens[lcp] == t.tokens[lcp]) ++lcp;
    best = std::max(best, lcp);
  }
  return static_cast<double>(best) / static_cast<double>(generated.tokens.size());
}

double pass_at_k(const std::vector<int>& rewards, int k) {
  int n = static_cast<int>(rewards.size());
  if (k < 1 || k > n) throw std::invalid_argument("pass_at_k: need 1 <= k <= n");
  int c = 0;
  for (int r : rewards) {
    if (r != 0 && r != 1) throw std::invalid_argument("pass_at_k: rewards must be 0/1");
    c += r;
  }
  if (n - c < k) return 1.0;
  double q = 1.0; // C(n-c, k)/C(n, k) as a stable running product
  for (int i = 0; i < k; ++i)
    q *= static_cast<double>(n - c - i) / static_cast<double>(n - i);
  return 1.0 - q;
}

ReferenceGenerator::ReferenceGenerator(const ProblemSpec& spec, std::uint64_t seed) {
  if (spec.is_bandit()) {
    order_.push_back(TokenSeq{spec.bandit().correct_arm});
  } else {
    order_ = spec.sequence().correct_set;
  }
  std::mt19937_64 rng = make_rng(seed, {fnv1a64(spec.id), fnv1a64("refgen")});
  std::shuffle(order_.begin(), order_.end(), rng);
}

std::optional<TokenSeq> ReferenceGenerator::next() {
  if (exhausted()) return std::nullopt;
  return order_[cursor_++];
}

void ReferenceGenerator::skip(std::size_t count) {
  cursor_ = std::min(order_.size(), cursor_ + count);
}

}  // namespace poolrl
