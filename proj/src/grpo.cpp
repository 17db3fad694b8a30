#include "poolrl/grpo.hpp"

#include <cmath>
#include <stdexcept>

#include "poolrl/stats.hpp"

namespace poolrl {

RolloutGroup make_group(std::vector<Solution> solutions) {
  if (solutions.size() < 2)
    throw std::invalid_argument("rollout group needs N >= 2");
  for (const Solution& s : solutions)
    if (s.problem_id != solutions.front().problem_id)
      throw std::invalid_argument("rollout group mixes problem ids");
  RolloutGroup g;
  g.problem_id = solutions.front().problem_id;
  g.solutions = std::move(solutions);
  return g;
}

double ParamGrad::norm() const {
  double sq = 0.0;
  for (const auto& [id, nodes] : entries) {
    (void)id;
    for (const auto& [key, vec] : nodes) {
      (void)key;
      sq += vec.squaredNorm();
    }
  }
  return std::sqrt(sq);
}

void ParamGrad::scale(double factor) {
  for (auto& [id, nodes] : entries) {
    (void)id;
    for (auto& [key, vec] : nodes) {
      (void)key;
      vec *= factor;
    }
  }
}

Eigen::VectorXd& ParamGrad::slot(const ProblemId& id, std::uint64_t node,
                                 Eigen::Index dim) {
  auto [it, inserted] = entries[id].try_emplace(node, Eigen::VectorXd::Zero(dim));
  if (!inserted && it->second.size() != dim)
    throw std::logic_error("ParamGrad dimension mismatch");
  return it->second;
}

std::vector<double> grpo_advantages(const std::vector<int>& rewards) {
  if (rewards.size() < 2)
    throw std::invalid_argument("grpo_advantages: need N >= 2");
  bool all_equal = true;
  for (int r : rewards) {
    if (r != 0 && r != 1)
      throw std::invalid_argument("grpo_advantages: rewards must be 0/1");
    if (r != rewards.front()) all_equal = false;
  }
  std::vector<double> adv(rewards.size(), 0.0);
  if (all_equal) return adv;

  double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (int r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (int r : rewards) var += (r - mean) * (r - mean);
  double denom = std::sqrt(var / n) + 1e-6;
  for (std::size_t i = 0; i < rewards.size(); ++i)
    adv[i] = (rewards[i] - mean) / denom;
  return adv;
}

std::vector<double> is_reweight(double base_advantage,
                                const std::vector<double>& train_logprobs,
                                const std::vector<double>& rollout_logprobs,
                                double eps_is) {
  if (train_logprobs.size() != rollout_logprobs.size())
    throw std::invalid_argument("is_reweight: token list length mismatch");
  if (eps_is < 0.0) throw std::invalid_argument("is_reweight: eps_is < 0");
  std::vector<double> out(train_logprobs.size());
  double cap = 1.0 + eps_is;
  for (std::size_t t = 0; t < train_logprobs.size(); ++t) {
    double ratio = std::exp(train_logprobs[t] - rollout_logprobs[t]);
    if (!std::isfinite(ratio))
      throw std::runtime_error("is_reweight: non-finite importance ratio");
    out[t] = std::min(ratio, cap) * base_advantage;
  }
  return out;
}

AdvantageSet compute_advantages(const RolloutGroup& group, double eps_is) {
  std::vector<int> rewards;
  rewards.reserve(group.solutions.size());
  for (const Solution& s : group.solutions) rewards.push_back(s.reward);
  AdvantageSet set;
  set.base = grpo_advantages(rewards);
  set.corrected.reserve(group.solutions.size());
  for (std::size_t i = 0; i < group.solutions.size(); ++i)
    set.corrected.push_back(is_reweight(set.base[i],
                                        group.solutions[i].logprob_train,
                                        group.solutions[i].logprob_rollout,
                                        eps_is));
  return set;
}

ParamGrad loss_gradient(const std::vector<RolloutGroup>& groups,
                        const std::vector<AdvantageSet>& advantages,
                        const TabularPolicy& policy) {
  if (groups.empty()) throw std::invalid_argument("loss_gradient: no groups");
  if (groups.size() != advantages.size())
    throw std::invalid_argument("loss_gradient: advantages missing for a group");

  std::size_t total_solutions = 0;
  for (const RolloutGroup& g : groups) total_solutions += g.solutions.size();
  double inv_g = 1.0 / static_cast<double>(total_solutions);

  ParamGrad grad;
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const RolloutGroup& group = groups[gi];
    const AdvantageSet& adv = advantages[gi];
    if (adv.corrected.size() != group.solutions.size())
      throw std::invalid_argument("loss_gradient: advantage/solution mismatch");
    auto table_it = policy.tables.find(group.problem_id);
    if (table_it == policy.tables.end())
      throw std::out_of_range("loss_gradient: no policy table for '" +
                              group.problem_id + "'");

    for (std::size_t i = 0; i < group.solutions.size(); ++i) {
      const Solution& sol = group.solutions[i];
      const std::vector<double>& a = adv.corrected[i];
      if (a.size() != sol.tokens.size())
        throw std::invalid_argument("loss_gradient: token count mismatch");
      double inv_len = 1.0 / static_cast<double>(sol.tokens.size());

      if (const auto* z = std::get_if<Eigen::VectorXd>(&table_it->second)) {
        Eigen::VectorXd probs = softmax(*z);
        Eigen::VectorXd& slot = grad.slot(group.problem_id, 0, z->size());
        // grad log pi(a) = e_a - probs; loss sign flips it.
        double w = -inv_g * inv_len * a[0];
        slot += w * (-probs);
        slot[sol.tokens[0]] += w;
      } else {
        const SeqTable& table = std::get<SeqTable>(table_it->second);
        std::uint64_t node = 0;
        for (std::size_t t = 0; t < sol.tokens.size(); ++t) {
          Eigen::VectorXd z = Eigen::VectorXd::Zero(table.vocab);
          if (auto nit = table.nodes.find(node); nit != table.nodes.end())
            z = nit->second;
          Eigen::VectorXd probs = softmax(z);
          Eigen::VectorXd& slot = grad.slot(group.problem_id, node, table.vocab);
          double w = -inv_g * inv_len * a[t];
          slot += w * (-probs);
          slot[sol.tokens[t]] += w;
          node = child_node(node, table.vocab, sol.tokens[t]);
        }
      }
    }
  }
  return grad;
}

ParamGrad optimizer_step(OptimizerState& state, const ParamGrad& gradient) {
  state.step += 1;
  ParamGrad delta;

  if (state.kind == OptimizerState::Kind::sgd) {
    for (const auto& [id, nodes] : gradient.entries)
      for (const auto& [key, g] : nodes)
        delta.slot(id, key, g.size()) = -state.learning_rate * g;
    return delta;
  }

  // Adam. Walk the union of tracked-moment keys and current-gradient keys.
  for (const auto& [id, nodes] : gradient.entries)
    for (const auto& [key, g] : nodes) {
      state.m.slot(id, key, g.size());
      state.v.slot(id, key, g.size());
    }
  double bc1 = 1.0, bc2 = 1.0;
  if (state.bias_correction) {
    bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  }
  for (auto& [id, nodes] : state.m.entries) {
    for (auto& [key, m] : nodes) {
      Eigen::VectorXd g = Eigen::VectorXd::Zero(m.size());
      if (auto git = gradient.entries.find(id); git != gradient.entries.end())
        if (auto nit = git->second.find(key); nit != git->second.end()) g = nit->second;
      Eigen::VectorXd& v = state.v.entries[id][key];
      m = state.beta1 * m + (1.0 - state.beta1) * g;
      v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseProduct(g);
      Eigen::ArrayXd mhat = m.array() / bc1;
      Eigen::ArrayXd vhat = v.array() / bc2;
      delta.slot(id, key, m.size()) =
          (-state.learning_rate * mhat / (vhat.sqrt() + state.epsilon)).matrix();
    }
  }
  return delta;
}

void apply_delta(TabularPolicy& policy, const ParamGrad& delta) {
  for (const auto& [id, nodes] : delta.entries) {
    auto table_it = policy.tables.find(id);
    if (table_it == policy.tables.end())
      throw std::out_of_range("apply_delta: no policy table for '" + id + "'");
    if (auto* z = std::get_if<Eigen::VectorXd>(&table_it->second)) {
      auto nit = nodes.find(0);
      if (nit == nodes.end() || nodes.size() != 1)
        throw std::logic_error("apply_delta: bandit delta must use node 0");
      *z += nit->second;
      if (!z->allFinite()) throw std::runtime_error("apply_delta: non-finite logits");
    } else {
      SeqTable& table = std::get<SeqTable>(table_it->second);
      for (const auto& [key, d] : nodes) {
        auto [it, inserted] =
            table.nodes.try_emplace(key, Eigen::VectorXd::Zero(table.vocab));
        (void)inserted;
        it->second += d;
        if (!it->second.allFinite())
          throw std::runtime_error("apply_delta: non-finite logits");
      }
    }
  }
}

StepMetrics rl_step(TabularPolicy& policy, const std::vector<ProblemSpec>& problems,
                    int n, OptimizerState& optimizer,
                    const EnginePerturbation& perturbation, double eps_is,
                    std::mt19937_64& rng, std::vector<RolloutGroup>* out_groups) {
  if (problems.empty()) throw std::invalid_argument("rl_step: no problems");
  if (n < 2) throw std::invalid_argument("rl_step: need N >= 2");

  std::vector<RolloutGroup> groups;
  std::vector<AdvantageSet> advantages;
  groups.reserve(problems.size());

  StepMetrics metrics;
  metrics.n = n;
  stats::NeumaierSum reward_sum, ratio_sum;
  std::size_t token_count = 0, clipped = 0, zero_var = 0, solution_count = 0;

  for (const ProblemSpec& spec : problems) {
    RolloutGroup group = make_group(sample_solutions(policy, spec, n, rng, perturbation));
    AdvantageSet adv = compute_advantages(group, eps_is);

    bool all_equal = true;
    for (const Solution& s : group.solutions) {
      reward_sum.add(s.reward);
      if (s.reward != group.solutions.front().reward) all_equal = false;
      for (std::size_t t = 0; t < s.tokens.size(); ++t) {
        double ratio = std::exp(s.logprob_train[t] - s.logprob_rollout[t]);
        ratio_sum.add(ratio);
        if (ratio > 1.0 + eps_is) ++clipped;
        ++token_count;
      }
    }
    zero_var += all_equal ? 1 : 0;
    solution_count += group.solutions.size();
    groups.push_back(std::move(group));
    advantages.push_back(std::move(adv));
  }

  ParamGrad grad = loss_gradient(groups, advantages, policy);
  metrics.grad_norm = grad.norm();
  ParamGrad delta = optimizer_step(optimizer, grad);
  apply_delta(policy, delta);
  if (out_groups != nullptr) *out_groups = groups;

  metrics.step = optimizer.step;
  metrics.mean_reward = reward_sum.value() / static_cast<double>(solution_count);
  metrics.zero_var_fraction =
      static_cast<double>(zero_var) / static_cast<double>(problems.size());
  metrics.mean_is_ratio = ratio_sum.value() / static_cast<double>(token_count);
  metrics.clip_fraction =
      static_cast<double>(clipped) / static_cast<double>(token_count);
  return metrics;
}

}  // namespace poolrl
