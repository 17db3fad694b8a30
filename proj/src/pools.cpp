#include "poolrl/pools.hpp"

#include <stdexcept>

namespace poolrl {

const char* pool_name(Pool pool) {
  switch (pool) {
    case Pool::Unsolvable: return "Unsolvable";
    case Pool::Solvable: return "Solvable";
    case Pool::Solved: return "Solved";
    case Pool::Failed: return "Failed";
  }
  return "?";
}

const char* event_kind_name(PoolEvent::Kind kind) {
  switch (kind) {
    case PoolEvent::Kind::accuracy_measured: return "accuracy_measured";
    case PoolEvent::Kind::solutions_added: return "solutions_added";
    case PoolEvent::Kind::rl_group_succeeded: return "rl_group_succeeded";
    case PoolEvent::Kind::rl_group_failed_budget_left:
      return "rl_group_failed_budget_left";
    case PoolEvent::Kind::rl_group_failed_budget_exhausted:
      return "rl_group_failed_budget_exhausted";
  }
  return "?";
}

Pool classify(double p_hat, double tau_sft, double tau_rl) {
  if (!(0.0 < tau_sft && tau_sft < tau_rl && tau_rl < 1.0))
    throw std::invalid_argument("classify: need 0 < tau_sft < tau_rl < 1");
  if (p_hat < 0.0 || p_hat > 1.0)
    throw std::invalid_argument("classify: p_hat outside [0,1]");
  if (p_hat < tau_sft) return Pool::Unsolvable;
  if (p_hat < tau_rl) return Pool::Solvable;
  return Pool::Solved;
}

long long solutions_to_add(int k) {
  if (k < 0) throw std::invalid_argument("solutions_to_add: k >= 0");
  if (k > 62) throw std::invalid_argument("solutions_to_add: k too large");
  return (1LL << k) - 1;
}

std::array<int, 4> PoolState::counts() const {
  std::array<int, 4> c{0, 0, 0, 0};
  for (const auto& [id, rec] : problems) {
    (void)id;
    c[static_cast<int>(rec.pool)] += 1;
  }
  return c;
}

PoolState make_pool_state(const std::vector<ProblemId>& problems,
                          long long budget_limit_per_problem, double tau_sft,
                          double tau_rl) {
  if (!(0.0 < tau_sft && tau_sft < tau_rl && tau_rl < 1.0))
    throw std::invalid_argument("make_pool_state: bad thresholds");
  if (budget_limit_per_problem < 0)
    throw std::invalid_argument("make_pool_state: negative budget");
  PoolState state;
  state.tau_sft = tau_sft;
  state.tau_rl = tau_rl;
  for (const ProblemId& id : problems) {
    if (state.problems.count(id))
      throw std::invalid_argument("make_pool_state: duplicate problem id");
    ProblemRecord rec;
    rec.budget_limit = budget_limit_per_problem;
    state.problems.emplace(id, rec);
  }
  return state;
}

namespace {

ProblemRecord& live_record(PoolState& state, const ProblemId& id) {
  auto it = state.problems.find(id);
  if (it == state.problems.end())
    throw std::invalid_argument("pool event references unknown problem '" + id + "'");
  if (it->second.pool == Pool::Solved || it->second.pool == Pool::Failed)
    throw std::invalid_argument("pool event touches terminal problem '" + id + "'");
  return it->second;
}

void spend_budget(ProblemRecord& rec, long long rollouts) {
  if (rollouts < 0) throw std::invalid_argument("negative rollout spend");
  rec.budget_spent = std::min(rec.budget_limit, rec.budget_spent + rollouts);
}

}  // namespace

PoolState apply_event(PoolState state, const PoolEvent& event) {
  switch (event.kind) {
    case PoolEvent::Kind::accuracy_measured: {
      ProblemRecord& rec = live_record(state, event.problem);
      if (event.p_hat < 0.0 || event.p_hat > 1.0)
        throw std::invalid_argument("accuracy_measured: p_hat outside [0,1]");
      rec.p_hat = event.p_hat;
      rec.sample_count = event.samples;
      rec.pool = classify(event.p_hat, state.tau_sft, state.tau_rl);
      break;
    }
    case PoolEvent::Kind::solutions_added: {
      ProblemRecord& rec = live_record(state, event.problem);
      if (event.count < 0)
        throw std::invalid_argument("solutions_added: negative count");
      rec.solutions_collected += event.count;
      break;
    }
    case PoolEvent::Kind::rl_group_succeeded:
    case PoolEvent::Kind::rl_group_failed_budget_left: {
      if (event.members.empty())
        throw std::invalid_argument("group event with no members");
      if (event.member_p_hats.size() != event.members.size())
        throw std::invalid_argument("group event: p_hat list mismatch");
      for (std::size_t i = 0; i < event.members.size(); ++i) {
        ProblemRecord& rec = live_record(state, event.members[i]);
        if (rec.pool != Pool::Solvable)
          throw std::invalid_argument("RL outcome for non-Solvable problem '" +
                                      event.members[i] + "'");
        double p = event.member_p_hats[i];
        if (p < 0.0 || p > 1.0)
          throw std::invalid_argument("group event: p_hat outside [0,1]");
        spend_budget(rec, event.per_member_rollouts);
        rec.p_hat = p;
        rec.pool = classify(p, state.tau_sft, state.tau_rl);
        rec.group_id = std::nullopt;
      }
      break;
    }
    case PoolEvent::Kind::rl_group_failed_budget_exhausted: {
      if (event.members.empty())
        throw std::invalid_argument("group event with no members");
      for (const ProblemId& id : event.members) {
        ProblemRecord& rec = live_record(state, id);
        if (rec.pool != Pool::Solvable)
          throw std::invalid_argument("RL outcome for non-Solvable problem '" + id +
                                      "'");
        if (rec.budget_spent + event.per_member_rollouts < rec.budget_limit)
          throw std::invalid_argument(
              "budget_exhausted event but budget remains for '" + id + "'");
        spend_budget(rec, event.per_member_rollouts);
        rec.pool = Pool::Failed;
        rec.group_id = std::nullopt;
      }
      break;
    }
  }
  state.log.push_back(event);
  return state;
}

AccuracyEstimate accuracy_estimate(const TabularPolicy& policy,
                                   const ProblemSpec& problem, int samples,
                                   std::mt19937_64& rng, bool use_exact) {
  if (samples < 1) throw std::invalid_argument("accuracy_estimate: samples >= 1");
  AccuracyEstimate est;
  if (use_exact) {
    double p = exact_accuracy(policy, problem);
    est.p_hat = p;
    est.interval = {p, p};
    est.samples = samples;
    est.exact = true;
    return est;
  }
  std::vector<Solution> sols = sample_solutions(policy, problem, samples, rng);
  std::size_t correct = 0;
  for (const Solution& s : sols) correct += static_cast<std::size_t>(s.reward);
  est.p_hat = static_cast<double>(correct) / static_cast<double>(samples);
  est.interval = stats::wilson_interval(correct, static_cast<std::size_t>(samples));
  est.samples = samples;
  est.exact = false;
  return est;
}

}  // namespace poolrl
