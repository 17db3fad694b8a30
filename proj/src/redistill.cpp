#include "poolrl/redistill.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

#include "poolrl/rng.hpp"

namespace poolrl {

bool ReplayBuffer::all_empty() const {
  for (const auto& [id, dq] : buffers) {
    (void)id;
    if (!dq.empty()) return false;
  }
  return true;
}

std::size_t ReplayBuffer::total_size() const {
  std::size_t n = 0;
  for (const auto& [id, dq] : buffers) {
    (void)id;
    n += dq.size();
  }
  return n;
}

ReplayBuffer make_replay_buffer(std::size_t capacity) {
  if (capacity < 1)
    throw std::invalid_argument("make_replay_buffer: capacity >= 1");
  ReplayBuffer buffer;
  buffer.capacity = capacity;
  return buffer;
}

void collect(ReplayBuffer& buffer, const std::vector<Solution>& rollout_order) {
  for (const Solution& sol : rollout_order) {
    if (sol.reward != 1) continue;
    Solution stored = sol;
    stored.seq_no = buffer.next_seq++;
    std::deque<Solution>& dq = buffer.buffers[sol.problem_id];
    dq.push_back(std::move(stored));
    while (dq.size() > buffer.capacity) dq.pop_front();
  }
}

void collect(ReplayBuffer& buffer, const std::vector<RolloutGroup>& groups) {
  for (const RolloutGroup& group : groups) collect(buffer, group.solutions);
}

namespace {

// Canonical dataset order; ties are content-identical for training purposes
// (sft_update reads only problem ids and tokens), so any stable resolution
// gives the same trained policy.
void canonical_sort(std::vector<Solution>& dataset) {
  std::sort(dataset.begin(), dataset.end(),
            [](const Solution& a, const Solution& b) {
              if (a.problem_id != b.problem_id) return a.problem_id < b.problem_id;
              if (a.seq_no != b.seq_no) return a.seq_no < b.seq_no;
              return a.tokens < b.tokens;
            });
}

}  // namespace

TabularPolicy distill_dataset(const TabularPolicy& base,
                              std::vector<Solution> dataset,
                              const DistillConfig& config,
                              const std::string& phase_label) {
  if (dataset.empty())
    throw std::invalid_argument(phase_label + ": empty dataset");
  canonical_sort(dataset);
  std::mt19937_64 rng = make_rng(config.shuffle_seed, {fnv1a64(phase_label)});
  std::shuffle(dataset.begin(), dataset.end(), rng);
  TabularPolicy policy = base;
  sft_update(policy, dataset, config.learning_rate, config.epochs);
  return policy;
}

std::vector<Solution> union_solutions(const ReplayBuffer& buffer) {
  std::vector<Solution> all;
  all.reserve(buffer.total_size());
  for (const auto& [id, dq] : buffer.buffers) {
    (void)id;
    all.insert(all.end(), dq.begin(), dq.end());
  }
  canonical_sort(all);
  return all;
}

TabularPolicy redistill(const TabularPolicy& base, const ReplayBuffer& buffer,
                        const DistillConfig& config) {
  if (buffer.all_empty())
    throw std::invalid_argument("redistill: all replay buffers are empty");
  return distill_dataset(base, union_solutions(buffer), config, "redistill");
}

TabularPolicy merge_runs(const TabularPolicy& shared_base,
                         const std::vector<ReplayBuffer>& runs,
                         const DistillConfig& config) {
  if (runs.empty()) throw std::invalid_argument("merge_runs: no runs");
  std::vector<Solution> combined;
  for (const ReplayBuffer& run : runs) {
    std::vector<Solution> part = union_solutions(run);
    combined.insert(combined.end(), part.begin(), part.end());
  }
  if (combined.empty())
    throw std::invalid_argument("merge_runs: all replay buffers are empty");
  return distill_dataset(shared_base, std::move(combined), config, "redistill");
}

TabularPolicy train_target_policy(const TabularPolicy& initial_policy,
                                  const std::vector<Solution>& sft_solutions,
                                  const std::vector<Solution>& replay_solutions,
                                  const DistillConfig& sft_phase,
                                  const DistillConfig& replay_phase) {
  if (sft_solutions.empty())
    throw std::invalid_argument("train_target_policy: empty SFT set");
  TabularPolicy policy =
      distill_dataset(initial_policy, sft_solutions, sft_phase, "target-sft");
  if (!replay_solutions.empty())
    policy = distill_dataset(policy, replay_solutions, replay_phase, "target-replay");
  return policy;
}

}  // namespace poolrl
