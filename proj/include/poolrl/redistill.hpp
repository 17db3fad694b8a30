#pragma once
// Re-distillation: per-problem ring buffers of recent correct RL solutions,
// SFT-based compression of RL gains onto a base policy, merging of
// independent runs through buffer concatenation, and the final target-policy
// retrain (solutions first, replay second, both from the initial policy).

#include <cstdint>
#include <deque>
#include <map>
#include <vector>

#include "poolrl/grpo.hpp"

namespace poolrl {

struct ReplayBuffer {
  std::size_t capacity = 100;
  std::map<ProblemId, std::deque<Solution>> buffers;
  std::int64_t next_seq = 0; // stamped onto stored solutions in arrival order

  bool all_empty() const;
  std::size_t total_size() const;
};

ReplayBuffer make_replay_buffer(std::size_t capacity = 100);

// Appends every reward=1 solution in rollout order to its problem's buffer,
// evicting oldest-first beyond capacity. Incorrect solutions are skipped.
void collect(ReplayBuffer& buffer, const std::vector<Solution>& rollout_order);
void collect(ReplayBuffer& buffer, const std::vector<RolloutGroup>& groups);

struct DistillConfig {
  double learning_rate = 0.3;
  int epochs = 4;
  std::uint64_t shuffle_seed = 7; // training-order shuffle, applied once
};

// Union of all buffer contents in a canonical order (problem id, then arrival
// sequence number, then tokens); this is the dataset redistill trains on
// before its seeded shuffle, and what `redistill export` dumps.
std::vector<Solution> union_solutions(const ReplayBuffer& buffer);

// One SFT phase over an explicit dataset: canonical order, then a shuffle
// seeded by (config.shuffle_seed, phase_label), then sft_update. Every
// distillation entry point below is built on this.
TabularPolicy distill_dataset(const TabularPolicy& base,
                              std::vector<Solution> dataset,
                              const DistillConfig& config,
                              const std::string& phase_label);

// SFT of `base` on the union of buffer solutions. Throws when every buffer is
// empty. The training order is the canonical order above permuted by a
// generator seeded only with config.shuffle_seed, so the result depends on
// buffer *contents*, not on how the union was assembled.
TabularPolicy redistill(const TabularPolicy& base, const ReplayBuffer& buffer,
                        const DistillConfig& config);

// Single redistill over the concatenation of all runs' buffers (nothing is
// re-evicted at merge time; capacity applies within each run's collection).
// With a fixed shuffle seed the result is bitwise independent of run order.
TabularPolicy merge_runs(const TabularPolicy& shared_base,
                         const std::vector<ReplayBuffer>& runs,
                         const DistillConfig& config);

// Final retrain from the initial policy: one SFT phase over the collected
// reference solutions, then one over the replay solutions. The SFT set must
// be nonempty; an empty replay set degenerates to the first phase alone.
TabularPolicy train_target_policy(const TabularPolicy& initial_policy,
                                  const std::vector<Solution>& sft_solutions,
                                  const std::vector<Solution>& replay_solutions,
                                  const DistillConfig& sft_phase,
                                  const DistillConfig& replay_phase);

}  // namespace poolrl
