#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "poolrl/pipeline.hpp"

using namespace poolrl;
namespace fs = std::filesystem;

namespace {

ProblemSuite tiny_suite() {
  ProblemSuite suite;
  for (ProblemSpec spec : {make_bandit("easy0", 4, 1), make_bandit("easy1", 8, 2),
                           make_bandit("easy2", 8, 5), make_bandit("hard0", 32, 7)})
    suite.emplace(spec.id, spec);
  ProblemSpec seq = make_sequence("seq0", 3, 2, {{0, 1}});
  suite.emplace(seq.id, seq);
  return suite;
}

PipelineConfig tiny_config() {
  PipelineConfig c;
  c.group_size = 2;
  c.n_ladder = {4, 8};
  c.steps_per_cycle = 6;
  c.plateau_window = 4;
  c.rollout_budget_per_problem = 512;
  c.max_iterations = 2;
  c.warmup_sft = {0.5, 4};
  c.seed = 11;
  return c;
}

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("poolrl_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Solution make_solution() {
  Solution s;
  s.problem_id = "p";
  s.tokens = {0, 2, 1};
  s.logprob_rollout = {-1.0986122886681098, -0.1, -2.3e-5};
  s.logprob_train = {-1.2, -0.25, -3.7e-9};
  s.reward = 1;
  s.seq_no = 42;
  return s;
}

}  // namespace

TEST_CASE("problems, solutions, and policies survive json round-trips") {
  ProblemSpec bandit = make_bandit("b", 5, 3);
  CHECK(problem_to_json(problem_from_json(problem_to_json(bandit))) ==
        problem_to_json(bandit));
  ProblemSpec seq = make_sequence("s", 3, 2, {{0, 1}, {2, 2}});
  Json js = problem_to_json(seq);
  CHECK(problem_to_json(problem_from_json(js)) == js);
  // text round-trip preserves doubles exactly
  CHECK(Json::parse(js.dump()) == js);

  Solution sol = make_solution();
  Solution rt = solution_from_json(solution_to_json(sol));
  CHECK(rt.problem_id == sol.problem_id);
  CHECK(rt.tokens == sol.tokens);
  CHECK(rt.logprob_rollout == sol.logprob_rollout);
  CHECK(rt.logprob_train == sol.logprob_train);
  CHECK(rt.reward == sol.reward);
  CHECK(rt.seq_no == sol.seq_no);

  TabularPolicy policy = make_uniform_policy({bandit, seq}, 1.0);
  std::get<Eigen::VectorXd>(policy.tables.at("b")) << 0.1, -1.0 / 3.0, 2.5e-9,
      -0.7, 1.0;
  // touch a couple of sequence nodes so the sparse table is non-trivial
  Solution node_touch;
  node_touch.problem_id = "s";
  node_touch.tokens = {0, 1};
  node_touch.reward = 1;
  sft_update(policy, {node_touch}, 0.37, 2);
  Json jp = policy_to_json(policy);
  CHECK(policy_to_json(policy_from_json(jp)) == jp);
  CHECK(Json::parse(jp.dump()) == jp);

  ProblemSuite suite = tiny_suite();
  CHECK(suite_to_json(suite_from_json(suite_to_json(suite))) ==
        suite_to_json(suite));
}

TEST_CASE("pool state and replay buffers survive json round-trips") {
  PoolState pools = make_pool_state({"a", "b", "c"}, 1000);
  PoolEvent measured;
  measured.kind = PoolEvent::Kind::accuracy_measured;
  measured.problem = "a";
  measured.p_hat = 0.5;
  measured.samples = 20;
  pools = apply_event(std::move(pools), measured);
  PoolEvent added;
  added.kind = PoolEvent::Kind::solutions_added;
  added.problem = "b";
  added.count = 3;
  pools = apply_event(std::move(pools), added);
  PoolEvent success;
  success.kind = PoolEvent::Kind::rl_group_succeeded;
  success.group_id = 4;
  success.members = {"a"};
  success.member_p_hats = {0.9};
  success.per_member_rollouts = 128;
  pools = apply_event(std::move(pools), success);

  Json j = pool_state_to_json(pools);
  PoolState rt = pool_state_from_json(j);
  CHECK(pool_state_to_json(rt) == j);
  CHECK(rt.log.size() == 3);
  CHECK(rt.log[2].kind == PoolEvent::Kind::rl_group_succeeded);
  CHECK(rt.problems.at("a").pool == Pool::Solved);
  CHECK(rt.problems.at("a").budget_spent == 128);
  CHECK(rt.problems.at("b").solutions_collected == 3);

  ReplayBuffer buffer = make_replay_buffer(3);
  for (int i = 0; i < 4; ++i) {
    Solution s = make_solution();
    s.tokens = {i};
    collect(buffer, {s});
  }
  Json jb = replay_to_json(buffer);
  ReplayBuffer brt = replay_from_json(jb);
  CHECK(replay_to_json(brt) == jb);
  CHECK(brt.capacity == 3);
  CHECK(brt.next_seq == 4);
  CHECK(brt.buffers.at("p").front().seq_no == 1);
}

TEST_CASE("config round-trip is exact and hashing tracks content") {
  PipelineConfig c = tiny_config();
  c.optimizer = OptimizerState::Kind::adam;
  c.eps_is = kNoIsClip; // +inf upper clip: encoded symbolically
  c.perturbation = {EnginePerturbation::Kind::logit_quantization, 0.125};
  c.invert_n_ladder = true;
  c.max_doublings = 3;
  c.redistill_base = PipelineConfig::RedistillBase::previous;

  PipelineConfig rt = config_from_json(config_to_json(c));
  CHECK(config_to_json(rt) == config_to_json(c));
  CHECK(std::isinf(rt.eps_is));
  CHECK(rt.optimizer == OptimizerState::Kind::adam);
  CHECK(rt.perturbation.kind == EnginePerturbation::Kind::logit_quantization);
  CHECK(rt.n_ladder == c.n_ladder);
  CHECK(config_hash(rt) == config_hash(c));

  PipelineConfig other = c;
  other.eta = 0.5;
  CHECK(config_hash(other) != config_hash(c));
  // defaults fill in for missing keys
  PipelineConfig from_empty = config_from_json(Json::object());
  CHECK(config_to_json(from_empty) == config_to_json(PipelineConfig{}));

  StepMetrics m{7, "it0/group:2", 16, 0.5, 0.25, 1.0 + 1e-12, 0.0625, 3.91e-3};
  StepMetrics mrt = metrics_from_json(metrics_to_json(m));
  CHECK(metrics_to_json(mrt) == metrics_to_json(m));
}

TEST_CASE("full runs are byte-identical across repeats") {
  ProblemSuite suite = tiny_suite();
  PipelineConfig config = tiny_config();
  FinalReport r1 = run_pipeline(suite, config);
  FinalReport r2 = run_pipeline(suite, config);
  CHECK(report_to_string(r1) == report_to_string(r2));
  CHECK(r1.schema_version == kSchemaVersion);
  CHECK(r1.config_hash == config_hash(config));
  CHECK(r1.iterations.size() <= 2);
  REQUIRE(!r1.step_log.empty()); // RL actually ran
  // report json survives a text round-trip
  Json j = report_to_json(r1);
  CHECK(report_to_json(report_from_json(Json::parse(report_to_string(r1)))) == j);

  CHECK_THROWS_AS(make_pipeline_state({}, config), std::invalid_argument);
}

TEST_CASE("reported rollouts reconcile with the per-step log") {
  ProblemSuite suite = tiny_suite();
  PipelineConfig config = tiny_config();
  FinalReport report = run_pipeline(suite, config);

  long long total = 0;
  for (const IterationReport& it : report.iterations) {
    long long iteration_total = 0;
    for (const GroupReport& group : it.groups) {
      const std::string label = "it" + std::to_string(it.iteration) +
                                "/group:" + std::to_string(group.group_id);
      long long from_log = 0;
      long long steps = 0;
      for (const StepMetrics& m : report.step_log) {
        if (m.label != label) continue;
        from_log += static_cast<long long>(m.n) *
                    static_cast<long long>(group.members.size());
        steps += 1;
      }
      CHECK(from_log == group.rollouts);
      CHECK(steps == group.steps);
      iteration_total += group.rollouts;
    }
    CHECK(iteration_total == it.rl_rollouts);
    total += it.rl_rollouts;
  }
  CHECK(total == report.total_rl_rollouts);
  // every step the log knows about belongs to some reported group
  for (const StepMetrics& m : report.step_log)
    CHECK(m.label.rfind("it", 0) == 0);
}

TEST_CASE("checkpointed runs resume to the identical report") {
  ProblemSuite suite = tiny_suite();
  PipelineConfig config = tiny_config();
  FinalReport straight = run_pipeline(suite, config);

  fs::path dir = fresh_dir("ckpt");
  fs::path file = dir / "state.json";

  // drive the first two stages manually, checkpoint, reload, and finish
  PipelineState state = make_pipeline_state(suite, config);
  pipeline_step(state, suite, config);
  pipeline_step(state, suite, config);
  save_checkpoint(state, file);
  PipelineState resumed = load_checkpoint(file);
  CHECK(pipeline_state_to_json(resumed) == pipeline_state_to_json(state));
  while (resumed.phase != PipelinePhase::done)
    pipeline_step(resumed, suite, config);
  CHECK(report_to_string(resumed.report) == report_to_string(straight));

  // run_pipeline picks the checkpoint up and lands on the same report
  save_checkpoint(state, file);
  FinalReport from_ckpt = run_pipeline(suite, config, file);
  CHECK(report_to_string(from_ckpt) == report_to_string(straight));

  // a different config refuses someone else's checkpoint
  save_checkpoint(state, file);
  PipelineConfig other = config;
  other.eta = 0.25;
  CHECK_THROWS_AS(run_pipeline(suite, other, file), std::runtime_error);
}

TEST_CASE("run outputs land on disk and rewriting them is safe") {
  ProblemSuite suite = tiny_suite();
  PipelineConfig config = tiny_config();
  FinalReport report = run_pipeline(suite, config);

  fs::path dir = fresh_dir("outputs");
  write_run_outputs(report, dir);
  for (const char* name : {"report.json", "metrics.jsonl", "pool_counts.csv",
                           "group_rewards.csv", "groups.csv", "summary.txt"})
    CHECK(fs::exists(dir / name));

  std::ifstream in(dir / "report.json");
  Json loaded = Json::parse(in);
  CHECK(loaded == report_to_json(report));

  long long lines = 0;
  std::ifstream metrics(dir / "metrics.jsonl");
  for (std::string line; std::getline(metrics, line);)
    if (!line.empty()) lines += 1;
  CHECK(lines == static_cast<long long>(report.step_log.size()));

  write_run_outputs(report, dir); // idempotent
  std::ifstream again(dir / "report.json");
  CHECK(Json::parse(again) == report_to_json(report));
  fs::remove_all(dir);
}
