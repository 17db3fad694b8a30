#include "poolrl/pipeline.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <type_traits>

#include "poolrl/csv.hpp"
#include "poolrl/rng.hpp"

namespace poolrl {

namespace {

Json vec_to_json(const Eigen::VectorXd& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Eigen::VectorXd vec_from_json(const Json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i)
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

Json tokens_to_json(const TokenSeq& tokens) {
  Json a = Json::array();
  for (int t : tokens) a.push_back(t);
  return a;
}

TokenSeq tokens_from_json(const Json& j) {
  TokenSeq tokens;
  tokens.reserve(j.size());
  for (const Json& t : j) tokens.push_back(t.get<int>());
  return tokens;
}

Pool pool_from_name(const std::string& name) {
  for (Pool p : {Pool::Unsolvable, Pool::Solvable, Pool::Solved, Pool::Failed})
    if (name == pool_name(p)) return p;
  throw std::invalid_argument("unknown pool name '" + name + "'");
}

PoolEvent::Kind event_kind_from_name(const std::string& name) {
  for (PoolEvent::Kind k :
       {PoolEvent::Kind::accuracy_measured, PoolEvent::Kind::solutions_added,
        PoolEvent::Kind::rl_group_succeeded,
        PoolEvent::Kind::rl_group_failed_budget_left,
        PoolEvent::Kind::rl_group_failed_budget_exhausted})
    if (name == event_kind_name(k)) return k;
  throw std::invalid_argument("unknown pool event kind '" + name + "'");
}

const char* perturbation_kind_name(EnginePerturbation::Kind kind) {
  switch (kind) {
    case EnginePerturbation::Kind::none: return "none";
    case EnginePerturbation::Kind::temperature_scale: return "temperature_scale";
    case EnginePerturbation::Kind::logit_quantization: return "logit_quantization";
    case EnginePerturbation::Kind::additive_logit_noise:
      return "additive_logit_noise";
  }
  return "?";
}

EnginePerturbation::Kind perturbation_kind_from_name(const std::string& name) {
  for (EnginePerturbation::Kind k :
       {EnginePerturbation::Kind::none, EnginePerturbation::Kind::temperature_scale,
        EnginePerturbation::Kind::logit_quantization,
        EnginePerturbation::Kind::additive_logit_noise})
    if (name == perturbation_kind_name(k)) return k;
  throw std::invalid_argument("unknown perturbation kind '" + name + "'");
}

Json sft_stage_to_json(const SftStageConfig& c) {
  return Json{{"learning_rate", c.learning_rate}, {"epochs", c.epochs}};
}

SftStageConfig sft_stage_from_json(const Json& j, const SftStageConfig& dflt) {
  SftStageConfig c;
  c.learning_rate = j.value("learning_rate", dflt.learning_rate);
  c.epochs = j.value("epochs", dflt.epochs);
  return c;
}

}  // namespace

Json policy_to_json(const TabularPolicy& policy) {
  Json tables = Json::object();
  for (const auto& [id, table] : policy.tables) {
    if (const auto* logits = std::get_if<Eigen::VectorXd>(&table)) {
      tables[id] = Json{{"kind", "bandit"}, {"logits", vec_to_json(*logits)}};
    } else {
      const SeqTable& seq = std::get<SeqTable>(table);
      Json nodes = Json::array();
      for (const auto& [key, logits] : seq.nodes)
        nodes.push_back(Json::array({key, vec_to_json(logits)}));
      tables[id] = Json{{"kind", "sequence"},
                        {"vocab", seq.vocab},
                        {"length", seq.length},
                        {"nodes", std::move(nodes)}};
    }
  }
  return Json{{"temperature", policy.temperature}, {"tables", std::move(tables)}};
}

TabularPolicy policy_from_json(const Json& j) {
  TabularPolicy policy;
  policy.temperature = j.at("temperature").get<double>();
  for (const auto& [id, tj] : j.at("tables").items()) {
    if (tj.at("kind") == "bandit") {
      policy.tables[id] = vec_from_json(tj.at("logits"));
    } else {
      SeqTable seq;
      seq.vocab = tj.at("vocab").get<int>();
      seq.length = tj.at("length").get<int>();
      for (const Json& node : tj.at("nodes"))
        seq.nodes[node[0].get<std::uint64_t>()] = vec_from_json(node[1]);
      policy.tables[id] = std::move(seq);
    }
  }
  return policy;
}

Json problem_to_json(const ProblemSpec& spec) {
  if (spec.is_bandit()) {
    return Json{{"id", spec.id},
                {"kind", "bandit"},
                {"arms", spec.bandit().arm_count},
                {"correct_arm", spec.bandit().correct_arm}};
  }
  const SequenceProblem& seq = spec.sequence();
  Json correct = Json::array();
  for (const TokenSeq& tokens : seq.correct_set)
    correct.push_back(tokens_to_json(tokens));
  return Json{{"id", spec.id},
              {"kind", "sequence"},
              {"vocab", seq.vocab_size},
              {"length", seq.length},
              {"correct", std::move(correct)}};
}

ProblemSpec problem_from_json(const Json& j) {
  const std::string id = j.at("id").get<std::string>();
  if (j.at("kind") == "bandit")
    return make_bandit(id, j.at("arms").get<int>(), j.at("correct_arm").get<int>());
  std::vector<TokenSeq> correct;
  for (const Json& tokens : j.at("correct")) correct.push_back(tokens_from_json(tokens));
  return make_sequence(id, j.at("vocab").get<int>(), j.at("length").get<int>(),
                       std::move(correct));
}

Json suite_to_json(const ProblemSuite& suite) {
  Json a = Json::array();
  for (const auto& [id, spec] : suite) {
    (void)id;
    a.push_back(problem_to_json(spec));
  }
  return a;
}

ProblemSuite suite_from_json(const Json& j) {
  ProblemSuite suite;
  for (const Json& pj : j) {
    ProblemSpec spec = problem_from_json(pj);
    if (!suite.emplace(spec.id, spec).second)
      throw std::invalid_argument("duplicate problem id '" + spec.id + "'");
  }
  return suite;
}

Json solution_to_json(const Solution& solution) {
  Json lp_rollout = Json::array(), lp_train = Json::array();
  for (double v : solution.logprob_rollout) lp_rollout.push_back(v);
  for (double v : solution.logprob_train) lp_train.push_back(v);
  return Json{{"problem_id", solution.problem_id},
              {"tokens", tokens_to_json(solution.tokens)},
              {"logprob_rollout", std::move(lp_rollout)},
              {"logprob_train", std::move(lp_train)},
              {"reward", solution.reward},
              {"seq_no", solution.seq_no}};
}

Solution solution_from_json(const Json& j) {
  Solution s;
  s.problem_id = j.at("problem_id").get<std::string>();
  s.tokens = tokens_from_json(j.at("tokens"));
  for (const Json& v : j.at("logprob_rollout"))
    s.logprob_rollout.push_back(v.get<double>());
  for (const Json& v : j.at("logprob_train"))
    s.logprob_train.push_back(v.get<double>());
  s.reward = j.at("reward").get<int>();
  s.seq_no = j.at("seq_no").get<std::int64_t>();
  return s;
}

Json pool_state_to_json(const PoolState& state) {
  Json problems = Json::object();
  for (const auto& [id, rec] : state.problems) {
    Json rj{{"pool", pool_name(rec.pool)},
            {"p_hat", rec.p_hat},
            {"sample_count", rec.sample_count},
            {"solutions_collected", rec.solutions_collected},
            {"budget_spent", rec.budget_spent},
            {"budget_limit", rec.budget_limit}};
    rj["group_id"] = rec.group_id ? Json(*rec.group_id) : Json(nullptr);
    problems[id] = std::move(rj);
  }
  Json log = Json::array();
  for (const PoolEvent& event : state.log) {
    Json members = Json::array(), phats = Json::array();
    for (const ProblemId& id : event.members) members.push_back(id);
    for (double p : event.member_p_hats) phats.push_back(p);
    log.push_back(Json{{"kind", event_kind_name(event.kind)},
                       {"problem", event.problem},
                       {"p_hat", event.p_hat},
                       {"samples", event.samples},
                       {"count", event.count},
                       {"group_id", event.group_id},
                       {"members", std::move(members)},
                       {"member_p_hats", std::move(phats)},
                       {"per_member_rollouts", event.per_member_rollouts}});
  }
  return Json{{"tau_sft", state.tau_sft},
              {"tau_rl", state.tau_rl},
              {"problems", std::move(problems)},
              {"log", std::move(log)}};
}

PoolState pool_state_from_json(const Json& j) {
  PoolState state;
  state.tau_sft = j.at("tau_sft").get<double>();
  state.tau_rl = j.at("tau_rl").get<double>();
  for (const auto& [id, rj] : j.at("problems").items()) {
    ProblemRecord rec;
    rec.pool = pool_from_name(rj.at("pool").get<std::string>());
    rec.p_hat = rj.at("p_hat").get<double>();
    rec.sample_count = rj.at("sample_count").get<int>();
    rec.solutions_collected = rj.at("solutions_collected").get<long long>();
    rec.budget_spent = rj.at("budget_spent").get<long long>();
    rec.budget_limit = rj.at("budget_limit").get<long long>();
    if (!rj.at("group_id").is_null()) rec.group_id = rj.at("group_id").get<int>();
    state.problems.emplace(id, std::move(rec));
  }
  for (const Json& ej : j.at("log")) {
    PoolEvent event;
    event.kind = event_kind_from_name(ej.at("kind").get<std::string>());
    event.problem = ej.at("problem").get<std::string>();
    event.p_hat = ej.at("p_hat").get<double>();
    event.samples = ej.at("samples").get<int>();
    event.count = ej.at("count").get<long long>();
    event.group_id = ej.at("group_id").get<int>();
    for (const Json& id : ej.at("members"))
      event.members.push_back(id.get<std::string>());
    for (const Json& p : ej.at("member_p_hats"))
      event.member_p_hats.push_back(p.get<double>());
    event.per_member_rollouts = ej.at("per_member_rollouts").get<long long>();
    state.log.push_back(std::move(event));
  }
  return state;
}

Json replay_to_json(const ReplayBuffer& buffer) {
  Json buffers = Json::object();
  for (const auto& [id, dq] : buffer.buffers) {
    Json a = Json::array();
    for (const Solution& s : dq) a.push_back(solution_to_json(s));
    buffers[id] = std::move(a);
  }
  return Json{{"capacity", buffer.capacity},
              {"next_seq", buffer.next_seq},
              {"buffers", std::move(buffers)}};
}

ReplayBuffer replay_from_json(const Json& j) {
  ReplayBuffer buffer;
  buffer.capacity = j.at("capacity").get<std::size_t>();
  buffer.next_seq = j.at("next_seq").get<std::int64_t>();
  for (const auto& [id, a] : j.at("buffers").items()) {
    std::deque<Solution>& dq = buffer.buffers[id];
    for (const Json& sj : a) dq.push_back(solution_from_json(sj));
  }
  return buffer;
}

Json config_to_json(const PipelineConfig& config) {
  Json ladder = Json::array();
  for (int n : config.n_ladder) ladder.push_back(n);
  Json j{
      {"tau_sft", config.tau_sft},
      {"tau_rl", config.tau_rl},
      {"group_size", config.group_size},
      {"n_ladder", std::move(ladder)},
      {"invert_n_ladder", config.invert_n_ladder},
      {"eta", config.eta},
      {"optimizer", config.optimizer == OptimizerState::Kind::sgd ? "sgd" : "adam"},
      {"eps_is",
       std::isinf(config.eps_is) ? Json("inf") : Json(config.eps_is)},
      {"perturbation",
       Json{{"kind", perturbation_kind_name(config.perturbation.kind)},
            {"magnitude", config.perturbation.magnitude}}},
      {"steps_per_cycle", config.steps_per_cycle},
      {"plateau_window", config.plateau_window},
      {"plateau_slope", config.plateau_slope},
      {"rollout_budget_per_problem", config.rollout_budget_per_problem},
      {"max_doublings", config.max_doublings},
      {"accuracy_samples", config.accuracy_samples},
      {"exact_accuracy_eval", config.exact_accuracy_eval},
      {"warmup_solutions_per_problem", config.warmup_solutions_per_problem},
      {"warmup_sft", sft_stage_to_json(config.warmup_sft)},
      {"iteration_sft", sft_stage_to_json(config.iteration_sft)},
      {"redistill_sft", sft_stage_to_json(config.redistill_sft)},
      {"target_sft", sft_stage_to_json(config.target_sft)},
      {"target_replay", sft_stage_to_json(config.target_replay)},
      {"redistill_base",
       config.redistill_base == PipelineConfig::RedistillBase::initial
           ? "initial"
           : "previous"},
      {"replay_capacity", config.replay_capacity},
      {"shuffle_seed", config.shuffle_seed},
      {"max_iterations", config.max_iterations},
      {"temperature", config.temperature},
      {"seed", config.seed},
      {"eval_samples", config.eval_samples},
  };
  return j;
}

PipelineConfig config_from_json(const Json& j) {
  PipelineConfig d; // defaults
  PipelineConfig c;
  c.tau_sft = j.value("tau_sft", d.tau_sft);
  c.tau_rl = j.value("tau_rl", d.tau_rl);
  c.group_size = j.value("group_size", d.group_size);
  if (j.contains("n_ladder")) {
    c.n_ladder.clear();
    for (const Json& n : j.at("n_ladder")) c.n_ladder.push_back(n.get<int>());
  }
  c.invert_n_ladder = j.value("invert_n_ladder", d.invert_n_ladder);
  c.eta = j.value("eta", d.eta);
  if (j.contains("optimizer")) {
    const std::string name = j.at("optimizer").get<std::string>();
    if (name == "sgd") c.optimizer = OptimizerState::Kind::sgd;
    else if (name == "adam") c.optimizer = OptimizerState::Kind::adam;
    else throw std::invalid_argument("unknown optimizer '" + name + "'");
  }
  if (j.contains("eps_is")) {
    const Json& e = j.at("eps_is");
    c.eps_is = e.is_string() ? kNoIsClip : e.get<double>();
  }
  if (j.contains("perturbation")) {
    const Json& p = j.at("perturbation");
    c.perturbation.kind =
        perturbation_kind_from_name(p.value("kind", std::string("none")));
    c.perturbation.magnitude = p.value("magnitude", 0.0);
  }
  c.steps_per_cycle = j.value("steps_per_cycle", d.steps_per_cycle);
  c.plateau_window = j.value("plateau_window", d.plateau_window);
  c.plateau_slope = j.value("plateau_slope", d.plateau_slope);
  c.rollout_budget_per_problem =
      j.value("rollout_budget_per_problem", d.rollout_budget_per_problem);
  c.max_doublings = j.value("max_doublings", d.max_doublings);
  c.accuracy_samples = j.value("accuracy_samples", d.accuracy_samples);
  c.exact_accuracy_eval = j.value("exact_accuracy_eval", d.exact_accuracy_eval);
  c.warmup_solutions_per_problem =
      j.value("warmup_solutions_per_problem", d.warmup_solutions_per_problem);
  if (j.contains("warmup_sft"))
    c.warmup_sft = sft_stage_from_json(j.at("warmup_sft"), d.warmup_sft);
  if (j.contains("iteration_sft"))
    c.iteration_sft = sft_stage_from_json(j.at("iteration_sft"), d.iteration_sft);
  if (j.contains("redistill_sft"))
    c.redistill_sft = sft_stage_from_json(j.at("redistill_sft"), d.redistill_sft);
  if (j.contains("target_sft"))
    c.target_sft = sft_stage_from_json(j.at("target_sft"), d.target_sft);
  if (j.contains("target_replay"))
    c.target_replay = sft_stage_from_json(j.at("target_replay"), d.target_replay);
  if (j.contains("redistill_base")) {
    const std::string name = j.at("redistill_base").get<std::string>();
    if (name == "initial")
      c.redistill_base = PipelineConfig::RedistillBase::initial;
    else if (name == "previous")
      c.redistill_base = PipelineConfig::RedistillBase::previous;
    else
      throw std::invalid_argument("unknown redistill_base '" + name + "'");
  }
  c.replay_capacity = j.value("replay_capacity", d.replay_capacity);
  c.shuffle_seed = j.value("shuffle_seed", d.shuffle_seed);
  c.max_iterations = j.value("max_iterations", d.max_iterations);
  c.temperature = j.value("temperature", d.temperature);
  c.seed = j.value("seed", d.seed);
  c.eval_samples = j.value("eval_samples", d.eval_samples);
  return c;
}

Json metrics_to_json(const StepMetrics& metrics) {
  return Json{{"step", metrics.step},
              {"label", metrics.label},
              {"n", metrics.n},
              {"mean_reward", metrics.mean_reward},
              {"zero_var_fraction", metrics.zero_var_fraction},
              {"mean_is_ratio", metrics.mean_is_ratio},
              {"clip_fraction", metrics.clip_fraction},
              {"grad_norm", metrics.grad_norm}};
}

StepMetrics metrics_from_json(const Json& j) {
  StepMetrics m;
  m.step = j.at("step").get<long>();
  m.label = j.at("label").get<std::string>();
  m.n = j.at("n").get<int>();
  m.mean_reward = j.at("mean_reward").get<double>();
  m.zero_var_fraction = j.at("zero_var_fraction").get<double>();
  m.mean_is_ratio = j.at("mean_is_ratio").get<double>();
  m.clip_fraction = j.at("clip_fraction").get<double>();
  m.grad_norm = j.at("grad_norm").get<double>();
  return m;
}

std::string config_hash(const PipelineConfig& config) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(config_to_json(config).dump())));
  return buf;
}

namespace {

Json counts_to_json(const std::array<int, 4>& counts) {
  return Json{{"unsolvable", counts[0]},
              {"solvable", counts[1]},
              {"solved", counts[2]},
              {"failed", counts[3]}};
}

std::array<int, 4> counts_from_json(const Json& j) {
  return {j.at("unsolvable").get<int>(), j.at("solvable").get<int>(),
          j.at("solved").get<int>(), j.at("failed").get<int>()};
}

Json accuracy_map_to_json(const std::map<ProblemId, double>& m) {
  Json j = Json::object();
  for (const auto& [id, p] : m) j[id] = p;
  return j;
}

std::map<ProblemId, double> accuracy_map_from_json(const Json& j) {
  std::map<ProblemId, double> m;
  for (const auto& [id, p] : j.items()) m[id] = p.get<double>();
  return m;
}

}  // namespace

Json report_to_json(const FinalReport& report) {
  Json iterations = Json::array();
  for (const IterationReport& it : report.iterations) {
    Json groups = Json::array();
    for (const GroupReport& g : it.groups) {
      Json members = Json::array(), ns = Json::array();
      for (const ProblemId& id : g.members) members.push_back(id);
      for (int n : g.n_history) ns.push_back(n);
      groups.push_back(Json{{"group_id", g.group_id},
                            {"members", std::move(members)},
                            {"n_history", std::move(ns)},
                            {"steps", g.steps},
                            {"rollouts", g.rollouts},
                            {"succeeded", g.succeeded}});
    }
    iterations.push_back(Json{{"iteration", it.iteration},
                              {"solutions_added", it.solutions_added},
                              {"counts_after_sft", counts_to_json(it.counts_after_sft)},
                              {"counts_after_rl", counts_to_json(it.counts_after_rl)},
                              {"rl_rollouts", it.rl_rollouts},
                              {"groups", std::move(groups)}});
  }
  Json steps = Json::array();
  for (const StepMetrics& m : report.step_log) steps.push_back(metrics_to_json(m));
  Json pool_means = Json::array();
  for (double v : report.final_pool_mean_accuracy) pool_means.push_back(v);
  return Json{{"schema_version", report.schema_version},
              {"seed", report.seed},
              {"config_hash", report.config_hash},
              {"warmup_counts", counts_to_json(report.warmup_counts)},
              {"warmup_accuracy", accuracy_map_to_json(report.warmup_accuracy)},
              {"iterations", std::move(iterations)},
              {"total_rl_rollouts", report.total_rl_rollouts},
              {"final_counts", counts_to_json(report.final_counts)},
              {"final_accuracy", accuracy_map_to_json(report.final_accuracy)},
              {"final_pool_mean_accuracy", std::move(pool_means)},
              {"step_log", std::move(steps)}};
}

FinalReport report_from_json(const Json& j) {
  FinalReport report;
  report.schema_version = j.at("schema_version").get<int>();
  report.seed = j.at("seed").get<std::uint64_t>();
  report.config_hash = j.at("config_hash").get<std::string>();
  report.warmup_counts = counts_from_json(j.at("warmup_counts"));
  report.warmup_accuracy = accuracy_map_from_json(j.at("warmup_accuracy"));
  for (const Json& ij : j.at("iterations")) {
    IterationReport it;
    it.iteration = ij.at("iteration").get<int>();
    it.solutions_added = ij.at("solutions_added").get<long long>();
    it.counts_after_sft = counts_from_json(ij.at("counts_after_sft"));
    it.counts_after_rl = counts_from_json(ij.at("counts_after_rl"));
    it.rl_rollouts = ij.at("rl_rollouts").get<long long>();
    for (const Json& gj : ij.at("groups")) {
      GroupReport g;
      g.group_id = gj.at("group_id").get<int>();
      for (const Json& id : gj.at("members"))
        g.members.push_back(id.get<std::string>());
      for (const Json& n : gj.at("n_history")) g.n_history.push_back(n.get<int>());
      g.steps = gj.at("steps").get<long long>();
      g.rollouts = gj.at("rollouts").get<long long>();
      g.succeeded = gj.at("succeeded").get<bool>();
      it.groups.push_back(std::move(g));
    }
    report.iterations.push_back(std::move(it));
  }
  report.total_rl_rollouts = j.at("total_rl_rollouts").get<long long>();
  report.final_counts = counts_from_json(j.at("final_counts"));
  report.final_accuracy = accuracy_map_from_json(j.at("final_accuracy"));
  {
    const Json& pm = j.at("final_pool_mean_accuracy");
    for (std::size_t i = 0; i < 4; ++i)
      report.final_pool_mean_accuracy[i] = pm.at(i).get<double>();
  }
  for (const Json& mj : j.at("step_log"))
    report.step_log.push_back(metrics_from_json(mj));
  return report;
}

std::string report_to_string(const FinalReport& report) {
  return report_to_json(report).dump(2) + "\n";
}

const char* phase_name(PipelinePhase phase) {
  switch (phase) {
    case PipelinePhase::warmup: return "warmup";
    case PipelinePhase::iterations: return "iterations";
    case PipelinePhase::target: return "target";
    case PipelinePhase::eval: return "eval";
    case PipelinePhase::done: return "done";
  }
  return "?";
}

namespace {

PipelinePhase phase_from_name(const std::string& name) {
  for (PipelinePhase p :
       {PipelinePhase::warmup, PipelinePhase::iterations, PipelinePhase::target,
        PipelinePhase::eval, PipelinePhase::done})
    if (name == phase_name(p)) return p;
  throw std::invalid_argument("unknown pipeline phase '" + name + "'");
}

const ProblemSpec& suite_spec(const ProblemSuite& suite, const ProblemId& id) {
  auto it = suite.find(id);
  if (it == suite.end())
    throw std::invalid_argument("pipeline: pool references unknown problem '" +
                                id + "'");
  return it->second;
}

std::uint64_t generator_seed(const PipelineConfig& config, const ProblemId& id) {
  return derive_seed(config.seed, {fnv1a64("refgen"), fnv1a64(id)});
}

TokenSeq draw_reference(const ProblemSpec& spec, const PipelineConfig& config,
                        long long& cursor) {
  ReferenceGenerator gen(spec, generator_seed(config, spec.id));
  const std::size_t total = gen.remaining();
  if (total == 0)
    throw std::logic_error("reference generator for '" + spec.id + "' is empty");
  // Distinct solutions until the correct set is exhausted, then recycle.
  gen.skip(static_cast<std::size_t>(cursor % static_cast<long long>(total)));
  std::optional<TokenSeq> tokens = gen.next();
  cursor += 1;
  return *tokens;
}

double measure_accuracy(const TabularPolicy& policy, const ProblemSpec& spec,
                        const PipelineConfig& config, std::mt19937_64 rng) {
  return accuracy_estimate(policy, spec, config.accuracy_samples, rng,
                           config.exact_accuracy_eval)
      .p_hat;
}

bool all_terminal(const PoolState& pools) {
  for (const auto& [id, rec] : pools.problems) {
    (void)id;
    if (rec.pool == Pool::Unsolvable || rec.pool == Pool::Solvable) return false;
  }
  return true;
}

void run_warmup(PipelineState& state, const ProblemSuite& suite,
                const PipelineConfig& config) {
  if (config.warmup_solutions_per_problem > 0) {
    std::vector<Solution> warmup;
    for (const auto& [id, spec] : suite) {
      long long& cursor = state.generator_cursors[id];
      for (int i = 0; i < config.warmup_solutions_per_problem; ++i) {
        Solution s;
        s.problem_id = id;
        s.tokens = draw_reference(spec, config, cursor);
        s.reward = 1;
        s.seq_no = static_cast<std::int64_t>(warmup.size());
        warmup.push_back(std::move(s));
      }
    }
    if (!warmup.empty())
      sft_update(state.policy, warmup, config.warmup_sft.learning_rate,
                 config.warmup_sft.epochs);
  }
  state.initial_policy = state.policy;

  for (const auto& [id, spec] : suite) {
    double p = measure_accuracy(
        state.policy, spec, config,
        make_rng(config.seed, {fnv1a64("warmup-measure"), fnv1a64(id)}));
    PoolEvent event;
    event.kind = PoolEvent::Kind::accuracy_measured;
    event.problem = id;
    event.p_hat = p;
    event.samples = config.accuracy_samples;
    state.pools = apply_event(std::move(state.pools), event);
    state.report.warmup_accuracy[id] = p;
  }
  state.report.warmup_counts = state.pools.counts();
}

void run_target_stage(PipelineState& state, const PipelineConfig& config) {
  const std::vector<Solution> replay_all = union_solutions(state.replay);
  DistillConfig sft_phase{config.target_sft.learning_rate,
                          config.target_sft.epochs, config.shuffle_seed};
  DistillConfig replay_phase{config.target_replay.learning_rate,
                             config.target_replay.epochs, config.shuffle_seed};
  if (state.sft_archive.empty() && replay_all.empty()) {
    state.target_policy = state.initial_policy;
  } else if (state.sft_archive.empty()) {
    state.target_policy = distill_dataset(state.initial_policy, replay_all,
                                          replay_phase, "target-replay");
  } else {
    state.target_policy = train_target_policy(
        state.initial_policy, state.sft_archive, replay_all, sft_phase, replay_phase);
  }
}

void run_final_eval(PipelineState& state, const ProblemSuite& suite,
                    const PipelineConfig& config) {
  std::array<stats::NeumaierSum, 4> sums;
  std::array<int, 4> counts{0, 0, 0, 0};
  for (const auto& [id, spec] : suite) {
    double p = measure_accuracy(
        state.target_policy, spec, config,
        make_rng(config.seed, {fnv1a64("final-eval"), fnv1a64(id)}));
    state.report.final_accuracy[id] = p;
    int pool = static_cast<int>(state.pools.problems.at(id).pool);
    sums[pool].add(p);
    counts[pool] += 1;
  }
  state.report.final_counts = state.pools.counts();
  for (int i = 0; i < 4; ++i)
    state.report.final_pool_mean_accuracy[i] =
        counts[i] > 0 ? sums[i].value() / counts[i] : 0.0;
  long long total = 0;
  for (const IterationReport& it : state.report.iterations) total += it.rl_rollouts;
  state.report.total_rl_rollouts = total;
}

}  // namespace

PipelineState make_pipeline_state(const ProblemSuite& suite,
                                  const PipelineConfig& config) {
  if (suite.empty()) throw std::invalid_argument("pipeline: empty problem suite");
  PipelineState state;
  std::vector<ProblemSpec> specs;
  std::vector<ProblemId> ids;
  for (const auto& [id, spec] : suite) {
    ids.push_back(id);
    specs.push_back(spec);
  }
  state.policy = make_uniform_policy(specs, config.temperature);
  state.initial_policy = state.policy;
  state.target_policy = state.policy;
  state.pools = make_pool_state(ids, config.rollout_budget_per_problem,
                                config.tau_sft, config.tau_rl);
  state.replay = make_replay_buffer(static_cast<std::size_t>(config.replay_capacity));
  state.report.seed = config.seed;
  state.report.config_hash = config_hash(config);
  return state;
}

void run_iteration(PipelineState& state, const ProblemSuite& suite,
                   const PipelineConfig& config) {
  if (state.phase != PipelinePhase::iterations)
    throw std::logic_error("run_iteration: pipeline not in the iteration phase");
  const int k = state.completed_iterations;
  const std::uint64_t uk = static_cast<std::uint64_t>(k);
  IterationReport ir;
  ir.iteration = k;

  // SFT stage: 2^k - 1 fresh reference solutions per Unsolvable problem.
  const long long to_add = solutions_to_add(k);
  if (to_add > 0) {
    std::vector<ProblemId> unsolvable;
    for (const auto& [id, rec] : state.pools.problems)
      if (rec.pool == Pool::Unsolvable) unsolvable.push_back(id);
    std::vector<Solution> fresh;
    for (const ProblemId& id : unsolvable) {
      const ProblemSpec& spec = suite_spec(suite, id);
      long long& cursor = state.generator_cursors[id];
      for (long long i = 0; i < to_add; ++i) {
        Solution s;
        s.problem_id = id;
        s.tokens = draw_reference(spec, config, cursor);
        s.reward = 1;
        s.seq_no =
            static_cast<std::int64_t>(state.sft_archive.size() + fresh.size());
        fresh.push_back(std::move(s));
      }
      PoolEvent event;
      event.kind = PoolEvent::Kind::solutions_added;
      event.problem = id;
      event.count = to_add;
      state.pools = apply_event(std::move(state.pools), event);
    }
    if (!fresh.empty()) {
      sft_update(state.policy, fresh, config.iteration_sft.learning_rate,
                 config.iteration_sft.epochs);
      ir.solutions_added = static_cast<long long>(fresh.size());
      state.sft_archive.insert(state.sft_archive.end(), fresh.begin(), fresh.end());
    }
  }

  // Re-measure everything still live, reclassifying via the event machinery.
  {
    std::vector<ProblemId> live;
    for (const auto& [id, rec] : state.pools.problems)
      if (rec.pool == Pool::Unsolvable || rec.pool == Pool::Solvable)
        live.push_back(id);
    for (const ProblemId& id : live) {
      double p = measure_accuracy(
          state.policy, suite_spec(suite, id), config,
          make_rng(config.seed, {fnv1a64("measure"), uk, fnv1a64(id)}));
      PoolEvent event;
      event.kind = PoolEvent::Kind::accuracy_measured;
      event.problem = id;
      event.p_hat = p;
      event.samples = config.accuracy_samples;
      state.pools = apply_event(std::move(state.pools), event);
    }
  }
  ir.counts_after_sft = state.pools.counts();

  // RL stage: accuracy-sorted groups, ladder-assigned N, independent budgets.
  std::vector<GroupPlan> plans = partition_groups(state.pools, config.group_size);
  for (std::size_t rank = 0; rank < plans.size(); ++rank) {
    GroupPlan& plan = plans[rank];
    plan.current_n = assign_initial_n(static_cast<int>(rank),
                                      static_cast<int>(plans.size()), config);
    plan.eta = config.eta;
    plan.step_budget = config.steps_per_cycle;
    long long min_remaining = std::numeric_limits<long long>::max();
    for (const ProblemId& id : plan.members) {
      const ProblemRecord& rec = state.pools.problems.at(id);
      min_remaining = std::min(min_remaining, rec.budget_limit - rec.budget_spent);
    }
    plan.rollout_budget =
        std::max(0LL, min_remaining) * static_cast<long long>(plan.members.size());

    std::mt19937_64 rng = make_rng(
        config.seed, {fnv1a64("rl"), uk, static_cast<std::uint64_t>(plan.group_id)});
    GroupOutcome outcome =
        run_group(state.policy, plan, state.pools, suite, config, rng);
    collect(state.replay, outcome.replay_delta);

    const std::string label =
        "it" + std::to_string(k) + "/group:" + std::to_string(plan.group_id);
    for (StepMetrics& m : outcome.metrics) {
      m.label = label;
      state.report.step_log.push_back(m);
    }
    GroupReport gr;
    gr.group_id = plan.group_id;
    gr.members = plan.members;
    gr.n_history = outcome.n_history;
    gr.steps = outcome.steps_used;
    gr.rollouts = outcome.rollouts_used;
    gr.succeeded = outcome.succeeded;
    ir.rl_rollouts += outcome.rollouts_used;
    ir.groups.push_back(std::move(gr));
  }
  ir.counts_after_rl = state.pools.counts();

  // Re-distillation over the buffers of currently Solvable/Solved problems.
  {
    ReplayBuffer filtered = make_replay_buffer(state.replay.capacity);
    filtered.next_seq = state.replay.next_seq;
    for (const auto& [id, dq] : state.replay.buffers) {
      Pool pool = state.pools.problems.at(id).pool;
      if (!dq.empty() && (pool == Pool::Solvable || pool == Pool::Solved))
        filtered.buffers[id] = dq;
    }
    if (!filtered.all_empty()) {
      const TabularPolicy& base =
          config.redistill_base == PipelineConfig::RedistillBase::initial
              ? state.initial_policy
              : state.policy;
      state.policy = redistill(
          base, filtered,
          DistillConfig{config.redistill_sft.learning_rate,
                        config.redistill_sft.epochs, config.shuffle_seed});
    }
  }

  state.completed_iterations += 1;
  state.report.iterations.push_back(std::move(ir));
}

bool pipeline_step(PipelineState& state, const ProblemSuite& suite,
                   const PipelineConfig& config) {
  if (state.phase == PipelinePhase::iterations &&
      (state.completed_iterations >= config.max_iterations ||
       all_terminal(state.pools)))
    state.phase = PipelinePhase::target;

  switch (state.phase) {
    case PipelinePhase::warmup:
      run_warmup(state, suite, config);
      state.phase = PipelinePhase::iterations;
      break;
    case PipelinePhase::iterations:
      run_iteration(state, suite, config);
      break;
    case PipelinePhase::target:
      run_target_stage(state, config);
      state.phase = PipelinePhase::eval;
      break;
    case PipelinePhase::eval:
      run_final_eval(state, suite, config);
      state.phase = PipelinePhase::done;
      break;
    case PipelinePhase::done:
      break;
  }
  return state.phase != PipelinePhase::done;
}

Json pipeline_state_to_json(const PipelineState& state) {
  Json cursors = Json::object();
  for (const auto& [id, c] : state.generator_cursors) cursors[id] = c;
  Json archive = Json::array();
  for (const Solution& s : state.sft_archive) archive.push_back(solution_to_json(s));
  return Json{{"schema_version", kSchemaVersion},
              {"phase", phase_name(state.phase)},
              {"completed_iterations", state.completed_iterations},
              {"initial_policy", policy_to_json(state.initial_policy)},
              {"policy", policy_to_json(state.policy)},
              {"target_policy", policy_to_json(state.target_policy)},
              {"pools", pool_state_to_json(state.pools)},
              {"replay", replay_to_json(state.replay)},
              {"sft_archive", std::move(archive)},
              {"generator_cursors", std::move(cursors)},
              {"report", report_to_json(state.report)}};
}

PipelineState pipeline_state_from_json(const Json& j) {
  if (j.at("schema_version").get<int>() != kSchemaVersion)
    throw std::runtime_error("checkpoint schema version mismatch");
  PipelineState state;
  state.phase = phase_from_name(j.at("phase").get<std::string>());
  state.completed_iterations = j.at("completed_iterations").get<int>();
  state.initial_policy = policy_from_json(j.at("initial_policy"));
  state.policy = policy_from_json(j.at("policy"));
  state.target_policy = policy_from_json(j.at("target_policy"));
  state.pools = pool_state_from_json(j.at("pools"));
  state.replay = replay_from_json(j.at("replay"));
  for (const Json& sj : j.at("sft_archive"))
    state.sft_archive.push_back(solution_from_json(sj));
  for (const auto& [id, c] : j.at("generator_cursors").items())
    state.generator_cursors[id] = c.get<long long>();
  state.report = report_from_json(j.at("report"));
  return state;
}

void save_checkpoint(const PipelineState& state,
                     const std::filesystem::path& file) {
  std::filesystem::path tmp = file;
  tmp += ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + tmp.string());
    out << pipeline_state_to_json(state).dump(2) << "\n";
  }
  std::filesystem::rename(tmp, file);
}

PipelineState load_checkpoint(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot read checkpoint: " + file.string());
  Json j = Json::parse(in);
  return pipeline_state_from_json(j);
}

FinalReport run_pipeline(const ProblemSuite& suite, const PipelineConfig& config,
                         const std::filesystem::path& checkpoint_file) {
  PipelineState state;
  if (!checkpoint_file.empty() && std::filesystem::exists(checkpoint_file)) {
    state = load_checkpoint(checkpoint_file);
    if (state.report.config_hash != config_hash(config))
      throw std::runtime_error(
          "checkpoint was produced by a different (config, seed)");
  } else {
    state = make_pipeline_state(suite, config);
  }
  while (state.phase != PipelinePhase::done) {
    pipeline_step(state, suite, config);
    if (!checkpoint_file.empty()) save_checkpoint(state, checkpoint_file);
  }
  return state.report;
}

void write_run_outputs(const FinalReport& report,
                       const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "report.json");
    if (!out) throw std::runtime_error("cannot write report.json");
    out << report_to_string(report);
  }
  {
    std::ofstream out(dir / "metrics.jsonl");
    if (!out) throw std::runtime_error("cannot write metrics.jsonl");
    for (const StepMetrics& m : report.step_log) out << metrics_to_json(m).dump() << "\n";
  }
  {
    CsvWriter csv((dir / "pool_counts.csv").string(),
                  {"stage", "iteration", "unsolvable", "solvable", "solved",
                   "failed"});
    auto row = [&](const std::string& stage, int iter,
                   const std::array<int, 4>& c) {
      csv.row({stage, std::to_string(iter), std::to_string(c[0]),
               std::to_string(c[1]), std::to_string(c[2]), std::to_string(c[3])});
    };
    row("warmup", -1, report.warmup_counts);
    for (const IterationReport& it : report.iterations) {
      row("after_sft", it.iteration, it.counts_after_sft);
      row("after_rl", it.iteration, it.counts_after_rl);
    }
    row("final", -1, report.final_counts);
  }
  {
    CsvWriter csv((dir / "group_rewards.csv").string(),
                  {"step", "label", "n", "mean_reward", "zero_var_fraction",
                   "mean_is_ratio", "clip_fraction", "grad_norm"});
    for (const StepMetrics& m : report.step_log)
      csv.row({std::to_string(m.step), m.label, std::to_string(m.n),
               csv_double(m.mean_reward), csv_double(m.zero_var_fraction),
               csv_double(m.mean_is_ratio), csv_double(m.clip_fraction),
               csv_double(m.grad_norm)});
  }
  {
    CsvWriter csv((dir / "groups.csv").string(),
                  {"iteration", "group_id", "members", "n_history", "steps",
                   "rollouts", "succeeded"});
    auto joined = [](const auto& items) {
      std::string text;
      for (const auto& item : items) {
        if (!text.empty()) text += ' ';
        if constexpr (std::is_same_v<std::decay_t<decltype(item)>, ProblemId>)
          text += item;
        else
          text += std::to_string(item);
      }
      return text;
    };
    for (const IterationReport& it : report.iterations)
      for (const GroupReport& g : it.groups)
        csv.row({std::to_string(it.iteration), std::to_string(g.group_id),
                 joined(g.members), joined(g.n_history),
                 std::to_string(g.steps), std::to_string(g.rollouts),
                 g.succeeded ? "1" : "0"});
  }
  {
    std::ofstream out(dir / "summary.txt");
    if (!out) throw std::runtime_error("cannot write summary.txt");
    out << "seed: " << report.seed << "\n"
        << "config_hash: " << report.config_hash << "\n"
        << "iterations: " << report.iterations.size() << "\n"
        << "total_rl_rollouts: " << report.total_rl_rollouts << "\n"
        << "final_counts: unsolvable=" << report.final_counts[0]
        << " solvable=" << report.final_counts[1]
        << " solved=" << report.final_counts[2]
        << " failed=" << report.final_counts[3] << "\n";
    static const char* kPools[4] = {"unsolvable", "solvable", "solved", "failed"};
    for (int i = 0; i < 4; ++i)
      out << "final_mean_accuracy[" << kPools[i]
          << "]: " << csv_double(report.final_pool_mean_accuracy[i]) << "\n";
  }
}

}  // namespace poolrl
