#include "cli.hpp"

#include <pthread.h>

#include <csignal>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "metaspatial/config.hpp"
#include "metaspatial/errors.hpp"
#include "metaspatial/serialize.hpp"
#include "metaspatial/toy_policy.hpp"
#include "metaspatial/version.hpp"

namespace metaspatial::cli {

using nlohmann::json;

namespace {

// Flags that override config-file values. Only options the user actually
// passed are applied.
struct ConfigFlags {
  std::string config_path;
  std::uint64_t seed = 0;
  std::size_t group = 0;
  int turns = 0;
  double gamma = 0, w_phys = 0, epsilon = 0, kl_beta = 0, lr = 0;
  std::size_t steps = 0;
  std::string judge_mode, judge_endpoint, stage_schedule, modulation;
  std::map<std::string, CLI::Option*> opts;

  void add_to(CLI::App& app, bool training) {
    opts["config"] = app.add_option("--config", config_path, "engine config JSON")->check(CLI::ExistingFile);
    opts["seed"] = app.add_option("--seed", seed, "base random seed");
    opts["group"] = app.add_option("--group", group, "trajectories per group (G >= 2)");
    opts["turns"] = app.add_option("--turns", turns, "turns per trajectory (T >= 1)");
    opts["gamma"] = app.add_option("--gamma", gamma, "per-turn discount in (0, 1]");
    opts["w-phys"] = app.add_option("--w-phys", w_phys, "per-object physics penalty weight");
    opts["epsilon"] = app.add_option("--epsilon", epsilon, "ratio clip half-width");
    opts["kl-beta"] = app.add_option("--kl-beta", kl_beta, "KL penalty weight");
    opts["modulation"] = app.add_option("--modulation", modulation, "subtractive|multiplicative");
    opts["judge-mode"] = app.add_option("--judge-mode", judge_mode, "stub|remote");
    opts["judge-endpoint"] = app.add_option("--judge-endpoint", judge_endpoint, "remote judge URL");
    opts["stage-schedule"] = app.add_option("--stage-schedule", stage_schedule, "constant|staged");
    if (training) {
      opts["steps"] = app.add_option("--steps", steps, "training steps");
      opts["lr"] = app.add_option("--lr", lr, "learning rate");
    }
  }

  bool given(const std::string& name) const {
    auto it = opts.find(name);
    return it != opts.end() && it->second->count() > 0;
  }

  EngineConfig resolve() const {
    EngineConfig c = given("config") ? load_config(config_path) : EngineConfig{};
    auto flag_choice = [](auto parse, const std::string& v, const char* flag) {
      try {
        return parse(v);
      } catch (const InputError& e) {
        throw InputError(flag, e.message());
      }
    };
    if (given("seed")) c.seed = seed;
    if (given("group")) c.rollout.group = group;
    if (given("turns")) c.rollout.turns = turns;
    if (given("gamma")) c.rollout.gamma = gamma;
    if (given("w-phys")) c.spo.w_phys = w_phys;
    if (given("epsilon")) c.spo.epsilon = epsilon;
    if (given("kl-beta")) c.spo.kl_beta = kl_beta;
    if (given("modulation")) c.spo.modulation = flag_choice(&modulation_from_string, modulation, "--modulation");
    if (given("judge-mode")) c.judge.mode = flag_choice(&judge_mode_from_string, judge_mode, "--judge-mode");
    if (given("judge-endpoint")) c.judge.endpoint = judge_endpoint;
    if (given("stage-schedule")) {
      c.stages.schedule = flag_choice(&stage_schedule_from_string, stage_schedule, "--stage-schedule");
    }
    if (given("steps")) c.train.steps = steps;
    if (given("lr")) c.train.learning_rate = lr;
    try {
      validate(c);
    } catch (const InputError& e) {
      throw InputError(flag_for(e.path()), e.message());
    }
    return c;
  }

  // Point validation failures at the flag when the user passed one.
  std::string flag_for(const std::string& path) const {
    static const std::map<std::string, std::string> by_path = {
        {"$.rollout.group", "group"}, {"$.rollout.turns", "turns"}, {"$.rollout.gamma", "gamma"},
        {"$.spo.w_phys", "w-phys"},   {"$.spo.epsilon", "epsilon"}, {"$.spo.kl_beta", "kl-beta"},
        {"$.train.learning_rate", "lr"}};
    auto it = by_path.find(path);
    if (it != by_path.end() && given(it->second)) return "--" + it->second;
    return path;
  }
};

std::string read_text(const std::string& path) {
  if (path == "-") {
    std::stringstream ss;
    ss << std::cin.rdbuf();
    return ss.str();
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError(path, "cannot open file");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Writes to the named file, or to `fallback` when the name is empty.
class Sink {
 public:
  Sink(const std::string& path, std::ostream& fallback) {
    if (path.empty()) {
      stream_ = &fallback;
      return;
    }
    file_ = std::make_unique<std::ofstream>(path, std::ios::binary | std::ios::trunc);
    if (!*file_) throw InputError(path, "cannot open for writing");
    stream_ = file_.get();
  }
  std::ostream& operator*() { return *stream_; }

 private:
  std::unique_ptr<std::ofstream> file_;
  std::ostream* stream_ = nullptr;
};

void add_run_metadata(json& j, const EngineConfig& c) {
  j["judge_mode"] = to_string(c.judge.mode);
  j["deterministic"] = c.judge.mode == JudgeMode::stub;
}

// ---- score -------------------------------------------------------------

struct ScoreArgs {
  std::string task, rollout, components, out;
};

json score_components(const std::string& path, const EngineConfig& c) {
  const json j = read_json_file(path);
  if (!j.is_object()) throw InputError(path + ": $", "expected an object");
  auto field = [&](const char* key, double lo, double hi) {
    auto it = j.find(key);
    if (it == j.end()) throw InputError(path + ": $." + key, "missing required field");
    if (!it->is_number()) throw InputError(path + ": $." + key, "expected a number");
    const double v = it->get<double>();
    if (!(v >= lo && v <= hi)) {
      throw InputError(path + ": $." + key, "must lie in [" + format_number(lo) + ", " + format_number(hi) + "]");
    }
    return v;
  };
  PhysicsReport physics;
  physics.collision_ratio = field("collision_ratio", 0.0, 1.0);
  physics.constraint_ratio = field("constraint_ratio", 0.0, 1.0);
  physics.physics_reward =
      -c.physics.alpha * physics.collision_ratio - c.physics.beta * physics.constraint_ratio + 0.0;
  RenderReward render;
  render.value = field("render", 0.0, 1.0);
  const double format = field("format", 0.0, 1.0);
  return {{"schema_version", kSchemaVersion},
          {"kind", "reward"},
          {"source", "components"},
          {"format", format},
          {"physics",
           {{"collision_ratio", physics.collision_ratio},
            {"constraint_ratio", physics.constraint_ratio},
            {"physics_reward", physics.physics_reward}}},
          {"render", {{"value", render.value}}},
          {"total", total_reward(format, physics, render, c.weights)}};
}

int cmd_score(const ScoreArgs& a, const EngineConfig& c, std::ostream& out) {
  json result;
  if (!a.components.empty()) {
    result = score_components(a.components, c);
  } else {
    if (a.task.empty() || a.rollout.empty()) {
      throw InputError("--task/--rollout", "score needs --task and --rollout, or --components");
    }
    const SceneTask task = load_task(a.task);
    const ParsedRollOut parsed = parse_rollout(read_text(a.rollout));
    const RewardEnvironment env(c.environment());
    const ScoredRollOut scored = env.score(parsed, task, c.stage_config().full);
    result = {{"schema_version", kSchemaVersion}, {"kind", "reward"}, {"task_id", task.id},
              {"parse_stage", to_string(parsed.stage)}};
    result.update(to_json(scored.reward));
    result["feedback"] = to_json(scored.feedback);
    add_run_metadata(result, c);
  }
  Sink sink(a.out, out);
  *sink << result.dump() << '\n';
  return kExitOk;
}

// ---- rollout -------------------------------------------------------------

struct RolloutArgs {
  std::string task, dump, rollout, checkpoint, policy = "toy";
  std::size_t repeat = 1;
};

// Serves the turns of a recorded group back to the engine.
class ReplayPolicy final : public PolicyPort {
 public:
  explicit ReplayPolicy(std::vector<std::vector<PolicyOutput>> turns) : turns_(std::move(turns)) {}

  PolicyOutput generate(const PolicyQuery& q) override {
    if (q.trajectory >= turns_.size() || q.turn < 1 ||
        static_cast<std::size_t>(q.turn) > turns_[q.trajectory].size()) {
      throw EngineError("replay source has no trajectory " + std::to_string(q.trajectory) + " turn " +
                        std::to_string(q.turn));
    }
    return turns_[q.trajectory][static_cast<std::size_t>(q.turn) - 1];
  }
  bool concurrent_safe() const noexcept override { return true; }

 private:
  std::vector<std::vector<PolicyOutput>> turns_;
};

struct ReplayRecord {
  std::optional<SceneTask> task;
  std::optional<std::uint64_t> seed;
  std::vector<std::vector<PolicyOutput>> turns;
};

// Dump-shaped record; only raw_text and tokens are read. Token spans are
// trajectory-level, as in a dump.
ReplayRecord replay_from_json(const json& j, const std::string& where) {
  ReplayRecord r;
  if (!j.is_object()) throw InputError(where + ": $", "expected an object");
  if (auto t = j.find("task"); t != j.end()) {
    try {
      r.task = task_from_json(*t);
    } catch (const InputError& e) {
      throw InputError(where + ": $.task" + e.path().substr(1), e.message());
    }
  }
  if (auto s = j.find("seed"); s != j.end()) {
    if (!s->is_number_unsigned()) throw InputError(where + ": $.seed", "expected a non-negative integer");
    r.seed = s->get<std::uint64_t>();
  }
  auto trajs = j.find("trajectories");
  if (trajs == j.end() || !trajs->is_array() || trajs->size() < 2) {
    throw InputError(where + ": $.trajectories", "expected an array of at least 2 trajectories");
  }
  for (std::size_t i = 0; i < trajs->size(); ++i) {
    const std::string tp = where + ": $.trajectories[" + std::to_string(i) + "]";
    const json& tj = (*trajs)[i];
    if (!tj.is_object() || !tj.contains("turns") || !tj["turns"].is_array() || tj["turns"].empty()) {
      throw InputError(tp + ".turns", "expected a non-empty array");
    }
    std::vector<PolicyOutput> outs;
    std::size_t offset = 0;
    for (std::size_t t = 0; t < tj["turns"].size(); ++t) {
      const std::string up = tp + ".turns[" + std::to_string(t) + "]";
      const json& uj = tj["turns"][t];
      if (!uj.is_object() || !uj.contains("raw_text") || !uj["raw_text"].is_string()) {
        throw InputError(up + ".raw_text", "expected a string");
      }
      PolicyOutput o;
      o.raw_text = uj["raw_text"].get<std::string>();
      if (uj.contains("tokens")) {
        if (!uj["tokens"].is_array()) throw InputError(up + ".tokens", "expected an array");
        for (std::size_t k = 0; k < uj["tokens"].size(); ++k) {
          const std::string kp = up + ".tokens[" + std::to_string(k) + "]";
          TokenRecord tok = token_from_json(uj["tokens"][k], kp);
          if (tok.span.begin < offset || tok.span.end > offset + o.raw_text.size()) {
            throw InputError(kp + ".span", "outside the turn text");
          }
          tok.span.begin -= offset;
          tok.span.end -= offset;
          o.tokens.push_back(std::move(tok));
        }
      }
      offset += o.raw_text.size();
      outs.push_back(std::move(o));
    }
    if (!r.turns.empty() && outs.size() != r.turns.front().size()) {
      throw InputError(tp + ".turns", "all trajectories must have the same number of turns");
    }
    r.turns.push_back(std::move(outs));
  }
  return r;
}

int cmd_rollout(const RolloutArgs& a, EngineConfig c, std::ostream& out) {
  Sink sink(a.dump, out);
  const RewardEnvironment env(c.environment());
  const RewardWeights weights = c.stage_config().full;
  const std::optional<SceneTask> task_flag =
      a.task.empty() ? std::nullopt : std::optional<SceneTask>(load_task(a.task));

  auto emit = [&](const TrajectoryGroup& g, const char* policy) {
    json j = group_to_json(g);
    j["policy"] = policy;
    add_run_metadata(j, c);
    *sink << j.dump() << '\n';
  };

  if (a.policy == "replay") {
    if (a.rollout.empty()) throw InputError("--rollout", "replay policy needs a --rollout source file");
    std::ifstream in(a.rollout);
    if (!in) throw InputError(a.rollout, "cannot open file");
    std::string line;
    std::size_t lineno = 0, k = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      const std::string where = a.rollout + ": line " + std::to_string(lineno);
      const json j = json::parse(line, nullptr, false);
      if (j.is_discarded()) throw InputError(where, "invalid JSON");
      ReplayRecord rec = replay_from_json(j, where);
      const SceneTask task = task_flag ? *task_flag : rec.task ? *rec.task : throw InputError(where + ": $.task", "no task in record and no --task given");
      RolloutSettings s = c.rollout;
      s.group = rec.turns.size();
      s.turns = static_cast<int>(rec.turns.front().size());
      const std::uint64_t seed = rec.seed ? *rec.seed : derive_seed(c.seed, k + 1);
      ++k;
      ReplayPolicy policy(std::move(rec.turns));
      emit(run_group(policy, env, task, s, weights, seed), "replay");
    }
    return kExitOk;
  }
  if (a.policy != "toy") throw InputError("--policy", "unknown policy '" + a.policy + "' (toy|replay)");
  if (!task_flag) throw InputError("--task", "rollout needs --task");

  toy::GridPolicyParams params;
  if (!a.checkpoint.empty()) {
    try {
      params = toy::params_from_json(read_json_file(a.checkpoint));
    } catch (const InputError& e) {
      throw InputError(a.checkpoint + ": " + e.path(), e.message());
    }
    if (params.objects != task_flag->objects.size() ||
        params.turns < static_cast<std::size_t>(c.rollout.turns)) {
      throw InputError(a.checkpoint, "checkpoint shape does not fit the task and --turns");
    }
  } else {
    params = toy::shared_prior_params(task_flag->objects.size(), static_cast<std::size_t>(c.rollout.turns),
                                      c.train.bins, c.train.init_scale, derive_seed(c.seed, 0));
  }
  toy::ToyPolicy policy(params, params, params);
  for (std::size_t k = 0; k < a.repeat; ++k) {
    emit(run_group(policy, env, *task_flag, c.rollout, weights, derive_seed(c.seed, k + 1)), "toy");
  }
  return kExitOk;
}

// ---- advantage -----------------------------------------------------------

struct AdvantageArgs {
  std::string dump, out;
};

void require_token_data(const TrajectoryGroup& g, const std::string& where) {
  for (const auto& traj : g.trajectories) {
    if (traj.token_count() == 0) {
      throw InputError(where + ": trajectory " + std::to_string(traj.index), "has no token records");
    }
    for (const auto& turn : traj.turns) {
      for (std::size_t k = 0; k < turn.tokens.size(); ++k) {
        const auto& tok = turn.tokens[k];
        const char* missing = !tok.logprob_new ? "logprob_new"
                              : !tok.logprob_old ? "logprob_old"
                              : !tok.logprob_ref ? "logprob_ref"
                                                 : nullptr;
        if (missing != nullptr) {
          throw InputError(where + ": trajectory " + std::to_string(traj.index) + " turn " +
                               std::to_string(turn.index) + " token " + std::to_string(k),
                           std::string("missing ") + missing);
        }
      }
    }
  }
}

int cmd_advantage(const AdvantageArgs& a, const EngineConfig& c, std::ostream& out) {
  if (a.dump.empty()) throw InputError("--dump", "advantage needs --dump");
  const auto groups = read_dump_file(a.dump);
  if (groups.empty()) throw InputError(a.dump, "dump contains no trajectory groups");
  std::vector<json> lines;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto& g = groups[i];
    require_token_data(g, a.dump + ": record " + std::to_string(i + 1));
    if (g.trajectories.size() < 2) {
      throw InputError(a.dump + ": record " + std::to_string(i + 1), "group size must be >= 2");
    }
    const auto adv = compute_advantages(g, c.spo);
    const auto sur = surrogate_objective(g, adv.advantages, c.spo.epsilon, c.spo.kl_beta);
    lines.push_back(advantages_to_json(g, adv, sur, c.spo));
  }
  Sink sink(a.out, out);
  for (const auto& j : lines) *sink << j.dump() << '\n';
  return kExitOk;
}

// ---- train-toy -----------------------------------------------------------

struct TrainArgs {
  std::string task, out, checkpoint;
};

int cmd_train(const TrainArgs& a, const EngineConfig& c, std::ostream& out) {
  if (a.task.empty()) throw InputError("--task", "train-toy needs --task");
  const SceneTask task = load_task(a.task);
  Sink sink(a.out, out);
  const auto result = toy::train(std::span(&task, 1), c.train_config(), [&](const toy::StepMetrics& m) {
    json j = toy::metrics_to_json(m);
    j["schema_version"] = kSchemaVersion;
    j["kind"] = "train_step";
    *sink << j.dump() << '\n';
  });
  if (!a.checkpoint.empty()) {
    std::ofstream ck(a.checkpoint, std::ios::trunc);
    if (!ck) throw InputError(a.checkpoint, "cannot open for writing");
    ck << toy::params_to_json(result.params).dump() << '\n';
  }
  if (!a.out.empty()) {
    // short summary on stdout when the log goes to a file
    const std::size_t n = result.log.size();
    const std::size_t window = std::min<std::size_t>(50, n);
    double col = 0.0, con = 0.0;
    for (std::size_t i = n - window; i < n; ++i) {
      col += result.log[i].collision_ratio;
      con += result.log[i].constraint_ratio;
    }
    out << json{{"kind", "train_summary"},
                {"steps", c.train.steps},
                {"window", window},
                {"collision_ratio", col / static_cast<double>(window)},
                {"constraint_ratio", con / static_cast<double>(window)}}
               .dump()
        << '\n';
  }
  return kExitOk;
}

// ---- judge-stub ----------------------------------------------------------

struct JudgeArgs {
  std::string host = "127.0.0.1";
  int port = 8765;
};

int cmd_judge_stub(const JudgeArgs& a, const EngineConfig& c, std::ostream& out) {
  JudgeStubServer server(c.judge.stub_color_scheme);
  const int port = server.bind(a.host, a.port);

  // Stop on SIGINT/SIGTERM; the signals are taken synchronously by this thread.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  std::thread worker([&] { server.listen(); });
  server.wait_until_ready();
  out << "judge stub listening on http://" << a.host << ":" << port << " (version " << kVersion << ")"
      << std::endl;
  int sig = 0;
  sigwait(&signals, &sig);
  server.stop();
  worker.join();
  pthread_sigmask(SIG_UNBLOCK, &signals, nullptr);
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Layout reward, trajectory and advantage engine", "metaspatial"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  ConfigFlags score_flags, rollout_flags, adv_flags, train_flags, judge_flags;

  ScoreArgs score;
  auto* score_cmd = app.add_subcommand("score", "score one roll-out (or reward components) as JSON");
  score_cmd->add_option("--task", score.task, "task JSON");
  score_cmd->add_option("--rollout", score.rollout, "roll-out text file ('-' for stdin)");
  score_cmd->add_option("--components", score.components,
                        "JSON {render, format, collision_ratio, constraint_ratio} to combine");
  score_cmd->add_option("--out", score.out, "output file (default stdout)");
  score_flags.add_to(*score_cmd, false);

  RolloutArgs rollout;
  auto* rollout_cmd = app.add_subcommand("rollout", "run trajectory groups and write a JSONL dump");
  rollout_cmd->add_option("--task", rollout.task, "task JSON");
  rollout_cmd->add_option("--dump", rollout.dump, "output dump (default stdout)");
  rollout_cmd->add_option("--policy", rollout.policy, "toy|replay");
  rollout_cmd->add_option("--rollout", rollout.rollout, "replay source (dump-shaped JSONL)");
  rollout_cmd->add_option("--checkpoint", rollout.checkpoint, "toy policy checkpoint to sample from");
  rollout_cmd->add_option("--repeat", rollout.repeat, "number of groups to sample")->check(CLI::PositiveNumber);
  rollout_flags.add_to(*rollout_cmd, false);

  AdvantageArgs advantage;
  auto* adv_cmd = app.add_subcommand("advantage", "per-token advantages for every group in a dump");
  adv_cmd->add_option("--dump", advantage.dump, "input dump");
  adv_cmd->add_option("--out", advantage.out, "output file (default stdout)");
  adv_flags.add_to(*adv_cmd, false);

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train-toy", "train the grid policy on one task");
  train_cmd->add_option("--task", train.task, "task JSON");
  train_cmd->add_option("--out", train.out, "metric log JSONL (default stdout)");
  train_cmd->add_option("--checkpoint", train.checkpoint, "write final params here");
  train_flags.add_to(*train_cmd, true);

  JudgeArgs judge;
  auto* judge_cmd = app.add_subcommand("judge-stub", "serve the judge protocol with stub grades");
  judge_cmd->add_option("--host", judge.host, "bind address");
  judge_cmd->add_option("--port", judge.port, "port (0 picks a free one)")->check(CLI::Range(0, 65535));
  judge_flags.add_to(*judge_cmd, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInput;
  }

  try {
    if (score_cmd->parsed()) return cmd_score(score, score_flags.resolve(), out);
    if (rollout_cmd->parsed()) return cmd_rollout(rollout, rollout_flags.resolve(), out);
    if (adv_cmd->parsed()) return cmd_advantage(advantage, adv_flags.resolve(), out);
    if (train_cmd->parsed()) return cmd_train(train, train_flags.resolve(), out);
    if (judge_cmd->parsed()) return cmd_judge_stub(judge, judge_flags.resolve(), out);
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitEngine;
  }
  return kExitInput;
}

}  // namespace metaspatial::cli
