#include "metaspatial/serialize.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "metaspatial/errors.hpp"
#include "metaspatial/version.hpp"

namespace metaspatial {

using nlohmann::json;

nlohmann::json to_json(const PhysicsReport& r) {
  return {{"collision_ratio", r.collision_ratio},
          {"constraint_ratio", r.constraint_ratio},
          {"physics_reward", r.physics_reward},
          {"per_object_penalty", r.per_object_penalty}};
}

nlohmann::json to_json(const RenderReward& r) {
  return {{"value", r.value}, {"grades", grades_to_json(r.grades)}, {"source", to_string(r.source)}};
}

nlohmann::json to_json(const RewardBreakdown& r) {
  return {{"format", r.format.score},
          {"format_failure", to_string(r.format.failed_check)},
          {"physics", to_json(r.physics)},
          {"render", to_json(r.render)},
          {"total", r.total}};
}

nlohmann::json to_json(const FeedbackRecord& f) {
  json pairs = json::array();
  for (const auto& [a, b] : f.colliding_pairs) pairs.push_back({a, b});
  json violations = json::object();
  for (const auto& [id, v] : f.violations) {
    violations[id] = {{"out_of_bounds", v.out_of_bounds}, {"floating", v.floating}};
  }
  return {{"format_failure", to_string(f.format_failure)},
          {"colliding_pairs", std::move(pairs)},
          {"violations", std::move(violations)},
          {"judge_grades", f.judge_grades ? grades_to_json(*f.judge_grades) : json(nullptr)}};
}

nlohmann::json to_json(const TokenRecord& t) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json j = {{"index", t.index},
            {"span", {t.span.begin, t.span.end}},
            {"logprob_new", opt(t.logprob_new)},
            {"logprob_old", opt(t.logprob_old)},
            {"logprob_ref", opt(t.logprob_ref)}};
  if (t.action) {
    j["action"] = {{"slot", t.action->slot}, {"choice", t.action->choice}, {"masked", t.action->masked}};
  }
  return j;
}

nlohmann::json to_json(const Turn& t) {
  json tokens = json::array();
  for (const auto& tok : t.tokens) tokens.push_back(to_json(tok));
  return {{"index", t.index},
          {"seed", t.seed},
          {"raw_text", t.rollout.raw_text},
          {"text_offset", t.text_offset},
          {"parse_stage", to_string(t.rollout.stage)},
          {"reward", to_json(t.reward)},
          {"feedback", to_json(t.feedback)},
          {"tokens", std::move(tokens)}};
}

nlohmann::json to_json(const Trajectory& t) {
  json turns = json::array();
  for (const auto& turn : t.turns) turns.push_back(to_json(turn));
  return {{"index", t.index},
          {"seed", t.seed},
          {"discounted_reward", t.discounted_reward},
          {"turns", std::move(turns)}};
}

nlohmann::json group_to_json(const TrajectoryGroup& g) {
  json trajs = json::array();
  for (const auto& t : g.trajectories) trajs.push_back(to_json(t));
  const std::size_t turns = g.trajectories.empty() ? 0 : g.trajectories.front().turns.size();
  return {{"schema_version", kSchemaVersion},
          {"kind", "trajectory_group"},
          {"task_id", g.task_id()},
          {"task", task_to_json(g.task)},
          {"seed", g.seed},
          {"gamma", g.gamma},
          {"turns", turns},
          {"group", g.trajectories.size()},
          {"trajectories", std::move(trajs)}};
}

namespace {

// Path-carrying view of a JSON node.
struct Node {
  const json& j;
  std::string path;

  Node at(const char* key) const {
    if (!j.is_object()) throw InputError(path, "expected an object");
    auto it = j.find(key);
    if (it == j.end()) throw InputError(path + "." + key, "missing required field");
    return {*it, path + "." + key};
  }
  Node at(std::size_t i) const { return {j[i], path + "[" + std::to_string(i) + "]"}; }
  bool has(const char* key) const { return j.is_object() && j.contains(key); }

  const json& array() const {
    if (!j.is_array()) throw InputError(path, "expected an array");
    return j;
  }
  double number() const {
    if (!j.is_number()) throw InputError(path, "expected a number");
    const double v = j.get<double>();
    if (!std::isfinite(v)) throw InputError(path, "expected a finite number");
    return v;
  }
  std::optional<double> optional_number() const {
    if (j.is_null()) return std::nullopt;
    return number();
  }
  std::uint64_t unsigned_int() const {
    if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<std::int64_t>() >= 0)) {
      throw InputError(path, "expected a non-negative integer");
    }
    return j.get<std::uint64_t>();
  }
  std::string string() const {
    if (!j.is_string()) throw InputError(path, "expected a string");
    return j.get<std::string>();
  }
  bool boolean() const {
    if (!j.is_boolean()) throw InputError(path, "expected a boolean");
    return j.get<bool>();
  }
};

FormatCheck read_check(const Node& n) {
  try {
    return format_check_from_string(n.string());
  } catch (const InputError& e) {
    throw InputError(n.path, e.message());
  }
}

JudgeGrades read_grades(const Node& n) {
  if (!n.j.is_object()) throw InputError(n.path, "expected a grade object");
  try {
    return parse_judge_response(n.j.dump());
  } catch (const JudgeResponseError& e) {
    throw InputError(n.path, e.what());
  }
}

PhysicsReport read_physics(const Node& n) {
  PhysicsReport r;
  r.collision_ratio = n.at("collision_ratio").number();
  r.constraint_ratio = n.at("constraint_ratio").number();
  r.physics_reward = n.at("physics_reward").number();
  const Node pen = n.at("per_object_penalty");
  if (!pen.j.is_object()) throw InputError(pen.path, "expected an object");
  for (const auto& [id, v] : pen.j.items()) {
    const double p = Node{v, pen.path + "." + id}.number();
    if (p < 0.0 || p > 1.0) throw InputError(pen.path + "." + id, "penalty must lie in [0, 1]");
    r.per_object_penalty[id] = p;
  }
  return r;
}

RewardBreakdown read_reward(const Node& n) {
  RewardBreakdown r;
  r.format.score = n.at("format").number();
  r.format.failed_check = read_check(n.at("format_failure"));
  r.physics = read_physics(n.at("physics"));
  const Node render = n.at("render");
  r.render.value = render.at("value").number();
  r.render.grades = read_grades(render.at("grades"));
  const std::string source = render.at("source").string();
  if (source == "stub") {
    r.render.source = RenderSource::stub;
  } else if (source == "remote_judge") {
    r.render.source = RenderSource::remote_judge;
  } else {
    throw InputError(render.path + ".source", "unknown render source '" + source + "'");
  }
  r.total = n.at("total").number();
  return r;
}

FeedbackRecord read_feedback(const Node& n) {
  FeedbackRecord f;
  f.format_failure = read_check(n.at("format_failure"));
  const Node pairs = n.at("colliding_pairs");
  for (std::size_t i = 0; i < pairs.array().size(); ++i) {
    const Node p = pairs.at(i);
    if (!p.j.is_array() || p.j.size() != 2) throw InputError(p.path, "expected [id, id]");
    f.colliding_pairs.emplace_back(p.at(std::size_t{0}).string(), p.at(std::size_t{1}).string());
  }
  const Node viol = n.at("violations");
  if (!viol.j.is_object()) throw InputError(viol.path, "expected an object");
  for (const auto& [id, v] : viol.j.items()) {
    const Node vn{v, viol.path + "." + id};
    f.violations[id] = {vn.at("out_of_bounds").boolean(), vn.at("floating").boolean()};
  }
  if (n.has("judge_grades") && !n.j["judge_grades"].is_null()) {
    f.judge_grades = read_grades(n.at("judge_grades"));
  }
  return f;
}

TokenRecord read_token(const Node& n) {
  TokenRecord t;
  t.index = n.at("index").unsigned_int();
  const Node span = n.at("span");
  if (!span.j.is_array() || span.j.size() != 2) throw InputError(span.path, "expected [begin, end]");
  t.span.begin = span.at(std::size_t{0}).unsigned_int();
  t.span.end = span.at(std::size_t{1}).unsigned_int();
  if (t.span.begin > t.span.end) throw InputError(span.path, "span begin after end");
  for (auto [key, field] : {std::pair{"logprob_new", &t.logprob_new},
                            std::pair{"logprob_old", &t.logprob_old},
                            std::pair{"logprob_ref", &t.logprob_ref}}) {
    if (!n.has(key)) continue;
    *field = n.at(key).optional_number();
    if (*field && **field > 0.0) throw InputError(n.path + "." + key, "log-probability must be <= 0");
  }
  if (n.has("action") && !n.j["action"].is_null()) {
    const Node a = n.at("action");
    TokenAction act;
    act.slot = a.at("slot").unsigned_int();
    act.choice = a.at("choice").unsigned_int();
    const Node masked = a.at("masked");
    for (std::size_t i = 0; i < masked.array().size(); ++i) act.masked.push_back(masked.at(i).unsigned_int());
    t.action = std::move(act);
  }
  return t;
}

SceneTask read_task(const Node& n) {
  try {
    return task_from_json(n.j);
  } catch (const InputError& e) {
    // task paths are rooted at "$"; re-root them under this node
    std::string sub = e.path().empty() ? std::string() : e.path().substr(1);
    throw InputError(n.path + sub, e.message());
  }
}

}  // namespace

TokenRecord token_from_json(const nlohmann::json& j, const std::string& path) {
  return read_token(Node{j, path});
}

TrajectoryGroup group_from_json(const nlohmann::json& j) {
  const Node root{j, "$"};
  if (!j.is_object()) throw InputError("$", "expected a trajectory_group object");
  if (root.at("kind").string() != "trajectory_group") {
    throw InputError("$.kind", "expected \"trajectory_group\"");
  }
  if (root.at("schema_version").unsigned_int() != static_cast<std::uint64_t>(kSchemaVersion)) {
    throw InputError("$.schema_version", "unsupported schema version");
  }

  TrajectoryGroup g;
  g.task = read_task(root.at("task"));
  if (root.has("task_id") && root.at("task_id").string() != g.task.id) {
    throw InputError("$.task_id", "does not match $.task.id");
  }
  g.seed = root.at("seed").unsigned_int();
  g.gamma = root.at("gamma").number();
  if (!(g.gamma > 0.0 && g.gamma <= 1.0)) throw InputError("$.gamma", "must lie in (0, 1]");

  const Node trajs = root.at("trajectories");
  const std::size_t count = trajs.array().size();
  if (root.has("group") && root.at("group").unsigned_int() != count) {
    throw InputError("$.group", "does not match the number of trajectories");
  }
  std::optional<std::size_t> turn_count;
  if (root.has("turns")) turn_count = root.at("turns").unsigned_int();

  for (std::size_t i = 0; i < count; ++i) {
    const Node tn = trajs.at(i);
    Trajectory traj;
    traj.index = i;
    if (tn.at("index").unsigned_int() != i) throw InputError(tn.path + ".index", "must equal position");
    traj.seed = tn.at("seed").unsigned_int();
    traj.discounted_reward = tn.at("discounted_reward").number();

    const Node turns = tn.at("turns");
    const std::size_t nturns = turns.array().size();
    if (nturns == 0) throw InputError(turns.path, "trajectory has no turns");
    if (turn_count && *turn_count != nturns) throw InputError(turns.path, "turn count differs from $.turns");

    std::size_t offset = 0;
    std::size_t token_index = 0;
    std::vector<double> totals;
    for (std::size_t t = 0; t < nturns; ++t) {
      const Node un = turns.at(t);
      Turn turn;
      turn.index = static_cast<int>(un.at("index").unsigned_int());
      if (turn.index != static_cast<int>(t + 1)) throw InputError(un.path + ".index", "turn indices must run 1..T");
      turn.seed = un.has("seed") ? un.at("seed").unsigned_int() : 0;
      turn.text_offset = un.at("text_offset").unsigned_int();
      if (turn.text_offset != offset) {
        throw InputError(un.path + ".text_offset", "expected " + std::to_string(offset));
      }
      turn.rollout = parse_rollout(un.at("raw_text").string());
      const std::size_t end = offset + turn.rollout.raw_text.size();

      const Node tokens = un.at("tokens");
      std::size_t last_end = offset;
      for (std::size_t k = 0; k < tokens.array().size(); ++k) {
        TokenRecord tok = read_token(tokens.at(k));
        const std::string tp = tokens.path + "[" + std::to_string(k) + "]";
        if (tok.index != token_index) {
          throw InputError(tp + ".index", "expected " + std::to_string(token_index));
        }
        if (tok.span.begin < last_end || tok.span.end > end) {
          throw InputError(tp + ".span", "tokens must be ordered, non-overlapping and inside the turn text");
        }
        last_end = tok.span.end;
        ++token_index;
        turn.tokens.push_back(std::move(tok));
      }
      turn.reward = read_reward(un.at("reward"));
      turn.feedback = read_feedback(un.at("feedback"));
      totals.push_back(turn.reward.total);
      offset = end;
      traj.turns.push_back(std::move(turn));
    }
    const double expected = discounted_reward(totals, g.gamma);
    if (std::abs(expected - traj.discounted_reward) > 1e-9 * std::max(1.0, std::abs(expected))) {
      throw InputError(tn.path + ".discounted_reward",
                       "inconsistent with turn totals (expected " + format_number(expected) + ")");
    }
    g.trajectories.push_back(std::move(traj));
  }
  return g;
}

void write_dump_line(std::ostream& out, const TrajectoryGroup& g) {
  out << group_to_json(g).dump() << '\n';
}

std::vector<TrajectoryGroup> read_dump(std::istream& in) {
  std::vector<TrajectoryGroup> groups;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(lineno);
    const json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw InputError(where, "invalid JSON");
    try {
      groups.push_back(group_from_json(j));
    } catch (const InputError& e) {
      throw InputError(where + ": " + e.path(), e.message());
    }
  }
  return groups;
}

std::vector<TrajectoryGroup> read_dump_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError(path, "cannot open file");
  try {
    return read_dump(in);
  } catch (const InputError& e) {
    throw InputError(path + ": " + e.path(), e.message());
  }
}

nlohmann::json advantages_to_json(const TrajectoryGroup& group, const AdvantageResult& adv,
                                  const SurrogateResult& surrogate, const SpoParams& params) {
  json trajs = json::array();
  for (std::size_t i = 0; i < group.trajectories.size(); ++i) {
    const auto& traj = group.trajectories[i];
    const auto& labels = adv.masks[i].labels;
    const auto& values = adv.advantages.advantages[i];
    const auto& terms = surrogate.terms[i];
    json tokens = json::array();
    std::size_t k = 0;
    for (const auto& turn : traj.turns) {
      for (const auto& tok : turn.tokens) {
        json t = {{"index", tok.index}};
        if (labels[k]) {
          t["label"] = "coord";
          t["object"] = labels[k]->object_id;
          t["axis"] = axis_name(labels[k]->axis);
        } else {
          t["label"] = "not_coord";
        }
        t["advantage"] = values[k];
        t["policy_term"] = terms[k].policy;
        t["kl_term"] = terms[k].kl;
        tokens.push_back(std::move(t));
        ++k;
      }
    }
    trajs.push_back({{"index", traj.index},
                     {"discounted_reward", traj.discounted_reward},
                     {"tokens", std::move(tokens)}});
  }
  return {{"schema_version", kSchemaVersion},
          {"kind", "advantages"},
          {"task_id", group.task_id()},
          {"group_mean", adv.advantages.group_mean},
          {"group_std", adv.advantages.group_std},
          {"objective", surrogate.objective},
          {"config",
           {{"w_phys", params.w_phys},
            {"modulation", to_string(params.modulation)},
            {"epsilon", params.epsilon},
            {"kl_beta", params.kl_beta},
            {"sigma_floor", params.sigma_floor}}},
          {"trajectories", std::move(trajs)}};
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError(path, "cannot open file");
  std::stringstream ss;
  ss << in.rdbuf();
  json j = json::parse(ss.str(), nullptr, false);
  if (j.is_discarded()) throw InputError(path, "invalid JSON");
  return j;
}

}  // namespace metaspatial
