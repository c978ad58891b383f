#include "metaspatial/config.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "metaspatial/errors.hpp"
#include "metaspatial/serialize.hpp"

namespace metaspatial {

using nlohmann::json;

StageConfig EngineConfig::stage_config() const {
  StageConfig s = stages;
  s.full = weights;
  return s;
}

toy::TrainConfig EngineConfig::train_config() const {
  toy::TrainConfig t;
  t.steps = train.steps;
  t.rollout = rollout;
  t.learning_rate = train.learning_rate;
  t.seed = seed;
  t.spo = spo;
  t.bins = train.bins;
  t.init_scale = train.init_scale;
  t.updates_per_step = train.updates_per_step;
  t.stages = stage_config();
  t.env = environment();
  return t;
}

StageSchedule stage_schedule_from_string(std::string_view s) {
  if (s == "constant") return StageSchedule::constant;
  if (s == "staged") return StageSchedule::staged;
  throw InputError("", "unknown stage schedule '" + std::string(s) + "' (constant|staged)");
}

std::string_view to_string(StageSchedule s) {
  return s == StageSchedule::constant ? "constant" : "staged";
}

JudgeMode judge_mode_from_string(std::string_view s) {
  if (s == "stub") return JudgeMode::stub;
  if (s == "remote") return JudgeMode::remote;
  throw InputError("", "unknown judge mode '" + std::string(s) + "' (stub|remote)");
}

std::string_view to_string(JudgeMode m) { return m == JudgeMode::stub ? "stub" : "remote"; }

Modulation modulation_from_string(std::string_view s) {
  if (s == "subtractive") return Modulation::subtractive;
  if (s == "multiplicative") return Modulation::multiplicative;
  throw InputError("", "unknown modulation '" + std::string(s) + "' (subtractive|multiplicative)");
}

namespace {

struct Section {
  const json& j;
  std::string path;
  std::map<std::string, std::function<void(const json&, const std::string&)>> fields;

  void apply() const {
    if (!j.is_object()) throw InputError(path, "expected an object");
    for (const auto& [key, value] : j.items()) {
      auto it = fields.find(key);
      if (it == fields.end()) throw InputError(path + "." + key, "unknown key");
      it->second(value, path + "." + key);
    }
  }
};

auto real(double& out) {
  return [&out](const json& v, const std::string& p) {
    if (!v.is_number()) throw InputError(p, "expected a number");
    out = v.get<double>();
    if (!std::isfinite(out)) throw InputError(p, "expected a finite number");
  };
}

template <typename T>
auto count(T& out) {
  return [&out](const json& v, const std::string& p) {
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
      throw InputError(p, "expected a non-negative integer");
    }
    out = static_cast<T>(v.get<std::int64_t>());
  };
}

auto text(std::string& out) {
  return [&out](const json& v, const std::string& p) {
    if (!v.is_string()) throw InputError(p, "expected a string");
    out = v.get<std::string>();
  };
}

template <typename E>
auto choice(E& out, E (*parse)(std::string_view)) {
  return [&out, parse](const json& v, const std::string& p) {
    if (!v.is_string()) throw InputError(p, "expected a string");
    try {
      out = parse(v.get<std::string>());
    } catch (const InputError& e) {
      throw InputError(p, e.message());
    }
  };
}

void require(bool ok, const char* path, const std::string& what) {
  if (!ok) throw InputError(path, what);
}

}  // namespace

EngineConfig config_from_json(const json& j, EngineConfig c) {
  if (!j.is_object()) throw InputError("$", "config must be a JSON object");
  int override_grade = 0;
  bool has_override = false;
  std::string prompt_file;

  for (const auto& [name, value] : j.items()) {
    const std::string path = "$." + name;
    if (name == "schema_version") {
      if (!value.is_number_integer() || value.get<int>() != 1) {
        throw InputError(path, "unsupported schema version");
      }
    } else if (name == "reward") {
      Section{value, path,
              {{"lambda_format", real(c.weights.format)},
               {"lambda_physics", real(c.weights.physics)},
               {"lambda_render", real(c.weights.render)},
               {"alpha", real(c.physics.alpha)},
               {"beta", real(c.physics.beta)}}}
          .apply();
    } else if (name == "physics") {
      Section{value, path,
              {{"bound_tolerance_m", real(c.physics.bound_tolerance_m)},
               {"support_tolerance_m", real(c.physics.support_tolerance_m)}}}
          .apply();
    } else if (name == "spo") {
      Section{value, path,
              {{"w_phys", real(c.spo.w_phys)},
               {"modulation", choice(c.spo.modulation, &modulation_from_string)},
               {"epsilon", real(c.spo.epsilon)},
               {"kl_beta", real(c.spo.kl_beta)},
               {"sigma_floor", real(c.spo.sigma_floor)}}}
          .apply();
    } else if (name == "rollout") {
      Section{value, path,
              {{"group", count(c.rollout.group)},
               {"turns", count(c.rollout.turns)},
               {"gamma", real(c.rollout.gamma)},
               {"seed", count(c.seed)}}}
          .apply();
    } else if (name == "stages") {
      Section{value, path,
              {{"schedule", choice(c.stages.schedule, &stage_schedule_from_string)},
               {"window", count(c.stages.window)},
               {"format_gate", real(c.stages.format_gate)},
               {"render_delay", count(c.stages.render_delay)}}}
          .apply();
    } else if (name == "judge") {
      Section{value, path,
              {{"mode", choice(c.judge.mode, &judge_mode_from_string)},
               {"endpoint", text(c.judge.endpoint)},
               {"timeout_s", real(c.judge.timeout_s)},
               {"retries", count(c.judge.retries)},
               {"backoff_initial_s", real(c.judge.backoff_initial_s)},
               {"stub_color_scheme", count(c.judge.stub_color_scheme)},
               {"color_scheme_override",
                [&](const json& v, const std::string& p) {
                  if (v.is_null()) {
                    c.judge.color_scheme_override.reset();
                    return;
                  }
                  count(override_grade)(v, p);
                  has_override = true;
                }},
               {"api_key_env", text(c.judge.api_key_env)},
               {"prompt_template_file", text(prompt_file)}}}
          .apply();
    } else if (name == "train") {
      Section{value, path,
              {{"steps", count(c.train.steps)},
               {"learning_rate", real(c.train.learning_rate)},
               {"bins", count(c.train.bins)},
               {"init_scale", real(c.train.init_scale)},
               {"updates_per_step", count(c.train.updates_per_step)}}}
          .apply();
    } else {
      throw InputError(path, "unknown section");
    }
  }
  if (has_override) c.judge.color_scheme_override = override_grade;
  if (!prompt_file.empty()) {
    std::ifstream in(prompt_file);
    if (!in) throw InputError("$.judge.prompt_template_file", "cannot open '" + prompt_file + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    c.judge.prompt_template = ss.str();
  }
  validate(c);
  return c;
}

void validate(const EngineConfig& c) {
  require(c.weights.format >= 0, "$.reward.lambda_format", "must be >= 0");
  require(c.weights.physics >= 0, "$.reward.lambda_physics", "must be >= 0");
  require(c.weights.render >= 0, "$.reward.lambda_render", "must be >= 0");
  require(c.physics.alpha >= 0, "$.reward.alpha", "must be >= 0");
  require(c.physics.beta >= 0, "$.reward.beta", "must be >= 0");
  require(c.physics.bound_tolerance_m >= 0, "$.physics.bound_tolerance_m", "must be >= 0");
  require(c.physics.support_tolerance_m >= 0, "$.physics.support_tolerance_m", "must be >= 0");
  require(c.spo.w_phys >= 0, "$.spo.w_phys", "must be >= 0");
  require(c.spo.epsilon > 0, "$.spo.epsilon", "must be > 0");
  require(c.spo.kl_beta >= 0, "$.spo.kl_beta", "must be >= 0");
  require(c.spo.sigma_floor > 0, "$.spo.sigma_floor", "must be > 0");
  require(c.rollout.group >= 2, "$.rollout.group", "group size must be >= 2");
  require(c.rollout.turns >= 1, "$.rollout.turns", "must be >= 1");
  require(c.rollout.gamma > 0 && c.rollout.gamma <= 1, "$.rollout.gamma", "must lie in (0, 1]");
  require(c.stages.window >= 1, "$.stages.window", "must be >= 1");
  require(c.stages.format_gate >= 0 && c.stages.format_gate <= 1, "$.stages.format_gate",
          "must lie in [0, 1]");
  require(c.judge.timeout_s > 0, "$.judge.timeout_s", "must be > 0");
  require(c.judge.backoff_initial_s >= 0, "$.judge.backoff_initial_s", "must be >= 0");
  require(c.judge.stub_color_scheme >= 1 && c.judge.stub_color_scheme <= 10,
          "$.judge.stub_color_scheme", "must lie in 1..10");
  require(!c.judge.color_scheme_override ||
              (*c.judge.color_scheme_override >= 1 && *c.judge.color_scheme_override <= 10),
          "$.judge.color_scheme_override", "must lie in 1..10");
  require(!c.judge.endpoint.empty(), "$.judge.endpoint", "must not be empty");
  require(c.train.learning_rate >= 0, "$.train.learning_rate", "must be >= 0");
  require(c.train.bins >= 2, "$.train.bins", "must be >= 2");
  require(c.train.init_scale >= 0, "$.train.init_scale", "must be >= 0");
}

nlohmann::json config_to_json(const EngineConfig& c) {
  return {{"schema_version", 1},
          {"reward",
           {{"lambda_format", c.weights.format},
            {"lambda_physics", c.weights.physics},
            {"lambda_render", c.weights.render},
            {"alpha", c.physics.alpha},
            {"beta", c.physics.beta}}},
          {"physics",
           {{"bound_tolerance_m", c.physics.bound_tolerance_m},
            {"support_tolerance_m", c.physics.support_tolerance_m}}},
          {"spo",
           {{"w_phys", c.spo.w_phys},
            {"modulation", to_string(c.spo.modulation)},
            {"epsilon", c.spo.epsilon},
            {"kl_beta", c.spo.kl_beta},
            {"sigma_floor", c.spo.sigma_floor}}},
          {"rollout",
           {{"group", c.rollout.group},
            {"turns", c.rollout.turns},
            {"gamma", c.rollout.gamma},
            {"seed", c.seed}}},
          {"stages",
           {{"schedule", to_string(c.stages.schedule)},
            {"window", c.stages.window},
            {"format_gate", c.stages.format_gate},
            {"render_delay", c.stages.render_delay}}},
          {"judge",
           {{"mode", to_string(c.judge.mode)},
            {"endpoint", c.judge.endpoint},
            {"timeout_s", c.judge.timeout_s},
            {"retries", c.judge.retries},
            {"backoff_initial_s", c.judge.backoff_initial_s},
            {"stub_color_scheme", c.judge.stub_color_scheme},
            {"color_scheme_override",
             c.judge.color_scheme_override ? json(*c.judge.color_scheme_override) : json(nullptr)},
            {"api_key_env", c.judge.api_key_env}}},
          {"train",
           {{"steps", c.train.steps},
            {"learning_rate", c.train.learning_rate},
            {"bins", c.train.bins},
            {"init_scale", c.train.init_scale},
            {"updates_per_step", c.train.updates_per_step}}}};
}

EngineConfig load_config(const std::string& path) {
  const json j = read_json_file(path);
  try {
    return config_from_json(j);
  } catch (const InputError& e) {
    throw InputError(path + ": " + e.path(), e.message());
  }
}

}  // namespace metaspatial
