#pragma once

// Every tunable constant of the engine in one place. Loaded from a JSON file
// (all sections and keys optional, unknown keys rejected) and then overridden
// by command-line flags.

#include <cstdint>
#include <string>

#include <json.hpp>

#include "metaspatial/spo.hpp"
#include "metaspatial/toy_policy.hpp"
#include "metaspatial/trajectory.hpp"

namespace metaspatial {

struct TrainSettings {
  std::size_t steps = 300;
  double learning_rate = 100.0;
  std::size_t bins = 24;
  double init_scale = 0.0;
  std::size_t updates_per_step = 1;
};

struct EngineConfig {
  RewardWeights weights;
  PhysicsParams physics;
  SpoParams spo;
  RolloutSettings rollout;
  std::uint64_t seed = 1;
  StageConfig stages;
  JudgeConfig judge;
  TrainSettings train;

  EnvironmentConfig environment() const { return {physics, judge}; }
  StageConfig stage_config() const;
  toy::TrainConfig train_config() const;
};

// Throws InputError naming the offending key ("$.spo.epsilon").
EngineConfig config_from_json(const nlohmann::json& j, EngineConfig base = {});
nlohmann::json config_to_json(const EngineConfig& c);
EngineConfig load_config(const std::string& path);

// Re-checks every cross-module constraint; throws InputError.
void validate(const EngineConfig& c);

StageSchedule stage_schedule_from_string(std::string_view s);
std::string_view to_string(StageSchedule s);
JudgeMode judge_mode_from_string(std::string_view s);
std::string_view to_string(JudgeMode m);
Modulation modulation_from_string(std::string_view s);

}  // namespace metaspatial
