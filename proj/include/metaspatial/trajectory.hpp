#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "metaspatial/errors.hpp"
#include "metaspatial/format_reward.hpp"
#include "metaspatial/judge.hpp"
#include "metaspatial/layout.hpp"
#include "metaspatial/physics.hpp"
#include "metaspatial/tokens.hpp"

namespace metaspatial {

// Weights of the composite reward. The defaults, together with
// PhysicsParams{alpha = beta = 0.2}, give
//   total = render + 0.5 * format - 0.2 * collision - 0.2 * constraint.
struct RewardWeights {
  double format = 0.5;   // lambda_1
  double physics = 1.0;  // lambda_2, multiplies the already weighted physics reward
  double render = 1.0;   // lambda_3

  friend bool operator==(const RewardWeights&, const RewardWeights&) = default;
};

double total_reward(double format, const PhysicsReport& physics, const RenderReward& render,
                    const RewardWeights& weights);

struct RewardBreakdown {
  FormatScore format;
  PhysicsReport physics;
  RenderReward render;
  double total = 0.0;
};

// What the environment tells the policy about its previous turn.
struct FeedbackRecord {
  FormatCheck format_failure = FormatCheck::none;
  std::vector<std::pair<std::string, std::string>> colliding_pairs;
  std::map<std::string, ViolationSet> violations;
  std::optional<JudgeGrades> judge_grades;
};

struct ScoredRollOut {
  RewardBreakdown reward;
  FeedbackRecord feedback;
};

struct EnvironmentConfig {
  PhysicsParams physics;
  JudgeConfig judge;
};

// Scores one roll-out: format rubric, physics checks, judge. Layouts that do
// not pass the format rubric get the worst-case physics report.
class RewardEnvironment {
 public:
  explicit RewardEnvironment(EnvironmentConfig config = {}, ImageProvider images = {});

  ScoredRollOut score(const ParsedRollOut& parsed, const SceneTask& task,
                      const RewardWeights& weights) const;

  const EnvironmentConfig& config() const { return config_; }

 private:
  EnvironmentConfig config_;
  ImageProvider images_;
};

struct Turn {
  int index = 1;  // 1-based
  std::uint64_t seed = 0;
  std::size_t text_offset = 0;  // start of this turn in the trajectory text
  ParsedRollOut rollout;
  std::vector<TokenRecord> tokens;  // indices and spans are trajectory-level
  RewardBreakdown reward;
  FeedbackRecord feedback;
};

struct Trajectory {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  std::vector<Turn> turns;
  double discounted_reward = 0.0;

  std::size_t token_count() const;
  std::string text() const;  // concatenation of turn texts
};

struct TrajectoryGroup {
  SceneTask task;
  std::uint64_t seed = 0;
  double gamma = 0.9;
  std::vector<Trajectory> trajectories;

  const std::string& task_id() const { return task.id; }
};

// sum_{t=1..T} gamma^t * totals[t-1]
double discounted_reward(std::span<const double> totals, double gamma);

struct PolicyQuery {
  const SceneTask& task;
  int turn = 1;
  std::size_t trajectory = 0;
  std::uint64_t seed = 0;
  const ParsedRollOut* previous = nullptr;
  const FeedbackRecord* feedback = nullptr;
};

struct PolicyOutput {
  std::string raw_text;
  std::vector<TokenRecord> tokens;  // spans relative to raw_text
};

class PolicyPort {
 public:
  virtual ~PolicyPort() = default;
  virtual PolicyOutput generate(const PolicyQuery& query) = 0;
  // True when generate() may be called from several threads at once.
  virtual bool concurrent_safe() const noexcept { return false; }
};

struct RolloutSettings {
  std::size_t group = 4;  // G
  int turns = 3;          // T
  double gamma = 0.9;
};

class TrajectoryError : public EngineError {
 public:
  using EngineError::EngineError;
};

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

Trajectory run_trajectory(PolicyPort& policy, const RewardEnvironment& env, const SceneTask& task,
                          const RolloutSettings& settings, const RewardWeights& weights,
                          std::uint64_t seed, std::size_t trajectory_index = 0);

// Trajectory i is seeded with derive_seed(seed, i). Throws std::invalid_argument
// for group < 2.
TrajectoryGroup run_group(PolicyPort& policy, const RewardEnvironment& env, const SceneTask& task,
                          const RolloutSettings& settings, const RewardWeights& weights,
                          std::uint64_t seed);

enum class StageSchedule { constant, staged };
enum class RewardStage { format_only, format_physics, full };

std::string_view to_string(RewardStage s);

struct StageConfig {
  StageSchedule schedule = StageSchedule::constant;
  std::size_t window = 64;       // roll-outs in the format-accuracy window
  double format_gate = 0.9;      // accuracy needed to switch physics on
  std::size_t render_delay = 50;  // groups observed in format_physics before render
  RewardWeights full;
};

// Step-function reward schedule driven by observed format accuracy.
class StageScheduler {
 public:
  explicit StageScheduler(StageConfig config = {});

  RewardWeights weights() const;
  RewardStage stage() const { return stage_; }
  void observe(const TrajectoryGroup& group);
  double format_accuracy() const;

 private:
  StageConfig config_;
  RewardStage stage_;
  std::deque<bool> window_;
  std::size_t groups_in_stage_ = 0;
};

}  // namespace metaspatial
