#include "metaspatial/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <numeric>
#include <stdexcept>

namespace metaspatial {

double total_reward(double format, const PhysicsReport& physics, const RenderReward& render,
                    const RewardWeights& weights) {
  return weights.render * render.value + weights.format * format +
         weights.physics * physics.physics_reward;
}

RewardEnvironment::RewardEnvironment(EnvironmentConfig config, ImageProvider images)
    : config_(std::move(config)), images_(std::move(images)) {}

ScoredRollOut RewardEnvironment::score(const ParsedRollOut& parsed, const SceneTask& task,
                                       const RewardWeights& weights) const {
  ScoredRollOut out;
  RewardBreakdown& r = out.reward;
  r.format = format_reward(parsed, task);
  out.feedback.format_failure = r.format.failed_check;

  const auto& phys = config_.physics;
  const bool scorable = r.format.failed_check == FormatCheck::none;
  if (scorable) {
    const SceneGraph graph = build_scene_graph(*parsed.layout, task, phys);
    r.physics = physics_report(graph, phys.alpha, phys.beta);
    out.feedback.colliding_pairs = graph.colliding_id_pairs();
    out.feedback.violations = graph.violations_by_id();
  } else {
    r.physics = unscorable_physics_report(task, phys.alpha, phys.beta);
  }

  const auto& judge = config_.judge;
  const LayoutStats stats{r.physics.collision_ratio, r.physics.constraint_ratio};
  if (scorable && weights.render > 0.0 && judge.mode == JudgeMode::remote) {
    JudgeRequest request{task.user_preference, std::nullopt, stats};
    if (images_) request.image = images_(task, *parsed.layout);
    r.render = render_reward(query_judge(request, judge), RenderSource::remote_judge);
  } else {
    r.render = render_reward(
        stub_grades(stats.collision_ratio, stats.constraint_ratio, judge.stub_color_scheme),
        RenderSource::stub);
  }
  out.feedback.judge_grades = r.render.grades;
  r.total = total_reward(r.format.score, r.physics, r.render, weights);
  return out;
}

std::size_t Trajectory::token_count() const {
  std::size_t n = 0;
  for (const auto& t : turns) n += t.tokens.size();
  return n;
}

std::string Trajectory::text() const {
  std::string s;
  for (const auto& t : turns) s += t.rollout.raw_text;
  return s;
}

double discounted_reward(std::span<const double> totals, double gamma) {
  double sum = 0.0;
  double weight = gamma;
  for (double r : totals) {
    sum += weight * r;
    weight *= gamma;
  }
  return sum;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over the combined words
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

void validate(const RolloutSettings& s) {
  if (s.turns < 1) throw std::invalid_argument("turns must be >= 1");
  if (!(s.gamma > 0.0 && s.gamma <= 1.0)) throw std::invalid_argument("gamma must be in (0, 1]");
}

}  // namespace

Trajectory run_trajectory(PolicyPort& policy, const RewardEnvironment& env, const SceneTask& task,
                          const RolloutSettings& settings, const RewardWeights& weights,
                          std::uint64_t seed, std::size_t trajectory_index) {
  validate(settings);
  Trajectory traj;
  traj.index = trajectory_index;
  traj.seed = seed;
  std::size_t offset = 0;
  std::size_t token_index = 0;
  std::vector<double> totals;

  for (int t = 1; t <= settings.turns; ++t) {
    const Turn* prev = traj.turns.empty() ? nullptr : &traj.turns.back();
    const std::uint64_t turn_seed = derive_seed(seed, static_cast<std::uint64_t>(t));
    PolicyQuery query{task, t, trajectory_index, turn_seed,
                      prev != nullptr ? &prev->rollout : nullptr,
                      prev != nullptr ? &prev->feedback : nullptr};
    PolicyOutput out;
    try {
      out = policy.generate(query);
    } catch (const std::exception& e) {
      throw TrajectoryError("turn " + std::to_string(t) + ": policy failed: " + e.what());
    }

    Turn turn;
    turn.index = t;
    turn.seed = turn_seed;
    turn.text_offset = offset;
    turn.rollout = parse_rollout(out.raw_text);
    for (auto& tok : out.tokens) {
      if (tok.span.end > out.raw_text.size() || tok.span.begin > tok.span.end) {
        throw TrajectoryError("turn " + std::to_string(t) + ": token span outside roll-out text");
      }
      tok.index = token_index++;
      tok.span.begin += offset;
      tok.span.end += offset;
    }
    turn.tokens = std::move(out.tokens);
    auto scored = env.score(turn.rollout, task, weights);
    turn.reward = std::move(scored.reward);
    turn.feedback = std::move(scored.feedback);
    totals.push_back(turn.reward.total);
    offset += out.raw_text.size();
    traj.turns.push_back(std::move(turn));
  }
  traj.discounted_reward = discounted_reward(totals, settings.gamma);
  return traj;
}

TrajectoryGroup run_group(PolicyPort& policy, const RewardEnvironment& env, const SceneTask& task,
                          const RolloutSettings& settings, const RewardWeights& weights,
                          std::uint64_t seed) {
  if (settings.group < 2) throw std::invalid_argument("group size must be >= 2");
  validate(settings);

  TrajectoryGroup group;
  group.task = task;
  group.seed = seed;
  group.gamma = settings.gamma;
  group.trajectories.resize(settings.group);
  std::vector<std::exception_ptr> errors(settings.group);

  const auto n = static_cast<std::int64_t>(settings.group);
  // Each slot is written by exactly one iteration, so output order does not
  // depend on scheduling.
#pragma omp parallel for schedule(dynamic, 1) if (policy.concurrent_safe())
  for (std::int64_t i = 0; i < n; ++i) {
    const auto u = static_cast<std::size_t>(i);
    try {
      group.trajectories[u] = run_trajectory(policy, env, task, settings, weights,
                                             derive_seed(seed, u), u);
    } catch (...) {
      errors[u] = std::current_exception();
    }
  }
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const std::exception& e) {
      throw TrajectoryError("trajectory " + std::to_string(i) + ": " + e.what());
    }
  }
  return group;
}

std::string_view to_string(RewardStage s) {
  switch (s) {
    case RewardStage::format_only: return "format_only";
    case RewardStage::format_physics: return "format_physics";
    case RewardStage::full: return "full";
  }
  return "full";
}

StageScheduler::StageScheduler(StageConfig config)
    : config_(config),
      stage_(config.schedule == StageSchedule::constant ? RewardStage::full
                                                        : RewardStage::format_only) {}

RewardWeights StageScheduler::weights() const {
  RewardWeights w = config_.full;
  if (stage_ != RewardStage::full) w.render = 0.0;
  if (stage_ == RewardStage::format_only) w.physics = 0.0;
  return w;
}

double StageScheduler::format_accuracy() const {
  if (window_.empty()) return 0.0;
  const auto hits = std::count(window_.begin(), window_.end(), true);
  return static_cast<double>(hits) / static_cast<double>(window_.size());
}

void StageScheduler::observe(const TrajectoryGroup& group) {
  if (stage_ == RewardStage::full) return;
  for (const auto& traj : group.trajectories) {
    for (const auto& turn : traj.turns) {
      window_.push_back(turn.reward.format.failed_check == FormatCheck::none);
      if (window_.size() > config_.window) window_.pop_front();
    }
  }
  if (stage_ == RewardStage::format_only) {
    if (window_.size() >= config_.window && format_accuracy() > config_.format_gate) {
      stage_ = RewardStage::format_physics;
      groups_in_stage_ = 0;
    }
    return;
  }
  if (++groups_in_stage_ >= config_.render_delay) stage_ = RewardStage::full;
}

}  // namespace metaspatial
