#pragma once

// A small stochastic layout policy: every (object, axis, turn) owns a row of
// logits over B coordinate bins. Log-probabilities are exact, so the
// surrogate can be differentiated analytically and the whole training loop
// runs without a language model.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "metaspatial/spo.hpp"
#include "metaspatial/trajectory.hpp"

namespace metaspatial::toy {

struct GridPolicyParams {
  std::size_t objects = 0;
  std::size_t turns = 0;
  std::size_t bins = 24;
  std::vector<double> logits;  // [object][axis][turn][bin], row-major

  std::size_t rows() const { return objects * 3 * turns; }
  std::size_t slot(std::size_t object, Axis axis, int turn) const;
  std::span<double> row(std::size_t slot);
  std::span<const double> row(std::size_t slot) const;

  friend bool operator==(const GridPolicyParams&, const GridPolicyParams&) = default;
};

GridPolicyParams zero_params(std::size_t objects, std::size_t turns, std::size_t bins);

// One random N(0, scale^2) row per (axis, turn), copied to every object: an
// untrained policy that does not yet tell objects apart. scale 0 gives the
// uniform policy.
GridPolicyParams shared_prior_params(std::size_t objects, std::size_t turns, std::size_t bins,
                                     double scale, std::uint64_t seed);

// B centers evenly spanning [size/2, extent - size/2] (both ends included),
// rounded to the millimetre. Every center keeps the object inside the room.
std::vector<double> bin_centers(const SceneTask& task, std::size_t object, Axis axis,
                                std::size_t bins);

// log softmax(row)[choice] with the masked entries removed.
double masked_log_prob(std::span<const double> row, std::span<const std::size_t> masked,
                       std::size_t choice);

struct SampleRequest {
  const SceneTask& task;
  int turn = 1;
  std::uint64_t seed = 0;
  const ParsedRollOut* previous = nullptr;
  const FeedbackRecord* feedback = nullptr;
};

// Roll-out text plus one token per structural fragment and per coordinate
// literal, each with log-probs under current, behavior and reference params.
PolicyOutput sample_rollout(const GridPolicyParams& current, const GridPolicyParams& behavior,
                            const GridPolicyParams& reference, const SampleRequest& request);

class ToyPolicy final : public PolicyPort {
 public:
  ToyPolicy(const GridPolicyParams& current, const GridPolicyParams& behavior,
            const GridPolicyParams& reference);

  PolicyOutput generate(const PolicyQuery& query) override;
  bool concurrent_safe() const noexcept override { return true; }

 private:
  const GridPolicyParams& current_;
  const GridPolicyParams& behavior_;
  const GridPolicyParams& reference_;
};

// Copy of the group with logprob_new recomputed under `params` for every
// action token.
TrajectoryGroup rescore(const GridPolicyParams& params, const TrajectoryGroup& group);

// d(surrogate)/d(logits), evaluated with logprob_new taken from `params`.
// Throws std::invalid_argument when the group's actions do not fit the shape.
std::vector<double> logprob_grad(const GridPolicyParams& params, const TrajectoryGroup& group,
                                 const AdvantageSet& advantages, double epsilon, double kl_beta);

struct TrainConfig {
  std::size_t steps = 300;
  RolloutSettings rollout;
  double learning_rate = 100.0;  // the surrogate is averaged over ~90 tokens per trajectory
  std::uint64_t seed = 1;
  SpoParams spo;
  std::size_t bins = 24;
  double init_scale = 0.0;
  std::size_t updates_per_step = 1;
  std::size_t baseline_groups = 50;  // groups sampled when steps == 0
  StageConfig stages;
  EnvironmentConfig env;
};

struct StepMetrics {
  std::size_t step = 0;
  double mean_total = 0.0;
  double collision_ratio = 0.0;
  double constraint_ratio = 0.0;
  double format_acc = 0.0;
};

StepMetrics group_metrics(std::size_t step, const TrajectoryGroup& group);

struct TrainResult {
  GridPolicyParams initial;
  GridPolicyParams params;
  std::vector<StepMetrics> log;
};

// Each step: sample a group with the current params, score it, compute
// advantages, take `updates_per_step` gradient-ascent steps. Step k's metrics
// describe the group sampled before its update. steps = 0 samples
// `baseline_groups` groups from the initial params, logs each as step 0 and
// leaves the params untouched.
TrainResult train(std::span<const SceneTask> tasks, const TrainConfig& config,
                  const std::function<void(const StepMetrics&)>& on_step = {});

nlohmann::json params_to_json(const GridPolicyParams& params);
GridPolicyParams params_from_json(const nlohmann::json& j);
nlohmann::json metrics_to_json(const StepMetrics& m);

}  // namespace metaspatial::toy
