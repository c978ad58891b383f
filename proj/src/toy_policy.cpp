#include "metaspatial/toy_policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "metaspatial/errors.hpp"
#include "metaspatial/version.hpp"

namespace metaspatial::toy {

std::size_t GridPolicyParams::slot(std::size_t object, Axis axis, int turn) const {
  return (object * 3 + static_cast<std::size_t>(axis)) * turns + static_cast<std::size_t>(turn - 1);
}

std::span<double> GridPolicyParams::row(std::size_t s) {
  return std::span<double>(logits).subspan(s * bins, bins);
}

std::span<const double> GridPolicyParams::row(std::size_t s) const {
  return std::span<const double>(logits).subspan(s * bins, bins);
}

GridPolicyParams zero_params(std::size_t objects, std::size_t turns, std::size_t bins) {
  if (bins < 2) throw std::invalid_argument("grid policy needs at least 2 bins");
  if (objects == 0 || turns == 0) throw std::invalid_argument("grid policy needs objects and turns");
  GridPolicyParams p{objects, turns, bins, {}};
  p.logits.assign(p.rows() * bins, 0.0);
  return p;
}

GridPolicyParams shared_prior_params(std::size_t objects, std::size_t turns, std::size_t bins,
                                     double scale, std::uint64_t seed) {
  GridPolicyParams p = zero_params(objects, turns, bins);
  if (scale == 0.0) return p;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Axis a : kAxes) {
    for (std::size_t t = 1; t <= turns; ++t) {
      std::vector<double> prior(bins);
      for (auto& v : prior) v = scale * normal(rng);
      for (std::size_t o = 0; o < objects; ++o) {
        auto row = p.row(p.slot(o, a, static_cast<int>(t)));
        std::copy(prior.begin(), prior.end(), row.begin());
      }
    }
  }
  return p;
}

std::vector<double> bin_centers(const SceneTask& task, std::size_t object, Axis axis,
                                std::size_t bins) {
  const double size = task.objects.at(object).size_m[axis];
  const double extent = task.room.extent()[axis];
  const double lo = std::min(size / 2, extent / 2);
  const double hi = std::max(extent - size / 2, extent / 2);
  std::vector<double> centers(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    const double c = lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(bins - 1);
    centers[b] = std::round(c * 1000.0) / 1000.0;
  }
  return centers;
}

namespace {

bool is_masked(std::span<const std::size_t> masked, std::size_t j) {
  return std::find(masked.begin(), masked.end(), j) != masked.end();
}

// Masked softmax probabilities; masked entries are 0.
std::vector<double> masked_softmax(std::span<const double> row, std::span<const std::size_t> masked) {
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (!is_masked(masked, j)) top = std::max(top, row[j]);
  }
  std::vector<double> p(row.size(), 0.0);
  double z = 0.0;
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (is_masked(masked, j)) continue;
    p[j] = std::exp(row[j] - top);
    z += p[j];
  }
  for (auto& v : p) v /= z;
  return p;
}

std::size_t nearest_bin(std::span<const double> centers, double value) {
  std::size_t best = 0;
  for (std::size_t b = 1; b < centers.size(); ++b) {
    if (std::abs(centers[b] - value) < std::abs(centers[best] - value)) best = b;
  }
  return best;
}

void check_shape(const GridPolicyParams& p, const SceneTask& task, int turn) {
  if (p.objects != task.objects.size()) {
    throw std::invalid_argument("grid policy has " + std::to_string(p.objects) +
                                " object rows but the task has " +
                                std::to_string(task.objects.size()) + " objects");
  }
  if (turn < 1 || static_cast<std::size_t>(turn) > p.turns) {
    throw std::invalid_argument("turn " + std::to_string(turn) + " outside the policy's " +
                                std::to_string(p.turns) + " turn tables");
  }
}

constexpr const char* kFirstThink = "Place every object inside the room so that no two objects overlap.";
constexpr const char* kRefineThink = "Move the objects that collided in the previous layout.";

}  // namespace

double masked_log_prob(std::span<const double> row, std::span<const std::size_t> masked,
                       std::size_t choice) {
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (!is_masked(masked, j)) top = std::max(top, row[j]);
  }
  double z = 0.0;
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (!is_masked(masked, j)) z += std::exp(row[j] - top);
  }
  return row[choice] - top - std::log(z);
}

PolicyOutput sample_rollout(const GridPolicyParams& current, const GridPolicyParams& behavior,
                            const GridPolicyParams& reference, const SampleRequest& req) {
  const SceneTask& task = req.task;
  check_shape(current, task, req.turn);
  check_shape(behavior, task, req.turn);
  check_shape(reference, task, req.turn);

  // Refinement turns may not repeat a colliding object's previous x/y bin.
  std::vector<bool> collided(task.objects.size(), false);
  const Layout* prev_layout =
      req.previous != nullptr && req.previous->layout ? &*req.previous->layout : nullptr;
  if (req.turn > 1 && req.feedback != nullptr && prev_layout != nullptr) {
    for (const auto& [a, b] : req.feedback->colliding_pairs) {
      for (std::size_t o = 0; o < task.objects.size(); ++o) {
        if (task.objects[o].id == a || task.objects[o].id == b) collided[o] = true;
      }
    }
  }

  std::mt19937_64 rng(req.seed);
  Layout layout;
  std::vector<std::array<TokenAction, 3>> actions(task.objects.size());
  for (std::size_t o = 0; o < task.objects.size(); ++o) {
    Placement p{task.objects[o].id, {}};
    for (Axis a : kAxes) {
      const auto centers = bin_centers(task, o, a, current.bins);
      TokenAction act;
      act.slot = current.slot(o, a, req.turn);
      if (collided[o] && a != Axis::z) {
        for (const auto& q : prev_layout->placements) {
          if (q.object_id == p.object_id) act.masked.push_back(nearest_bin(centers, q.position[a]));
        }
      }
      const auto probs = masked_softmax(current.row(act.slot), act.masked);
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      double acc = 0.0;
      act.choice = probs.size();
      for (std::size_t b = 0; b < probs.size(); ++b) {
        if (probs[b] <= 0.0) continue;
        acc += probs[b];
        act.choice = b;
        if (u < acc) break;
      }
      p.position[a] = centers[act.choice];
      actions[o][static_cast<std::size_t>(a)] = std::move(act);
    }
    layout.placements.push_back(std::move(p));
  }

  PolicyOutput out;
  const auto pieces = serialize_rollout_pieces(req.turn == 1 ? kFirstThink : kRefineThink, layout);
  for (const auto& piece : pieces) {
    TokenRecord tok;
    tok.index = out.tokens.size();
    tok.span = {out.raw_text.size(), out.raw_text.size() + piece.text.size()};
    out.raw_text += piece.text;
    if (piece.placement && piece.axis) {
      const auto& act = actions[*piece.placement][static_cast<std::size_t>(*piece.axis)];
      tok.logprob_new = masked_log_prob(current.row(act.slot), act.masked, act.choice);
      tok.logprob_old = masked_log_prob(behavior.row(act.slot), act.masked, act.choice);
      tok.logprob_ref = masked_log_prob(reference.row(act.slot), act.masked, act.choice);
      tok.action = act;
    } else {
      // Fixed text: probability one under every snapshot.
      tok.logprob_new = tok.logprob_old = tok.logprob_ref = 0.0;
    }
    out.tokens.push_back(std::move(tok));
  }
  return out;
}

ToyPolicy::ToyPolicy(const GridPolicyParams& current, const GridPolicyParams& behavior,
                     const GridPolicyParams& reference)
    : current_(current), behavior_(behavior), reference_(reference) {}

PolicyOutput ToyPolicy::generate(const PolicyQuery& q) {
  return sample_rollout(current_, behavior_, reference_,
                        {q.task, q.turn, q.seed, q.previous, q.feedback});
}

namespace {

void check_action(const GridPolicyParams& params, const TokenAction& act) {
  if (act.slot >= params.rows() || act.choice >= params.bins ||
      std::any_of(act.masked.begin(), act.masked.end(), [&](std::size_t m) { return m >= params.bins; })) {
    throw std::invalid_argument("token action (slot " + std::to_string(act.slot) + ", choice " +
                                std::to_string(act.choice) + ") does not fit a " +
                                std::to_string(params.rows()) + "x" + std::to_string(params.bins) +
                                " grid policy");
  }
}

}  // namespace

TrajectoryGroup rescore(const GridPolicyParams& params, const TrajectoryGroup& group) {
  TrajectoryGroup out = group;
  for (auto& traj : out.trajectories) {
    for (auto& turn : traj.turns) {
      for (auto& tok : turn.tokens) {
        if (!tok.action) continue;
        check_action(params, *tok.action);
        tok.logprob_new = masked_log_prob(params.row(tok.action->slot), tok.action->masked,
                                          tok.action->choice);
      }
    }
  }
  return out;
}

std::vector<double> logprob_grad(const GridPolicyParams& params, const TrajectoryGroup& group,
                                 const AdvantageSet& advantages, double epsilon, double kl_beta) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("logprob_grad: epsilon must be > 0");
  const std::size_t g = group.trajectories.size();
  if (advantages.advantages.size() != g) {
    throw std::invalid_argument("logprob_grad: advantage set does not match group");
  }
  std::vector<double> grad(params.logits.size(), 0.0);
  for (std::size_t i = 0; i < g; ++i) {
    const auto& traj = group.trajectories[i];
    const std::size_t n = traj.token_count();
    const auto& adv = advantages.advantages[i];
    if (adv.size() != n) throw std::invalid_argument("logprob_grad: advantage length mismatch");
    if (n == 0) continue;
    const double weight = 1.0 / (static_cast<double>(g) * static_cast<double>(n));

    std::size_t k = 0;
    for (const auto& turn : traj.turns) {
      for (const auto& tok : turn.tokens) {
        const double a = adv[k++];
        if (!tok.action) continue;
        const auto& act = *tok.action;
        check_action(params, act);
        if (!tok.logprob_old || !tok.logprob_ref) {
          throw std::invalid_argument("logprob_grad: token " + std::to_string(tok.index) +
                                      " lacks behavior or reference logprob");
        }
        const auto row = params.row(act.slot);
        const double lp_new = masked_log_prob(row, act.masked, act.choice);
        const double ratio = std::exp(lp_new - *tok.logprob_old);
        const double clipped = std::clamp(ratio, 1.0 - epsilon, 1.0 + epsilon);
        // d/d(lp_new) of min(r A, clip(r) A): r A while the unclipped branch binds.
        const double d_policy = ratio * a <= clipped * a ? ratio * a : 0.0;
        // d/d(lp_new) of -beta (e^d - d - 1), d = ref - new.
        const double d_kl = kl_beta * (std::exp(*tok.logprob_ref - lp_new) - 1.0);
        const double coef = weight * (d_policy + d_kl);
        if (coef == 0.0) continue;

        const auto probs = masked_softmax(row, act.masked);
        double* out = grad.data() + act.slot * params.bins;
        for (std::size_t j = 0; j < params.bins; ++j) {
          out[j] += coef * ((j == act.choice ? 1.0 : 0.0) - probs[j]);
        }
      }
    }
  }
  return grad;
}

StepMetrics group_metrics(std::size_t step, const TrajectoryGroup& group) {
  StepMetrics m;
  m.step = step;
  std::size_t n = 0;
  for (const auto& traj : group.trajectories) {
    for (const auto& turn : traj.turns) {
      m.mean_total += turn.reward.total;
      m.collision_ratio += turn.reward.physics.collision_ratio;
      m.constraint_ratio += turn.reward.physics.constraint_ratio;
      m.format_acc += turn.reward.format.failed_check == FormatCheck::none ? 1.0 : 0.0;
      ++n;
    }
  }
  if (n > 0) {
    const double inv = 1.0 / static_cast<double>(n);
    m.mean_total *= inv;
    m.collision_ratio *= inv;
    m.constraint_ratio *= inv;
    m.format_acc *= inv;
  }
  return m;
}

TrainResult train(std::span<const SceneTask> tasks, const TrainConfig& config,
                  const std::function<void(const StepMetrics&)>& on_step) {
  if (tasks.empty()) throw std::invalid_argument("train: empty task set");
  const std::size_t objects = tasks.front().objects.size();
  for (const auto& t : tasks) {
    if (t.objects.size() != objects) {
      throw std::invalid_argument("train: all tasks must have the same number of objects");
    }
  }
  if (!(config.learning_rate >= 0.0)) throw std::invalid_argument("train: learning rate must be >= 0");

  TrainResult result;
  result.initial = shared_prior_params(objects, static_cast<std::size_t>(config.rollout.turns),
                                       config.bins, config.init_scale, derive_seed(config.seed, 0));
  result.params = result.initial;
  const GridPolicyParams& reference = result.initial;
  const RewardEnvironment env(config.env);
  StageScheduler scheduler(config.stages);

  auto record = [&](const StepMetrics& m) {
    result.log.push_back(m);
    if (on_step) on_step(m);
  };

  if (config.steps == 0) {
    ToyPolicy policy(result.params, result.params, reference);
    for (std::size_t k = 0; k < std::max<std::size_t>(config.baseline_groups, 1); ++k) {
      const auto group = run_group(policy, env, tasks[k % tasks.size()], config.rollout,
                                   scheduler.weights(), derive_seed(config.seed, k + 1));
      record(group_metrics(0, group));
    }
    return result;
  }

  for (std::size_t step = 1; step <= config.steps; ++step) {
    const SceneTask& task = tasks[(step - 1) % tasks.size()];
    TrajectoryGroup group;
    try {
      const GridPolicyParams behavior = result.params;
      ToyPolicy policy(behavior, behavior, reference);
      group = run_group(policy, env, task, config.rollout, scheduler.weights(),
                        derive_seed(config.seed, step));
      record(group_metrics(step, group));

      const auto adv = compute_advantages(group, config.spo);
      for (std::size_t u = 0; u < config.updates_per_step; ++u) {
        const auto grad = logprob_grad(result.params, group, adv.advantages, config.spo.epsilon,
                                       config.spo.kl_beta);
        for (std::size_t j = 0; j < grad.size(); ++j) {
          result.params.logits[j] += config.learning_rate * grad[j];
        }
      }
    } catch (const std::exception& e) {
      throw EngineError("training step " + std::to_string(step) + ": " + e.what());
    }
    scheduler.observe(group);
  }
  return result;
}

nlohmann::json params_to_json(const GridPolicyParams& p) {
  return {{"schema_version", kSchemaVersion},
          {"kind", "grid_policy"},
          {"objects", p.objects},
          {"turns", p.turns},
          {"bins", p.bins},
          {"logits", p.logits}};
}

GridPolicyParams params_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("kind", "") != "grid_policy") {
    throw InputError("$.kind", "expected a grid_policy checkpoint");
  }
  if (j.value("schema_version", 0) != kSchemaVersion) {
    throw InputError("$.schema_version", "unsupported schema version");
  }
  GridPolicyParams p;
  try {
    p.objects = j.at("objects").get<std::size_t>();
    p.turns = j.at("turns").get<std::size_t>();
    p.bins = j.at("bins").get<std::size_t>();
    p.logits = j.at("logits").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError("$", std::string("malformed checkpoint: ") + e.what());
  }
  if (p.bins < 2 || p.logits.size() != p.rows() * p.bins) {
    throw InputError("$.logits", "logit count does not match objects x 3 x turns x bins");
  }
  return p;
}

nlohmann::json metrics_to_json(const StepMetrics& m) {
  return {{"step", m.step},
          {"mean_total", m.mean_total},
          {"collision_ratio", m.collision_ratio},
          {"constraint_ratio", m.constraint_ratio},
          {"format_acc", m.format_acc}};
}

}  // namespace metaspatial::toy
