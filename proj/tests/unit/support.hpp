#pragma once

// Shared fixtures for the unit tests: the checked-in task, and a scripted
// policy that emits caller-chosen layouts with random log-probabilities so
// advantage and surrogate tests can build realistic groups.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <string_view>

#include "metaspatial/layout.hpp"
#include "metaspatial/trajectory.hpp"

namespace mstest {

using namespace metaspatial;

inline std::string data_path(std::string_view name) {
  return std::string(METASPATIAL_TEST_DATA_DIR) + "/" + std::string(name);
}

inline SceneTask fixture_task() { return load_task(data_path("fixture_task.json")); }

// n floor-class boxes of the given size in a 6 x 5 x 3 room.
inline SceneTask box_task(std::size_t n, Vec3 size = {1, 1, 1}) {
  SceneTask task;
  task.id = "boxes";
  task.room = {6, 5, 3, {}};
  for (std::size_t i = 0; i < n; ++i) {
    task.objects.push_back({"obj_" + std::to_string(i), "box", size, "", "", PlacementClass::floor});
  }
  return task;
}

// Uniform centres that keep each object inside the room, rounded to cm so a
// fair share of them collide.
inline Layout random_layout(const SceneTask& task, std::mt19937_64& rng) {
  Layout layout;
  for (const auto& o : task.objects) {
    Vec3 p;
    for (Axis a : kAxes) {
      std::uniform_real_distribution<double> d(o.size_m[a] / 2, task.room.extent()[a] - o.size_m[a] / 2);
      p[a] = std::round(d(rng) * 100) / 100;
    }
    layout.placements.push_back({o.id, p});
  }
  return layout;
}

// One token per serializer piece, each with three random log-probs.
inline PolicyOutput tokenize(std::string_view think, const Layout& layout, std::mt19937_64& rng) {
  PolicyOutput out;
  std::uniform_real_distribution<double> lp(-3.0, -0.01);
  for (auto& piece : serialize_rollout_pieces(think, layout)) {
    TokenRecord tok;
    tok.span = {out.raw_text.size(), out.raw_text.size() + piece.text.size()};
    tok.logprob_new = lp(rng);
    tok.logprob_old = lp(rng);
    tok.logprob_ref = lp(rng);
    out.raw_text += piece.text;
    out.tokens.push_back(tok);
  }
  return out;
}

class ScriptedPolicy : public PolicyPort {
 public:
  using Script = std::function<Layout(const PolicyQuery&, std::mt19937_64&)>;
  explicit ScriptedPolicy(Script script) : script_(std::move(script)) {}

  PolicyOutput generate(const PolicyQuery& q) override {
    std::mt19937_64 rng(q.seed);
    const Layout layout = script_(q, rng);
    return tokenize("plan", layout, rng);
  }
  bool concurrent_safe() const noexcept override { return true; }

 private:
  Script script_;
};

inline TrajectoryGroup random_group(const SceneTask& task, std::size_t g, int turns,
                                    std::uint64_t seed, double gamma = 0.9) {
  ScriptedPolicy policy([&](const PolicyQuery&, std::mt19937_64& rng) { return random_layout(task, rng); });
  RewardEnvironment env;
  return run_group(policy, env, task, {g, turns, gamma}, RewardWeights{}, seed);
}

}  // namespace mstest
