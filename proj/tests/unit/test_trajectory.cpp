#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>
#include <stdexcept>

#include "metaspatial/serialize.hpp"
#include "metaspatial/toy_policy.hpp"
#include "support.hpp"

using namespace metaspatial;

namespace {

// Returns text chosen by the caller and records what it was shown.
class RecordingPolicy : public PolicyPort {
 public:
  std::vector<std::string> texts;
  std::vector<PolicyQuery> seen;
  std::vector<std::optional<FeedbackRecord>> feedback;
  int fail_at = 0;

  PolicyOutput generate(const PolicyQuery& q) override {
    if (q.turn == fail_at) throw std::runtime_error("model crashed");
    seen.push_back(q);
    feedback.push_back(q.feedback ? std::optional(*q.feedback) : std::nullopt);
    PolicyOutput out;
    out.raw_text = texts.at(static_cast<std::size_t>(q.turn - 1));
    out.tokens.push_back({0, {0, out.raw_text.size()}, -0.5, -0.5, -0.5, std::nullopt});
    return out;
  }
};

}  // namespace

TEST_CASE("composite reward reproduces the reference rows") {
  const RewardWeights w;
  auto check_row = [&](double render, double format, double coll, double constr, double expect) {
    PhysicsReport p;
    p.collision_ratio = coll;
    p.constraint_ratio = constr;
    p.physics_reward = -0.2 * coll - 0.2 * constr;
    RenderReward r;
    r.value = render;
    CHECK(total_reward(format, p, r, w) == doctest::Approx(expect).epsilon(1e-12));
  };
  check_row(0.62, 0.98, 0.115, 0.708, 0.9454);
  check_row(0.03, 0.12, 0.79, 1.0, -0.268);
  check_row(0, 0, 0, 0, 0);
}

TEST_CASE("discounted reward") {
  const std::vector<double> a{1.0, 0.5, 0.2};
  CHECK(discounted_reward(a, 0.9) == doctest::Approx(1.4508).epsilon(1e-14));
  const std::vector<double> one{0.7};
  CHECK(discounted_reward(one, 0.8) == doctest::Approx(0.56));
  const std::vector<double> flat{0.3, 0.3, 0.3};
  CHECK(discounted_reward(flat, 1.0) == doctest::Approx(0.9));
}

TEST_CASE("moving the best turn earlier never lowers the discounted reward") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> r(-1, 2), g(0.05, 0.999);
  for (int i = 0; i < 500; ++i) {
    std::vector<double> totals(1 + rng() % 6);
    for (auto& v : totals) v = r(rng);
    const double gamma = g(rng);
    auto best = std::max_element(totals.begin(), totals.end()) - totals.begin();
    for (std::ptrdiff_t to = 0; to < best; ++to) {
      auto moved = totals;
      std::swap(moved[static_cast<std::size_t>(to)], moved[static_cast<std::size_t>(best)]);
      CHECK(discounted_reward(moved, gamma) >= discounted_reward(totals, gamma) - 1e-15);
    }
  }
}

TEST_CASE("turns see the previous roll-out and its feedback") {
  const auto task = mstest::box_task(2);
  Layout overlapping{{{"obj_0", {1, 1, 0.5}}, {"obj_1", {1.5, 1, 0.5}}}};
  Layout apart{{{"obj_0", {1, 1, 0.5}}, {"obj_1", {3, 1, 1.5}}}};
  RecordingPolicy policy;
  policy.texts = {serialize_rollout("a", overlapping), "<think>b</think>", serialize_rollout("c", apart)};
  RewardEnvironment env;
  const auto traj = run_trajectory(policy, env, task, {2, 3, 0.9}, RewardWeights{}, 42, 5);

  REQUIRE(policy.seen.size() == 3);
  CHECK(policy.seen[0].previous == nullptr);
  CHECK_FALSE(policy.feedback[0]);
  REQUIRE(policy.feedback[1]);
  CHECK(policy.feedback[1]->colliding_pairs ==
        std::vector<std::pair<std::string, std::string>>{{"obj_0", "obj_1"}});
  CHECK(policy.feedback[1]->format_failure == FormatCheck::none);
  REQUIRE(policy.feedback[2]);
  CHECK(policy.feedback[2]->format_failure == FormatCheck::tag_structure);
  CHECK(policy.feedback[2]->colliding_pairs.empty());
  for (const auto& q : policy.seen) CHECK(q.trajectory == 5);

  // feedback stored on each turn matches a fresh scene graph of that turn
  REQUIRE(traj.turns.size() == 3);
  const auto g0 = build_scene_graph(overlapping, task);
  CHECK(traj.turns[0].feedback.colliding_pairs == g0.colliding_id_pairs());
  CHECK(traj.turns[0].feedback.violations.empty());
  const auto g2 = build_scene_graph(apart, task);
  CHECK(traj.turns[2].feedback.violations == g2.violations_by_id());
  CHECK(traj.turns[2].feedback.violations.at("obj_1").floating);
  CHECK(traj.turns[2].reward.physics.collision_ratio == 0.0);

  // an unscorable turn takes the worst-case physics report
  CHECK(traj.turns[1].reward.format.score == 0.0);
  CHECK(traj.turns[1].reward.physics.physics_reward == doctest::Approx(-0.4));

  // turn indices, seeds, offsets, token spans
  std::size_t offset = 0;
  for (std::size_t t = 0; t < 3; ++t) {
    CHECK(traj.turns[t].index == static_cast<int>(t + 1));
    CHECK(traj.turns[t].seed == derive_seed(42, t + 1));
    CHECK(traj.turns[t].text_offset == offset);
    CHECK(traj.turns[t].tokens[0].index == t);
    CHECK(traj.turns[t].tokens[0].span.begin == offset);
    offset += traj.turns[t].rollout.raw_text.size();
  }
  CHECK(traj.text().size() == offset);

  const std::vector<double> totals{traj.turns[0].reward.total, traj.turns[1].reward.total,
                                   traj.turns[2].reward.total};
  CHECK(traj.discounted_reward == discounted_reward(totals, 0.9));
}

TEST_CASE("policy failures carry the turn and trajectory") {
  const auto task = mstest::box_task(1);
  RecordingPolicy policy;
  policy.texts = {"x", "y", "z"};
  policy.fail_at = 2;
  RewardEnvironment env;
  CHECK_THROWS_WITH_AS(run_trajectory(policy, env, task, {2, 3, 0.9}, {}, 1), doctest::Contains("turn 2"),
                       TrajectoryError);
  policy.seen.clear();
  try {
    run_group(policy, env, task, {2, 3, 0.9}, {}, 1);
    FAIL("expected failure");
  } catch (const TrajectoryError& e) {
    const std::string what = e.what();
    CHECK(what.find("trajectory 0") != std::string::npos);
    CHECK(what.find("turn 2") != std::string::npos);
    CHECK(what.find("model crashed") != std::string::npos);
  }
}

TEST_CASE("group preconditions") {
  const auto task = mstest::box_task(2);
  RecordingPolicy policy;
  RewardEnvironment env;
  CHECK_THROWS_AS(run_group(policy, env, task, {1, 3, 0.9}, {}, 1), std::invalid_argument);
  CHECK_THROWS_AS(run_group(policy, env, task, {2, 0, 0.9}, {}, 1), std::invalid_argument);
  CHECK_THROWS_AS(run_group(policy, env, task, {2, 3, 1.5}, {}, 1), std::invalid_argument);
  CHECK_THROWS_AS(run_group(policy, env, task, {2, 3, 0.0}, {}, 1), std::invalid_argument);
}

TEST_CASE("toy groups are reproducible and bounded") {
  const auto task = mstest::fixture_task();
  const auto params = toy::zero_params(task.objects.size(), 3, 24);
  toy::ToyPolicy policy(params, params, params);
  RewardEnvironment env;

  const auto a = run_group(policy, env, task, {4, 3, 0.9}, {}, 17);
  const auto b = run_group(policy, env, task, {4, 3, 0.9}, {}, 17);
  CHECK(a.trajectories.size() == 4);
  std::size_t turns = 0;
  for (const auto& t : a.trajectories) turns += t.turns.size();
  CHECK(turns == 12);
  CHECK(group_to_json(a).dump() == group_to_json(b).dump());
  CHECK(group_to_json(a).dump() != group_to_json(run_group(policy, env, task, {4, 3, 0.9}, {}, 18)).dump());
  for (std::size_t i = 0; i < 4; ++i) CHECK(a.trajectories[i].seed == derive_seed(17, i));

  // every per-turn total lies in [-(alpha+beta), render max + lambda_1]
  const double weight_sum = 0.9 + 0.81 + 0.729;
  const auto g8 = run_group(policy, env, task, {8, 3, 0.9}, {}, 3);
  double mean = 0;
  for (const auto& t : g8.trajectories) mean += t.discounted_reward / 8;
  CHECK(mean >= -0.4 * weight_sum);
  CHECK(mean <= 1.5 * weight_sum);
}

TEST_CASE("derive_seed spreads streams") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 20; ++s) {
    for (std::uint64_t k = 0; k < 20; ++k) seen.insert(derive_seed(s, k));
  }
  CHECK(seen.size() == 400);
  CHECK(derive_seed(1, 2) == derive_seed(1, 2));
}

TEST_CASE("stage scheduler") {
  StageConfig cfg;
  cfg.schedule = StageSchedule::staged;
  cfg.window = 8;
  cfg.format_gate = 0.9;
  cfg.render_delay = 2;
  StageScheduler s(cfg);
  CHECK(s.stage() == RewardStage::format_only);
  CHECK(s.weights().physics == 0.0);
  CHECK(s.weights().render == 0.0);
  CHECK(s.weights().format == 0.5);

  auto group_with = [](std::vector<bool> ok) {
    TrajectoryGroup g;
    Trajectory t;
    for (bool b : ok) {
      Turn turn;
      turn.reward.format.failed_check = b ? FormatCheck::none : FormatCheck::json_parse;
      t.turns.push_back(turn);
    }
    g.trajectories.push_back(t);
    return g;
  };
  s.observe(group_with({true, true, true, true}));
  CHECK(s.stage() == RewardStage::format_only);  // window not full yet
  s.observe(group_with({true, true, true, false}));
  CHECK(s.format_accuracy() == doctest::Approx(7.0 / 8));
  CHECK(s.stage() == RewardStage::format_only);  // 0.875 is not above 0.9
  s.observe(group_with({true, true, true, true}));
  CHECK(s.format_accuracy() == doctest::Approx(7.0 / 8));
  s.observe(group_with({true, true, true, true}));
  CHECK(s.format_accuracy() == 1.0);
  CHECK(s.stage() == RewardStage::format_physics);
  CHECK(s.weights().physics == 1.0);
  CHECK(s.weights().render == 0.0);
  s.observe(group_with({false}));
  CHECK(s.stage() == RewardStage::format_physics);
  s.observe(group_with({false}));
  CHECK(s.stage() == RewardStage::full);
  CHECK(s.weights() == RewardWeights{});

  CHECK(StageScheduler{}.stage() == RewardStage::full);
}

TEST_CASE("render weight zero keeps the judge offline") {
  // remote mode pointing nowhere: a render weight of zero must not contact it
  EnvironmentConfig cfg;
  cfg.judge.mode = JudgeMode::remote;
  cfg.judge.endpoint = "http://127.0.0.1:1/v1/judge";
  cfg.judge.retries = 0;
  RewardEnvironment env(cfg);
  const auto task = mstest::box_task(1);
  const auto parsed = parse_rollout(serialize_rollout("t", Layout{{{"obj_0", {1, 1, 0.5}}}}));
  RewardWeights w;
  w.render = 0.0;
  const auto s = env.score(parsed, task, w);
  CHECK(s.reward.render.source == RenderSource::stub);
  CHECK(s.reward.total == doctest::Approx(0.5));
  w.render = 1.0;
  CHECK_THROWS_AS(env.score(parsed, task, w), EngineError);
}
