// Acceptance run: one PASS/FAIL line per criterion.
//
// Usage: acceptance [--strict]
//
// A criterion listed in kKnownFailures still prints FAIL, but only makes the
// process exit nonzero under --strict. Any other FAIL (or a known failure
// that starts passing) always does.

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdarg>
#include <cstring>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "metaspatial/format_reward.hpp"
#include "metaspatial/kernels.hpp"
#include "metaspatial/physics.hpp"
#include "metaspatial/serialize.hpp"
#include "metaspatial/spo.hpp"
#include "metaspatial/toy_policy.hpp"
#include "support.hpp"

using namespace metaspatial;
using nlohmann::json;

namespace {

// ---- pinned tolerances ------------------------------------------------------
constexpr double kTableTol = 0.005;          // 1: printed-precision rounding
constexpr double kCollisionBudgetS = 5.0;    // 3
constexpr double kNormTol = 1e-9;            // 4
constexpr double kFdStep = 1e-5;             // 6
constexpr double kFdMaxRel = 1e-4;           // 6
constexpr double kFdRelFloor = 1e-6;         // 6: denominator floor for near-zero entries
constexpr double kFinalCollision = 0.10;     // 7
constexpr double kFinalConstraint = 0.20;    // 7
constexpr double kBaselineCollision = 0.30;  // 7
constexpr double kTrainBudgetS = 120.0;      // 7
constexpr int kPairsNeeded = 4;              // 8
constexpr double kSurrogateTol = 1e-12;      // 10

// The random-init policy places four unit cubes uniformly on the bin grid;
// its expected collision ratio is about 0.27, under the 0.30 this criterion
// asks of the baseline. See README "Acceptance status".
const std::set<int> kKnownFailures = {7};

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

toy::GridPolicyParams jitter(toy::GridPolicyParams p, double scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0, scale);
  for (auto& v : p.logits) v += n(rng);
  return p;
}

TrajectoryGroup toy_group(const toy::GridPolicyParams& cur, const toy::GridPolicyParams& beh,
                          const toy::GridPolicyParams& ref, const SceneTask& task, std::size_t g, int turns,
                          std::uint64_t seed) {
  toy::ToyPolicy policy(cur, beh, ref);
  RewardEnvironment env;
  return run_group(policy, env, task, {g, turns, 0.9}, {}, seed);
}

// ---- 1 ----------------------------------------------------------------------
Outcome composite_rows() {
  struct Row {
    double render, format, coll, constr, printed;
  };
  const Row rows[] = {{0.62, 0.98, 0.115, 0.708, 0.95}, {0.03, 0.12, 0.790, 1.000, -0.27}};
  const PhysicsParams pp;
  Outcome o{true, ""};
  for (const auto& r : rows) {
    PhysicsReport phys;
    phys.collision_ratio = r.coll;
    phys.constraint_ratio = r.constr;
    phys.physics_reward = -pp.alpha * r.coll - pp.beta * r.constr;
    RenderReward render;
    render.value = r.render;
    const double total = total_reward(r.format, phys, render, RewardWeights{});
    o.pass = o.pass && std::abs(total - r.printed) <= kTableTol;
    o.detail += fmt("%.4f vs %.2f; ", total, r.printed);
  }
  o.detail += fmt("tol %.3f", kTableTol);
  return o;
}

// ---- 2 ----------------------------------------------------------------------
Outcome format_cases() {
  const json doc = read_json_file(mstest::data_path("format_cases.json"));
  const SceneTask task = load_task(mstest::data_path(doc["task"].get<std::string>()));
  std::size_t ok = 0, n = 0;
  std::set<std::string> branches;
  std::string bad;
  for (const auto& c : doc["cases"]) {
    ++n;
    const auto s = format_reward(parse_rollout(c["rollout"].get<std::string>()), task);
    branches.insert(c["failed_check"].get<std::string>());
    if (s.score == c["score"].get<double>() && to_string(s.failed_check) == c["failed_check"]) {
      ++ok;
    } else {
      bad += " " + c["name"].get<std::string>();
    }
  }
  return {n == 12 && ok == n && branches.size() == 6,
          fmt("%zu/%zu cases exact, %zu branches covered%s", ok, n, branches.size(),
              bad.empty() ? "" : (" (mismatch:" + bad + ")").c_str())};
}

// ---- 3 ----------------------------------------------------------------------
std::vector<std::pair<std::size_t, std::size_t>> brute_force_edges(const std::vector<Vec3>& centers,
                                                                  const std::vector<Vec3>& sizes) {
  auto overlap = [](double c1, double s1, double c2, double s2) {
    const double lo = std::max(c1 - s1 / 2, c2 - s2 / 2);
    const double hi = std::min(c1 + s1 / 2, c2 + s2 / 2);
    return hi - lo > 0;
  };
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < centers.size(); ++i) {
    for (std::size_t j = i + 1; j < centers.size(); ++j) {
      if (overlap(centers[i].x, sizes[i].x, centers[j].x, sizes[j].x) &&
          overlap(centers[i].y, sizes[i].y, centers[j].y, sizes[j].y) &&
          overlap(centers[i].z, sizes[i].z, centers[j].z, sizes[j].z)) {
        out.emplace_back(i, j);
      }
    }
  }
  return out;
}

Outcome collision_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2025);
  // sixteenths of a metre: exact in binary, so touching faces really touch
  std::uniform_int_distribution<int> size16(4, 32);
  std::size_t mismatches = 0, edges = 0, touching = 0;
  std::vector<std::vector<Aabb>> batch;
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> oracle;
  for (int s = 0; s < 1000; ++s) {
    const std::size_t n = 1 + rng() % 10;
    SceneTask task = mstest::box_task(n);
    Layout layout;
    std::vector<Vec3> centers, sizes;
    for (std::size_t i = 0; i < n; ++i) {
      Vec3 size{size16(rng) / 16.0, size16(rng) / 16.0, size16(rng) / 16.0};
      Vec3 c{static_cast<double>(rng() % 97) / 16.0, static_cast<double>(rng() % 81) / 16.0,
             static_cast<double>(rng() % 49) / 16.0};
      task.objects[i].size_m = size;
      layout.placements.push_back({task.objects[i].id, c});
      centers.push_back(c);
      sizes.push_back(size);
    }
    const auto expect = brute_force_edges(centers, sizes);
    const auto graph = build_scene_graph(layout, task);
    if (graph.collision_edges != expect) ++mismatches;
    edges += expect.size();
    std::vector<Aabb> boxes;
    for (const auto& node : graph.nodes) boxes.push_back(node.box);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const auto& a = boxes[i];
        const auto& b = boxes[j];
        if (a.min.x == b.max.x || b.min.x == a.max.x || a.min.y == b.max.y || b.min.y == a.max.y ||
            a.min.z == b.max.z || b.min.z == a.max.z) {
          ++touching;
        }
      }
    }
    batch.push_back(std::move(boxes));
    oracle.push_back(expect);
  }
  if (kernels::overlap_pairs_batch_serial(batch) != oracle) ++mismatches;
  if (kernels::overlap_pairs_batch_omp(batch) != oracle) ++mismatches;
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < kCollisionBudgetS,
          fmt("1000 scenes, %zu edges, %zu face-touching pairs, %zu mismatches, %.2f s (budget %.0f s)", edges,
              touching, mismatches, secs, kCollisionBudgetS)};
}

// ---- 4 ----------------------------------------------------------------------
Outcome normalization() {
  std::mt19937_64 rng(404);
  std::size_t normal = 0, degenerate = 0, bad = 0;
  double worst_mean = 0, worst_std = 0;
  SpoParams params;
  params.w_phys = 0.0;
  for (int k = 0; k < 100; ++k) {
    const std::size_t g = 2 + rng() % 7;
    const int turns = 1 + static_cast<int>(rng() % 3);
    const auto task = mstest::box_task(2 + rng() % 4);
    TrajectoryGroup group;
    if (k % 5 == 4) {
      // every trajectory emits the same layout: equal rewards
      const Layout fixed = [&] {
        std::mt19937_64 r(rng());
        return mstest::random_layout(task, r);
      }();
      mstest::ScriptedPolicy same([&](const PolicyQuery&, std::mt19937_64&) { return fixed; });
      RewardEnvironment env;
      group = run_group(same, env, task, {g, turns, 0.9}, {}, rng());
    } else {
      group = mstest::random_group(task, g, turns, rng());
    }
    const auto adv = compute_advantages(group, params).advantages;
    std::vector<double> rewards, per_traj;
    for (const auto& t : group.trajectories) rewards.push_back(t.discounted_reward);
    const double mu = std::accumulate(rewards.begin(), rewards.end(), 0.0) / static_cast<double>(g);
    double var = 0;
    for (double r : rewards) var += (r - mu) * (r - mu);
    const double sigma = std::sqrt(var / static_cast<double>(g));

    for (std::size_t i = 0; i < g; ++i) {
      const auto& a = adv.advantages[i];
      if (a.empty() || std::any_of(a.begin(), a.end(), [&](double v) { return v != a.front(); })) ++bad;
      per_traj.push_back(a.empty() ? 0.0 : a.front());
    }
    if (sigma < params.sigma_floor) {
      ++degenerate;
      if (std::any_of(per_traj.begin(), per_traj.end(), [](double v) { return v != 0.0; })) ++bad;
      continue;
    }
    ++normal;
    const double m = std::accumulate(per_traj.begin(), per_traj.end(), 0.0) / static_cast<double>(g);
    double v = 0;
    for (double x : per_traj) v += (x - m) * (x - m);
    const double s = std::sqrt(v / static_cast<double>(g));
    worst_mean = std::max(worst_mean, std::abs(m));
    worst_std = std::max(worst_std, std::abs(s - 1.0));
    if (std::abs(m) > kNormTol || std::abs(s - 1.0) > kNormTol) ++bad;
  }
  return {bad == 0 && degenerate > 0,
          fmt("%zu normal groups (max |mean| %.1e, max |std-1| %.1e), %zu degenerate all-zero, %zu violations, "
              "tol %.0e",
              normal, worst_mean, worst_std, degenerate, bad, kNormTol)};
}

// ---- 5 ----------------------------------------------------------------------
Outcome penalty_monotonicity() {
  std::mt19937_64 rng(505);
  SpoParams params;
  std::size_t groups = 0, lowered = 0, violations = 0;
  while (groups < 100) {
    const auto task = mstest::box_task(2 + rng() % 5);
    const auto group = mstest::random_group(task, 2 + rng() % 7, 1 + static_cast<int>(rng() % 3), rng());
    const auto base = compute_advantages(group, params);
    if (base.advantages.group_std < params.sigma_floor) continue;

    const std::size_t i = rng() % group.trajectories.size();
    const auto& obj = task.objects[rng() % task.objects.size()].id;
    auto penalties = base.penalties;
    const double before = penalties[i].count(obj) ? penalties[i][obj] : 0.0;
    if (before >= 1.0) continue;
    std::uniform_real_distribution<double> step(1e-3, 1.0 - before);
    penalties[i][obj] = before + step(rng);
    // a trajectory whose final layout was unscorable labels no coordinate tokens
    const bool has_tokens = std::any_of(base.masks[i].labels.begin(), base.masks[i].labels.end(),
                                        [&](const TokenLabel& l) { return l && l->object_id == obj; });
    if (!has_tokens) continue;
    ++groups;

    const auto adjusted = modulate_rewards(group, base.masks, penalties, params.w_phys, params.modulation);
    const auto raised = normalize_group(group, adjusted, params.sigma_floor);
    for (std::size_t t = 0; t < group.trajectories.size(); ++t) {
      for (std::size_t k = 0; k < raised.advantages[t].size(); ++k) {
        const auto& label = base.masks[t].labels[k];
        const bool target = t == i && label && label->object_id == obj;
        const double a0 = base.advantages.advantages[t][k];
        const double a1 = raised.advantages[t][k];
        if (target) {
          if (a1 < a0) {
            ++lowered;
          } else {
            ++violations;
          }
        } else if (a1 != a0) {
          ++violations;
        }
      }
    }
  }
  return {violations == 0 && lowered > 0,
          fmt("100 groups, %zu target tokens strictly lowered, %zu violations", lowered, violations)};
}

// ---- 6 ----------------------------------------------------------------------
Outcome gradient_check() {
  const auto t0 = Clock::now();
  const auto task = mstest::fixture_task();
  const auto ref = jitter(toy::zero_params(4, 3, 24), 0.3, 61);
  const auto behavior = jitter(ref, 0.3, 62);
  const auto cur = jitter(behavior, 0.3, 63);
  const SpoParams sp;
  double worst = 0;
  std::size_t checked = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto g = toy::rescore(cur, toy_group(behavior, behavior, ref, task, 4, 3, seed));
    const auto adv = compute_advantages(g, sp).advantages;
    const auto grad = toy::logprob_grad(cur, g, adv, sp.epsilon, sp.kl_beta);
    auto objective = [&](const toy::GridPolicyParams& p) {
      return surrogate_objective(toy::rescore(p, g), adv, sp.epsilon, sp.kl_beta).objective;
    };
    auto probe = cur;
    for (std::size_t j = 0; j < cur.logits.size(); ++j) {
      probe.logits[j] = cur.logits[j] + kFdStep;
      const double up = objective(probe);
      probe.logits[j] = cur.logits[j] - kFdStep;
      const double down = objective(probe);
      probe.logits[j] = cur.logits[j];
      const double fd = (up - down) / (2 * kFdStep);
      const double scale = std::max({std::abs(fd), std::abs(grad[j]), kFdRelFloor});
      worst = std::max(worst, std::abs(fd - grad[j]) / scale);
      ++checked;
    }
  }
  return {worst <= kFdMaxRel, fmt("%zu logits over 10 groups, h %.0e, max rel err %.2e (limit %.0e, floor %.0e), "
                                  "%.1f s",
                                  checked, kFdStep, worst, kFdMaxRel, kFdRelFloor, seconds_since(t0))};
}

// ---- 7, 8 -------------------------------------------------------------------
struct TrainSummary {
  double collision = 0, constraint = 0;
};

TrainSummary final_window(const toy::TrainResult& r, std::size_t window = 50) {
  TrainSummary s;
  const std::size_t n = r.log.size();
  const std::size_t w = std::min(window, n);
  for (std::size_t k = n - w; k < n; ++k) {
    s.collision += r.log[k].collision_ratio / static_cast<double>(w);
    s.constraint += r.log[k].constraint_ratio / static_cast<double>(w);
  }
  return s;
}

toy::TrainConfig desk_config(std::uint64_t seed, double w_phys) {
  toy::TrainConfig c;
  c.steps = 300;
  c.rollout = {4, 3, 0.9};
  c.seed = seed;
  c.spo.w_phys = w_phys;
  return c;
}

Outcome desk_training() {
  const std::vector<SceneTask> tasks{mstest::fixture_task()};
  const int threads = omp_get_max_threads();
  omp_set_num_threads(1);
  const auto t0 = Clock::now();
  const auto trained = final_window(toy::train(tasks, desk_config(1, 0.2)));
  const double secs = seconds_since(t0);
  auto base_cfg = desk_config(1, 0.2);
  base_cfg.steps = 0;
  const auto baseline = final_window(toy::train(tasks, base_cfg));
  omp_set_num_threads(threads);

  const bool col = trained.collision < kFinalCollision;
  const bool con = trained.constraint < kFinalConstraint;
  const bool base = baseline.collision >= kBaselineCollision;
  const bool time = secs < kTrainBudgetS;
  auto mark = [](bool b) { return b ? "ok" : "MISSED"; };
  return {col && con && base && time,
          fmt("final collision %.4f (<%.2f %s), constraint %.4f (<%.2f %s), random-init baseline collision %.4f "
              "(>=%.2f %s), 1 thread %.2f s (<%.0f s %s)",
              trained.collision, kFinalCollision, mark(col), trained.constraint, kFinalConstraint, mark(con),
              baseline.collision, kBaselineCollision, mark(base), secs, kTrainBudgetS, mark(time))};
}

Outcome paired_seeds() {
  const std::vector<SceneTask> tasks{mstest::fixture_task()};
  int wins = 0;
  std::string pairs;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const double spo = final_window(toy::train(tasks, desk_config(seed, 0.2))).collision;
    const double plain = final_window(toy::train(tasks, desk_config(seed, 0.0))).collision;
    wins += spo <= plain;
    pairs += fmt(" %.4f/%.4f", spo, plain);
  }
  return {wins >= kPairsNeeded,
          fmt("w_phys 0.2 <= w_phys 0 in %d/5 pairs (need %d); collision 0.2/0:%s", wins, kPairsNeeded,
              pairs.c_str())};
}

// ---- 9 ----------------------------------------------------------------------
Outcome front_loading() {
  std::mt19937_64 rng(909);
  std::uniform_real_distribution<double> gamma_d(0.05, 0.999);
  // half the reward sequences come from real toy trajectories, half are synthetic
  std::vector<std::vector<double>> sequences;
  const auto task = mstest::fixture_task();
  const auto p = jitter(toy::zero_params(4, 5, 24), 1.0, 90);
  for (std::uint64_t s = 0; sequences.size() < 250; ++s) {
    for (const auto& t : toy_group(p, p, p, task, 5, 5, s).trajectories) {
      std::vector<double> totals;
      for (const auto& turn : t.turns) totals.push_back(turn.reward.total);
      sequences.push_back(totals);
    }
  }
  std::uniform_real_distribution<double> r(-0.5, 1.6);
  while (sequences.size() < 500) {
    std::vector<double> v(1 + rng() % 7);
    for (auto& x : v) x = r(rng);
    sequences.push_back(v);
  }

  auto independent = [](const std::vector<double>& v, double gamma) {
    double sum = 0, w = gamma;
    for (double x : v) {
      sum += w * x;
      w *= gamma;
    }
    return sum;
  };
  std::size_t moves = 0, violations = 0, mismatch = 0;
  for (const auto& v : sequences) {
    const double gamma = gamma_d(rng);
    const auto best = static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
    const double r0 = discounted_reward(v, gamma);
    if (std::abs(r0 - independent(v, gamma)) > 1e-12) ++mismatch;
    for (std::size_t to = 0; to < best; ++to) {
      auto swapped = v;
      std::swap(swapped[to], swapped[best]);
      auto rotated = v;
      std::rotate(rotated.begin() + static_cast<std::ptrdiff_t>(to), rotated.begin() + static_cast<std::ptrdiff_t>(best),
                  rotated.begin() + static_cast<std::ptrdiff_t>(best) + 1);
      for (const auto* moved : {&swapped, &rotated}) {
        ++moves;
        if (discounted_reward(*moved, gamma) < r0 - 1e-12) ++violations;
      }
    }
  }
  return {violations == 0 && mismatch == 0 && moves > 0,
          fmt("500 trajectories, %zu earlier placements (swap and shift), %zu decreases, %zu sum mismatches",
              moves, violations, mismatch)};
}

// ---- 10 ---------------------------------------------------------------------
Outcome surrogate_reference() {
  const auto task = mstest::fixture_task();
  const auto ref = toy::zero_params(4, 1, 24);
  const auto behavior = jitter(ref, 0.5, 101);
  const auto cur = jitter(behavior, 0.4, 102);
  const auto g = toy::rescore(cur, toy_group(behavior, behavior, ref, task, 6, 1, 103));
  const double eps = 0.2;
  SpoParams sp;
  sp.w_phys = 0.0;
  sp.kl_beta = 0.0;
  sp.epsilon = eps;
  const auto adv = compute_advantages(g, sp).advantages;
  const auto sur = surrogate_objective(g, adv, eps, 0.0);

  // plain group-relative clipped surrogate, written out directly
  const std::size_t n = g.trajectories.size();
  std::vector<double> R;
  for (const auto& t : g.trajectories) R.push_back(t.discounted_reward);
  double mean = 0;
  for (double x : R) mean += x / static_cast<double>(n);
  double var = 0;
  for (double x : R) var += (x - mean) * (x - mean) / static_cast<double>(n);
  const double sd = std::sqrt(var);
  double worst = 0, objective = 0;
  std::size_t tokens = 0, clipped = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double A = (R[i] - mean) / sd;
    const auto& toks = g.trajectories[i].turns[0].tokens;
    double inner = 0;
    for (std::size_t k = 0; k < toks.size(); ++k) {
      const double ratio = std::exp(*toks[k].logprob_new - *toks[k].logprob_old);
      const double c = std::clamp(ratio, 1 - eps, 1 + eps);
      const double term = std::min(ratio * A, c * A);
      clipped += c != ratio;
      inner += term;
      worst = std::max(worst, std::abs(term - sur.terms[i][k].total));
      ++tokens;
    }
    objective += inner / static_cast<double>(toks.size()) / static_cast<double>(n);
  }
  worst = std::max(worst, std::abs(objective - sur.objective));
  return {worst <= kSurrogateTol && clipped > 0,
          fmt("%zu tokens (%zu outside the clip band), max |diff| %.1e (tol %.0e)", tokens, clipped, worst,
              kSurrogateTol)};
}

}  // namespace

int main(int argc, char** argv) {
  const bool strict = argc > 1 && std::strcmp(argv[1], "--strict") == 0;
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "composite reward rows", composite_rows},
      {2, "format rubric cases", format_cases},
      {3, "collision oracle", collision_oracle},
      {4, "normalization invariants", normalization},
      {5, "penalty monotonicity", penalty_monotonicity},
      {6, "gradient check", gradient_check},
      {7, "desk-scale training", desk_training},
      {8, "physics-modulated vs plain group-relative", paired_seeds},
      {9, "discount front-loading", front_loading},
      {10, "surrogate equivalence", surrogate_reference},
  };
  int unexpected = 0, known = 0;
  for (const auto& c : criteria) {
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const bool expected_fail = kKnownFailures.count(c.id) > 0;
    std::string note;
    if (!o.pass && expected_fail) {
      ++known;
      note = " [known failure]";
    } else if (o.pass && expected_fail) {
      ++unexpected;
      note = " [listed as a known failure but passed: update kKnownFailures]";
    } else if (!o.pass) {
      ++unexpected;
    }
    std::printf("criterion %2d %s  %s: %s%s\n", c.id, o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str(),
                note.c_str());
    std::fflush(stdout);
  }
  std::printf("summary: %zu criteria, %d known failure(s), %d unexpected result(s)%s\n", criteria.size(), known,
              unexpected, strict ? " [strict]" : "");
  return (unexpected > 0 || (strict && known > 0)) ? 1 : 0;
}
