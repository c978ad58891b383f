#include "metaspatial/spo.hpp"

#include <cmath>
#include <stdexcept>

#include "metaspatial/kernels.hpp"

namespace metaspatial {

std::string_view to_string(Modulation m) {
  return m == Modulation::subtractive ? "subtractive" : "multiplicative";
}

CoordMask coord_mask(const ParsedRollOut& parsed, std::span<const TokenRecord> tokens,
                     std::size_t text_offset) {
  CoordMask mask;
  mask.labels.resize(tokens.size());
  if (!parsed.layout) return mask;

  struct Literal {
    ByteSpan span;
    CoordLabel label;
  };
  std::vector<Literal> literals;
  for (std::size_t i = 0; i < parsed.records.size(); ++i) {
    const auto& rec = parsed.records[i];
    for (Axis a : kAxes) {
      const auto& span = rec.literal_spans[static_cast<std::size_t>(a)];
      if (span) literals.push_back({*span, {parsed.layout->placements[i].object_id, a}});
    }
  }

  for (std::size_t k = 0; k < tokens.size(); ++k) {
    const ByteSpan& s = tokens[k].span;
    if (s.begin < text_offset) continue;
    const ByteSpan local{s.begin - text_offset, s.end - text_offset};
    for (const auto& lit : literals) {
      if (local.intersects(lit.span)) {
        mask.labels[k] = lit.label;
        break;
      }
    }
  }
  return mask;
}

CoordMask coord_mask(std::string_view raw_text, std::span<const TokenRecord> tokens,
                     std::size_t text_offset) {
  return coord_mask(parse_rollout(raw_text), tokens, text_offset);
}

CoordMask trajectory_mask(const Trajectory& trajectory) {
  CoordMask mask;
  for (const auto& turn : trajectory.turns) {
    auto part = coord_mask(turn.rollout, turn.tokens, turn.text_offset);
    mask.labels.insert(mask.labels.end(), std::make_move_iterator(part.labels.begin()),
                       std::make_move_iterator(part.labels.end()));
  }
  return mask;
}

std::vector<TokenRecord> trajectory_tokens(const Trajectory& trajectory) {
  std::vector<TokenRecord> out;
  out.reserve(trajectory.token_count());
  for (const auto& turn : trajectory.turns) out.insert(out.end(), turn.tokens.begin(), turn.tokens.end());
  return out;
}

std::vector<std::vector<double>> modulate_rewards(const TrajectoryGroup& group,
                                                  std::span<const CoordMask> masks,
                                                  std::span<const PenaltyMap> penalties,
                                                  double w_phys, Modulation mode) {
  const std::size_t g = group.trajectories.size();
  if (masks.size() != g || penalties.size() != g) {
    throw std::invalid_argument("modulate_rewards: need one mask and one penalty map per trajectory");
  }
  if (!(w_phys >= 0.0)) throw std::invalid_argument("modulate_rewards: w_phys must be >= 0");

  std::vector<std::vector<double>> out(g);
  for (std::size_t i = 0; i < g; ++i) {
    const double reward = group.trajectories[i].discounted_reward;
    const auto& labels = masks[i].labels;
    out[i].resize(labels.size(), reward);
    for (std::size_t k = 0; k < labels.size(); ++k) {
      if (!labels[k]) continue;
      const auto it = penalties[i].find(labels[k]->object_id);
      const double p = it == penalties[i].end() ? 0.0 : it->second;
      out[i][k] = mode == Modulation::subtractive ? reward - w_phys * p
                                                  : reward * (1.0 - w_phys * p);
    }
  }
  return out;
}

AdvantageSet normalize_group(const TrajectoryGroup& group,
                             const std::vector<std::vector<double>>& adjusted,
                             double sigma_floor) {
  const std::size_t g = group.trajectories.size();
  if (g < 2) throw std::invalid_argument("normalize_group: group size must be >= 2");
  if (adjusted.size() != g) throw std::invalid_argument("normalize_group: adjusted size mismatch");

  AdvantageSet out;
  double sum = 0.0;
  for (const auto& t : group.trajectories) sum += t.discounted_reward;
  out.group_mean = sum / static_cast<double>(g);
  double sq = 0.0;
  for (const auto& t : group.trajectories) {
    const double d = t.discounted_reward - out.group_mean;
    sq += d * d;
  }
  out.group_std = std::sqrt(sq / static_cast<double>(g));

  out.advantages.resize(g);
  for (std::size_t i = 0; i < g; ++i) {
    out.advantages[i].resize(adjusted[i].size());
    kernels::normalize_omp(adjusted[i], out.group_mean, out.group_std, sigma_floor,
                           out.advantages[i]);
  }
  return out;
}

AdvantageResult compute_advantages(const TrajectoryGroup& group, const SpoParams& params) {
  AdvantageResult r;
  for (const auto& traj : group.trajectories) {
    r.masks.push_back(trajectory_mask(traj));
    r.penalties.push_back(traj.turns.empty() ? PenaltyMap{}
                                             : traj.turns.back().reward.physics.per_object_penalty);
  }
  r.adjusted = modulate_rewards(group, r.masks, r.penalties, params.w_phys, params.modulation);
  r.advantages = normalize_group(group, r.adjusted, params.sigma_floor);
  return r;
}

SurrogateResult surrogate_objective(const TrajectoryGroup& group, const AdvantageSet& advantages,
                                    double epsilon, double kl_beta) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("surrogate_objective: epsilon must be > 0");
  if (!(kl_beta >= 0.0)) throw std::invalid_argument("surrogate_objective: kl_beta must be >= 0");
  const std::size_t g = group.trajectories.size();
  if (advantages.advantages.size() != g) {
    throw std::invalid_argument("surrogate_objective: advantage set does not match group");
  }

  SurrogateResult result;
  result.terms.resize(g);
  double outer = 0.0;
  for (std::size_t i = 0; i < g; ++i) {
    const auto tokens = trajectory_tokens(group.trajectories[i]);
    const auto& adv = advantages.advantages[i];
    if (adv.size() != tokens.size()) {
      throw std::invalid_argument("surrogate_objective: trajectory " + std::to_string(i) +
                                  " has " + std::to_string(tokens.size()) + " tokens but " +
                                  std::to_string(adv.size()) + " advantages");
    }
    const std::size_t n = tokens.size();
    std::vector<double> lp_new(n), lp_old(n), lp_ref(n), ratio(n), policy(n), kl(n);
    for (std::size_t k = 0; k < n; ++k) {
      const auto& t = tokens[k];
      auto need = [&](const std::optional<double>& v, const char* which) {
        if (!v) {
          throw std::invalid_argument("surrogate_objective: trajectory " + std::to_string(i) +
                                      " token " + std::to_string(t.index) + " has no " + which);
        }
        return *v;
      };
      lp_new[k] = need(t.logprob_new, "logprob_new");
      lp_old[k] = need(t.logprob_old, "logprob_old");
      lp_ref[k] = need(t.logprob_ref, "logprob_ref");
    }
    kernels::surrogate_terms_omp({lp_new, lp_old, lp_ref, adv}, epsilon, {ratio, policy, kl});

    auto& terms = result.terms[i];
    terms.resize(n);
    double inner = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      terms[k] = {ratio[k], policy[k], kl[k], policy[k] - kl_beta * kl[k]};
      inner += terms[k].total;
    }
    if (n > 0) outer += inner / static_cast<double>(n);
  }
  result.objective = outer / static_cast<double>(g);
  return result;
}

}  // namespace metaspatial
