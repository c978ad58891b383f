#pragma once

// Advantage estimation and the clipped surrogate for grouped multi-turn
// layout trajectories: coordinate-token masking, per-object physics
// modulation, normalization by the unmodulated group statistics.

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "metaspatial/geometry.hpp"
#include "metaspatial/tokens.hpp"
#include "metaspatial/trajectory.hpp"

namespace metaspatial {

struct CoordLabel {
  std::string object_id;
  Axis axis = Axis::x;

  friend bool operator==(const CoordLabel&, const CoordLabel&) = default;
};

// nullopt means "not a coordinate token".
using TokenLabel = std::optional<CoordLabel>;

struct CoordMask {
  std::vector<TokenLabel> labels;  // parallel to the token list it was built from
};

// Token spans are shifted by -text_offset before being compared with literal
// positions in raw_text. A roll-out without an extracted layout labels nothing.
CoordMask coord_mask(std::string_view raw_text, std::span<const TokenRecord> tokens,
                     std::size_t text_offset = 0);
CoordMask coord_mask(const ParsedRollOut& parsed, std::span<const TokenRecord> tokens,
                     std::size_t text_offset = 0);

// All turns of a trajectory, in token order.
CoordMask trajectory_mask(const Trajectory& trajectory);
std::vector<TokenRecord> trajectory_tokens(const Trajectory& trajectory);

enum class Modulation { subtractive, multiplicative };

std::string_view to_string(Modulation m);

struct SpoParams {
  double w_phys = 0.2;
  Modulation modulation = Modulation::subtractive;
  double epsilon = 0.2;
  double kl_beta = 0.01;
  double sigma_floor = 1e-8;
};

using PenaltyMap = std::map<std::string, double>;

// Per-token rewards R^_{i,k}. Coordinate tokens of object o get
//   subtractive:    R_i - w_phys * p_o
//   multiplicative: R_i * (1 - w_phys * p_o)
// every other token keeps R_i.
std::vector<std::vector<double>> modulate_rewards(const TrajectoryGroup& group,
                                                  std::span<const CoordMask> masks,
                                                  std::span<const PenaltyMap> penalties,
                                                  double w_phys,
                                                  Modulation mode = Modulation::subtractive);

struct AdvantageSet {
  double group_mean = 0.0;
  double group_std = 0.0;  // population std of the unmodulated rewards
  std::vector<std::vector<double>> advantages;
};

AdvantageSet normalize_group(const TrajectoryGroup& group,
                             const std::vector<std::vector<double>>& adjusted,
                             double sigma_floor = 1e-8);

// Masks from the token spans, penalties from each trajectory's final turn.
struct AdvantageResult {
  std::vector<CoordMask> masks;
  std::vector<PenaltyMap> penalties;
  std::vector<std::vector<double>> adjusted;
  AdvantageSet advantages;
};

AdvantageResult compute_advantages(const TrajectoryGroup& group, const SpoParams& params);

struct TokenTerms {
  double ratio = 1.0;
  double policy = 0.0;
  double kl = 0.0;
  double total = 0.0;  // policy - kl_beta * kl
};

struct SurrogateResult {
  double objective = 0.0;
  std::vector<std::vector<TokenTerms>> terms;
};

// Throws std::invalid_argument naming the first token that lacks a logprob.
SurrogateResult surrogate_objective(const TrajectoryGroup& group, const AdvantageSet& advantages,
                                    double epsilon, double kl_beta);

}  // namespace metaspatial
