#pragma once

// JSON forms of the engine's records. Dumps and advantage files are JSONL:
// one record per line, each carrying schema_version and kind. Readers throw
// InputError with the offending field path ("line 3: $.trajectories[1]...").

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "metaspatial/spo.hpp"
#include "metaspatial/trajectory.hpp"

namespace metaspatial {

nlohmann::json to_json(const PhysicsReport& r);
nlohmann::json to_json(const RenderReward& r);
nlohmann::json to_json(const RewardBreakdown& r);
nlohmann::json to_json(const FeedbackRecord& f);
nlohmann::json to_json(const TokenRecord& t);
nlohmann::json to_json(const Turn& t);
nlohmann::json to_json(const Trajectory& t);

// Reads one token record; `path` prefixes error locations.
TokenRecord token_from_json(const nlohmann::json& j, const std::string& path);

// One dump line.
nlohmann::json group_to_json(const TrajectoryGroup& g);

// Inverse of group_to_json. Roll-out text is re-parsed; stored rewards,
// feedback and tokens are read back as written. Checks text offsets, token
// spans and the discounted-reward invariant.
TrajectoryGroup group_from_json(const nlohmann::json& j);

void write_dump_line(std::ostream& out, const TrajectoryGroup& g);
std::vector<TrajectoryGroup> read_dump(std::istream& in);
std::vector<TrajectoryGroup> read_dump_file(const std::string& path);

// One advantage-file line.
nlohmann::json advantages_to_json(const TrajectoryGroup& group, const AdvantageResult& adv,
                                  const SurrogateResult& surrogate, const SpoParams& params);

// Shared by every JSON reader in the engine.
nlohmann::json read_json_file(const std::string& path);

}  // namespace metaspatial
