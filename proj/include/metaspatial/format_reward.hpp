#pragma once

#include <string_view>

#include "metaspatial/layout.hpp"

namespace metaspatial {

// Checks run in this order; the first failing one decides the score.
enum class FormatCheck {
  tag_structure,        // 0.0
  json_parse,           // 0.1
  object_count,         // 0.5
  name_alignment,       // 0.5
  coordinate_validity,  // 0.5
  none,                 // 1.0, everything passed
};

std::string_view to_string(FormatCheck c);
FormatCheck format_check_from_string(std::string_view s);

struct FormatScore {
  double score = 0.0;
  FormatCheck failed_check = FormatCheck::tag_structure;
};

double format_score_for(FormatCheck failed);

FormatScore format_reward(const ParsedRollOut& parsed, const SceneTask& task);

}  // namespace metaspatial
