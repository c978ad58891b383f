#include "metaspatial/format_reward.hpp"

#include <set>
#include <string>

#include "metaspatial/errors.hpp"

namespace metaspatial {

std::string_view to_string(FormatCheck c) {
  switch (c) {
    case FormatCheck::tag_structure: return "tag_structure";
    case FormatCheck::json_parse: return "json_parse";
    case FormatCheck::object_count: return "object_count";
    case FormatCheck::name_alignment: return "name_alignment";
    case FormatCheck::coordinate_validity: return "coordinate_validity";
    case FormatCheck::none: return "none";
  }
  return "none";
}

FormatCheck format_check_from_string(std::string_view s) {
  for (auto c : {FormatCheck::tag_structure, FormatCheck::json_parse, FormatCheck::object_count,
                 FormatCheck::name_alignment, FormatCheck::coordinate_validity, FormatCheck::none}) {
    if (to_string(c) == s) return c;
  }
  throw InputError("", "unknown format check '" + std::string(s) + "'");
}

double format_score_for(FormatCheck failed) {
  switch (failed) {
    case FormatCheck::tag_structure: return 0.0;
    case FormatCheck::json_parse: return 0.1;
    case FormatCheck::object_count:
    case FormatCheck::name_alignment:
    case FormatCheck::coordinate_validity: return 0.5;
    case FormatCheck::none: return 1.0;
  }
  return 0.0;
}

namespace {

FormatCheck first_failure(const ParsedRollOut& parsed, const SceneTask& task) {
  if (parsed.stage == ParseStage::no_tags) return FormatCheck::tag_structure;
  if (parsed.stage == ParseStage::tags_only) return FormatCheck::json_parse;

  if (parsed.records.size() != task.objects.size()) return FormatCheck::object_count;

  // Exact correspondence: every task id exactly once, nothing else.
  std::set<std::string> expected;
  for (const auto& o : task.objects) expected.insert(o.id);
  std::set<std::string> predicted;
  for (const auto& r : parsed.records) {
    if (!r.object_id || !predicted.insert(*r.object_id).second) return FormatCheck::name_alignment;
  }
  if (predicted != expected) return FormatCheck::name_alignment;

  for (const auto& r : parsed.records) {
    if (!r.has_valid_coords()) return FormatCheck::coordinate_validity;
  }
  return FormatCheck::none;
}

}  // namespace

FormatScore format_reward(const ParsedRollOut& parsed, const SceneTask& task) {
  const FormatCheck failed = first_failure(parsed, task);
  return {format_score_for(failed), failed};
}

}  // namespace metaspatial
