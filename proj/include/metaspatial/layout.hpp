#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "metaspatial/geometry.hpp"

namespace metaspatial {

enum class PlacementClass { floor, surface, wall_mounted, ceiling };

std::string_view to_string(PlacementClass c);
std::optional<PlacementClass> placement_class_from_string(std::string_view s);

// Room frame: origin at a floor corner, interior [0,length]x[0,width]x[0,height].
struct RoomSpec {
  double length_m = 0.0;
  double width_m = 0.0;
  double height_m = 0.0;
  std::vector<std::string> layout_elements;

  Vec3 extent() const { return {length_m, width_m, height_m}; }
};

struct ObjectSpec {
  std::string id;
  std::string category;
  Vec3 size_m;  // full extents
  std::string material;
  std::string style;
  PlacementClass placement_class = PlacementClass::floor;
};

// (x, y, z) is the centroid of the object's axis-aligned box.
struct Placement {
  std::string object_id;
  Vec3 position;

  friend bool operator==(const Placement&, const Placement&) = default;
};

struct Layout {
  std::vector<Placement> placements;

  friend bool operator==(const Layout&, const Layout&) = default;
};

struct SceneTask {
  std::string id = "task";
  RoomSpec room;
  std::vector<ObjectSpec> objects;
  std::string user_preference;

  const ObjectSpec* find_object(std::string_view object_id) const;
};

enum class ParseStage { no_tags, tags_only, json_parsed, layout_extracted };

std::string_view to_string(ParseStage s);

// Half-open byte range into a text buffer.
struct ByteSpan {
  std::size_t begin = 0;
  std::size_t end = 0;

  bool intersects(const ByteSpan& o) const { return begin < o.end && o.begin < end; }
  friend bool operator==(const ByteSpan&, const ByteSpan&) = default;
};

// One record of the <answer> JSON as the model wrote it, before validation.
// A coordinate is present only when the field holds a finite number.
struct AnswerRecord {
  bool is_object = false;
  std::optional<std::string> object_id;
  std::array<std::optional<double>, 3> coords;
  std::array<std::optional<ByteSpan>, 3> literal_spans;  // offsets into raw_text

  bool has_valid_coords() const { return coords[0] && coords[1] && coords[2]; }
};

struct ParsedRollOut {
  std::string raw_text;
  std::optional<std::string> think;
  std::optional<std::string> answer_raw;
  std::size_t answer_offset = 0;
  std::vector<AnswerRecord> records;  // empty unless stage >= json_parsed
  std::optional<Layout> layout;
  ParseStage stage = ParseStage::no_tags;
};

// Total: never throws, every malformation is reported through `stage`.
ParsedRollOut parse_rollout(std::string_view raw_text);

// Shortest decimal text that parses back to the same double.
std::string format_number(double v);

// A piece of serialized roll-out text. Coordinate literals are their own pieces.
struct RolloutPiece {
  std::string text;
  std::optional<std::size_t> placement;
  std::optional<Axis> axis;
};

std::vector<RolloutPiece> serialize_rollout_pieces(std::string_view think,
                                                   const Layout& layout);
std::string serialize_rollout(std::string_view think, const Layout& layout);

// Throws std::invalid_argument when the placement is for another object.
Aabb aabb_of(const ObjectSpec& spec, const Placement& placement);

// Task files. Errors are InputError carrying the JSON field path.
SceneTask task_from_json(const nlohmann::json& j);
nlohmann::json task_to_json(const SceneTask& task);
SceneTask load_task(const std::string& path);

}  // namespace metaspatial
