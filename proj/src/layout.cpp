#include "metaspatial/layout.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include "metaspatial/errors.hpp"

namespace metaspatial {

std::string_view to_string(PlacementClass c) {
  switch (c) {
    case PlacementClass::floor: return "floor";
    case PlacementClass::surface: return "surface";
    case PlacementClass::wall_mounted: return "wall_mounted";
    case PlacementClass::ceiling: return "ceiling";
  }
  return "floor";
}

std::optional<PlacementClass> placement_class_from_string(std::string_view s) {
  if (s == "floor") return PlacementClass::floor;
  if (s == "surface") return PlacementClass::surface;
  if (s == "wall_mounted") return PlacementClass::wall_mounted;
  if (s == "ceiling") return PlacementClass::ceiling;
  return std::nullopt;
}

std::string_view to_string(ParseStage s) {
  switch (s) {
    case ParseStage::no_tags: return "no_tags";
    case ParseStage::tags_only: return "tags_only";
    case ParseStage::json_parsed: return "json_parsed";
    case ParseStage::layout_extracted: return "layout_extracted";
  }
  return "no_tags";
}

const ObjectSpec* SceneTask::find_object(std::string_view object_id) const {
  for (const auto& o : objects) {
    if (o.id == object_id) return &o;
  }
  return nullptr;
}

namespace {

constexpr std::string_view kThinkOpen = "<think>";
constexpr std::string_view kThinkClose = "</think>";
constexpr std::string_view kAnswerOpen = "<answer>";
constexpr std::string_view kAnswerClose = "</answer>";

bool is_json_ws(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

// Walks JSON text that nlohmann has already accepted and records where the
// x/y/z number literals of each top-level record sit. Key escapes are not
// decoded; a key written with escapes is simply not located.
class LiteralLocator {
 public:
  LiteralLocator(std::string_view text, std::size_t base) : text_(text), base_(base) {}

  std::vector<std::array<std::optional<ByteSpan>, 3>> run() {
    std::vector<std::array<std::optional<ByteSpan>, 3>> out;
    skip_ws();
    if (peek() == '{') {
      out.push_back(record());
    } else if (peek() == '[') {
      ++pos_;
      skip_ws();
      if (peek() == ']') return out;
      while (pos_ < text_.size()) {
        skip_ws();
        if (peek() == '{') {
          out.push_back(record());
        } else {
          skip_value();
          out.emplace_back();
        }
        skip_ws();
        if (peek() == ',') {
          ++pos_;
          continue;
        }
        break;
      }
    }
    return out;
  }

 private:
  char peek() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }

  void skip_ws() {
    while (pos_ < text_.size() && is_json_ws(text_[pos_])) ++pos_;
  }

  std::string_view string_raw() {
    const std::size_t start = ++pos_;
    while (pos_ < text_.size() && text_[pos_] != '"') {
      if (text_[pos_] == '\\') ++pos_;
      ++pos_;
    }
    std::string_view s = text_.substr(start, pos_ - start);
    ++pos_;
    return s;
  }

  ByteSpan number() {
    const std::size_t start = pos_;
    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if ((c >= '0' && c <= '9') || c == '-' || c == '+' || c == '.' || c == 'e' || c == 'E') {
        ++pos_;
      } else {
        break;
      }
    }
    return {base_ + start, base_ + pos_};
  }

  void skip_value() {
    skip_ws();
    const char c = peek();
    if (c == '"') {
      string_raw();
    } else if (c == '{' || c == '[') {
      const char close = c == '{' ? '}' : ']';
      ++pos_;
      skip_ws();
      if (peek() == close) {
        ++pos_;
        return;
      }
      while (pos_ < text_.size()) {
        skip_ws();
        if (c == '{') {
          string_raw();
          skip_ws();
          ++pos_;  // ':'
        }
        skip_value();
        skip_ws();
        if (peek() == ',') {
          ++pos_;
          continue;
        }
        ++pos_;  // close
        return;
      }
    } else if (c == '-' || (c >= '0' && c <= '9')) {
      number();
    } else {
      while (pos_ < text_.size() && std::isalpha(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    }
  }

  std::array<std::optional<ByteSpan>, 3> record() {
    std::array<std::optional<ByteSpan>, 3> spans;
    ++pos_;
    skip_ws();
    if (peek() == '}') {
      ++pos_;
      return spans;
    }
    while (pos_ < text_.size()) {
      skip_ws();
      const std::string_view key = string_raw();
      skip_ws();
      ++pos_;  // ':'
      skip_ws();
      const char c = peek();
      std::optional<std::size_t> axis;
      if (key == "x") axis = 0;
      if (key == "y") axis = 1;
      if (key == "z") axis = 2;
      if (axis && (c == '-' || (c >= '0' && c <= '9'))) {
        spans[*axis] = number();
      } else {
        if (axis) spans[*axis].reset();  // duplicate keys: last one wins
        skip_value();
      }
      skip_ws();
      if (peek() == ',') {
        ++pos_;
        continue;
      }
      ++pos_;  // '}'
      break;
    }
    return spans;
  }

  std::string_view text_;
  std::size_t base_;
  std::size_t pos_ = 0;
};

AnswerRecord record_from_json(const nlohmann::json& j) {
  AnswerRecord r;
  if (!j.is_object()) return r;
  r.is_object = true;
  if (auto it = j.find("new_object_id"); it != j.end() && it->is_string()) {
    r.object_id = it->get<std::string>();
  }
  for (Axis a : kAxes) {
    auto it = j.find(std::string(axis_name(a)));
    if (it == j.end() || !it->is_number()) continue;
    const double v = it->get<double>();
    if (std::isfinite(v)) r.coords[static_cast<std::size_t>(a)] = v;
  }
  return r;
}

}  // namespace

ParsedRollOut parse_rollout(std::string_view raw_text) {
  ParsedRollOut out;
  out.raw_text = std::string(raw_text);

  const auto think_open = raw_text.find(kThinkOpen);
  if (think_open == std::string_view::npos) return out;
  const auto think_body = think_open + kThinkOpen.size();
  const auto think_close = raw_text.find(kThinkClose, think_body);
  if (think_close == std::string_view::npos) return out;
  out.think = std::string(raw_text.substr(think_body, think_close - think_body));

  const auto answer_open = raw_text.find(kAnswerOpen, think_close + kThinkClose.size());
  if (answer_open == std::string_view::npos) return out;
  const auto answer_body = answer_open + kAnswerOpen.size();
  const auto answer_close = raw_text.find(kAnswerClose, answer_body);
  if (answer_close == std::string_view::npos) return out;

  out.answer_raw = std::string(raw_text.substr(answer_body, answer_close - answer_body));
  out.answer_offset = answer_body;
  out.stage = ParseStage::tags_only;

  std::string_view body = raw_text.substr(answer_body, answer_close - answer_body);
  std::size_t lead = 0;
  while (lead < body.size() && is_json_ws(body[lead])) ++lead;
  std::size_t tail = body.size();
  while (tail > lead && is_json_ws(body[tail - 1])) --tail;
  const std::string_view trimmed = body.substr(lead, tail - lead);

  const auto doc = nlohmann::json::parse(trimmed, nullptr, /*allow_exceptions=*/false);
  if (doc.is_discarded() || !(doc.is_object() || doc.is_array())) return out;
  out.stage = ParseStage::json_parsed;

  if (doc.is_object()) {
    out.records.push_back(record_from_json(doc));
  } else {
    for (const auto& el : doc) out.records.push_back(record_from_json(el));
  }
  const auto spans = LiteralLocator(trimmed, answer_body + lead).run();
  for (std::size_t i = 0; i < out.records.size() && i < spans.size(); ++i) {
    for (std::size_t a = 0; a < 3; ++a) {
      if (out.records[i].coords[a]) out.records[i].literal_spans[a] = spans[i][a];
    }
  }

  Layout layout;
  for (const auto& r : out.records) {
    if (!r.object_id || !r.has_valid_coords()) return out;
    layout.placements.push_back({*r.object_id, {*r.coords[0], *r.coords[1], *r.coords[2]}});
  }
  out.layout = std::move(layout);
  out.stage = ParseStage::layout_extracted;
  return out;
}

std::string format_number(double v) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  std::string s(buf.data(), end);
  // Keep the literal visibly a real number ("1.0", not "1").
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

std::vector<RolloutPiece> serialize_rollout_pieces(std::string_view think, const Layout& layout) {
  std::vector<RolloutPiece> pieces;
  std::string pending = "<think>" + std::string(think) + "</think>\n<answer>\n[";
  for (std::size_t i = 0; i < layout.placements.size(); ++i) {
    const auto& p = layout.placements[i];
    if (i > 0) pending += ",\n ";
    pending += "{\"new_object_id\": " + nlohmann::json(p.object_id).dump() + ", ";
    for (Axis a : kAxes) {
      if (a != Axis::x) pending += ", ";
      pending += "\"" + std::string(axis_name(a)) + "\": ";
      pieces.push_back({std::move(pending), std::nullopt, std::nullopt});
      pending.clear();
      pieces.push_back({format_number(p.position[a]), i, a});
    }
    pending += "}";
  }
  pending += "]\n</answer>";
  pieces.push_back({std::move(pending), std::nullopt, std::nullopt});
  return pieces;
}

std::string serialize_rollout(std::string_view think, const Layout& layout) {
  std::string out;
  for (const auto& piece : serialize_rollout_pieces(think, layout)) out += piece.text;
  return out;
}

Aabb aabb_of(const ObjectSpec& spec, const Placement& placement) {
  if (spec.id != placement.object_id) {
    throw std::invalid_argument("aabb_of: placement for '" + placement.object_id +
                                "' paired with object '" + spec.id + "'");
  }
  const Vec3& c = placement.position;
  const Vec3& s = spec.size_m;
  return {{c.x - s.x / 2, c.y - s.y / 2, c.z - s.z / 2},
          {c.x + s.x / 2, c.y + s.y / 2, c.z + s.z / 2}};
}

namespace {

double positive_number(const nlohmann::json& j, const std::string& path) {
  if (!j.is_number()) throw InputError(path, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v) || v <= 0) throw InputError(path, "expected a positive finite number");
  return v;
}

std::string string_field(const nlohmann::json& obj, const std::string& key,
                         const std::string& path, std::optional<std::string> fallback) {
  auto it = obj.find(key);
  if (it == obj.end()) {
    if (fallback) return *fallback;
    throw InputError(path + "." + key, "missing required field");
  }
  if (!it->is_string()) throw InputError(path + "." + key, "expected a string");
  return it->get<std::string>();
}

}  // namespace

SceneTask task_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InputError("$", "task must be a JSON object");
  SceneTask task;
  task.id = string_field(j, "id", "$", std::string("task"));

  auto room = j.find("room");
  if (room == j.end()) throw InputError("$.room", "missing required field");
  if (!room->is_object()) throw InputError("$.room", "expected an object");
  for (const char* key : {"x", "y", "z"}) {
    if (!room->contains(key)) throw InputError(std::string("$.room.") + key, "missing required field");
  }
  task.room.length_m = positive_number((*room)["x"], "$.room.x");
  task.room.width_m = positive_number((*room)["y"], "$.room.y");
  task.room.height_m = positive_number((*room)["z"], "$.room.z");
  if (auto el = room->find("layout_elements"); el != room->end()) {
    if (!el->is_array()) throw InputError("$.room.layout_elements", "expected an array");
    for (std::size_t i = 0; i < el->size(); ++i) {
      const auto& v = (*el)[i];
      if (!v.is_string()) {
        throw InputError("$.room.layout_elements[" + std::to_string(i) + "]", "expected a string");
      }
      task.room.layout_elements.push_back(v.get<std::string>());
    }
  }

  auto objects = j.find("objects");
  if (objects == j.end()) throw InputError("$.objects", "missing required field");
  if (!objects->is_array() || objects->empty()) {
    throw InputError("$.objects", "expected a non-empty array");
  }
  std::set<std::string> seen;
  for (std::size_t i = 0; i < objects->size(); ++i) {
    const std::string path = "$.objects[" + std::to_string(i) + "]";
    const auto& o = (*objects)[i];
    if (!o.is_object()) throw InputError(path, "expected an object");
    ObjectSpec spec;
    spec.id = string_field(o, "id", path, std::nullopt);
    if (spec.id.empty()) throw InputError(path + ".id", "must not be empty");
    if (!seen.insert(spec.id).second) throw InputError(path + ".id", "duplicate object id '" + spec.id + "'");
    spec.category = string_field(o, "category", path, std::string());
    spec.material = string_field(o, "material", path, std::string());
    spec.style = string_field(o, "style", path, std::string());
    auto size = o.find("size_m");
    if (size == o.end()) throw InputError(path + ".size_m", "missing required field");
    if (!size->is_array() || size->size() != 3) throw InputError(path + ".size_m", "expected [dx, dy, dz]");
    for (Axis a : kAxes) {
      const auto k = static_cast<std::size_t>(a);
      spec.size_m[a] = positive_number((*size)[k], path + ".size_m[" + std::to_string(k) + "]");
    }
    const std::string cls = string_field(o, "placement_class", path, std::string("floor"));
    auto parsed = placement_class_from_string(cls);
    if (!parsed) throw InputError(path + ".placement_class", "unknown placement class '" + cls + "'");
    spec.placement_class = *parsed;
    task.objects.push_back(std::move(spec));
  }
  task.user_preference = string_field(j, "user_preference", "$", std::string());
  return task;
}

nlohmann::json task_to_json(const SceneTask& task) {
  nlohmann::json objects = nlohmann::json::array();
  for (const auto& o : task.objects) {
    objects.push_back({{"id", o.id},
                       {"category", o.category},
                       {"size_m", {o.size_m.x, o.size_m.y, o.size_m.z}},
                       {"material", o.material},
                       {"style", o.style},
                       {"placement_class", to_string(o.placement_class)}});
  }
  return {{"id", task.id},
          {"room",
           {{"x", task.room.length_m},
            {"y", task.room.width_m},
            {"z", task.room.height_m},
            {"layout_elements", task.room.layout_elements}}},
          {"objects", std::move(objects)},
          {"user_preference", task.user_preference}};
}

SceneTask load_task(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError(path, "cannot open task file");
  const auto doc = nlohmann::json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw InputError(path, "task file is not valid JSON");
  return task_from_json(doc);
}

}  // namespace metaspatial
