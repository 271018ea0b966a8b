#pragma once

#include <cstdlib>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cisru/sim_config.hpp"

namespace cisru {

/// Scenario or config document error, with the 1-based line and the JSON
/// pointer of the offending field when known.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& msg, std::size_t line, std::string field)
      : std::runtime_error(format(msg, line, field)), line_(line), field_(std::move(field)) {}

  std::size_t line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  static std::string format(const std::string& msg, std::size_t line, const std::string& field) {
    std::string s = "line " + std::to_string(line);
    if (!field.empty()) s += ", field " + field;
    return s + ": " + msg;
  }

  std::size_t line_;
  std::string field_;
};

namespace detail {

// Character iterator that counts the newlines the JSON lexer has consumed.
class LineCountingIterator {
 public:
  using iterator_category = std::forward_iterator_tag;
  using value_type = char;
  using difference_type = std::ptrdiff_t;
  using pointer = const char*;
  using reference = const char&;

  LineCountingIterator() = default;
  LineCountingIterator(const char* p, std::size_t* lines) : p_(p), lines_(lines) {}

  reference operator*() const { return *p_; }
  LineCountingIterator& operator++() {
    if (lines_ && *p_ == '\n') ++*lines_;
    ++p_;
    return *this;
  }
  LineCountingIterator operator++(int) {
    auto tmp = *this;
    ++*this;
    return tmp;
  }
  bool operator==(const LineCountingIterator& o) const { return p_ == o.p_; }
  bool operator!=(const LineCountingIterator& o) const { return p_ != o.p_; }

 private:
  const char* p_ = nullptr;
  std::size_t* lines_ = nullptr;
};

// Records the line on which every value starts, keyed by JSON pointer.
class LineMapper : public nlohmann::json_sax<Json> {
 public:
  explicit LineMapper(const std::size_t* newlines) : newlines_(newlines) {}

  std::map<std::string, std::size_t> lines;
  std::size_t error_line = 0;
  std::string error_message;

  bool null() override { return value(); }
  bool boolean(bool) override { return value(); }
  bool number_integer(number_integer_t) override { return value(); }
  bool number_unsigned(number_unsigned_t) override { return value(); }
  bool number_float(number_float_t, const string_t&) override { return value(); }
  bool string(string_t&) override { return value(); }
  bool binary(binary_t&) override { return value(); }
  bool start_object(std::size_t) override {
    value();
    stack_.push_back({false, 0, {}, path_});
    return true;
  }
  bool key(string_t& k) override {
    stack_.back().key = k;
    lines[current_path()] = *newlines_ + 1;
    return true;
  }
  bool end_object() override {
    path_ = stack_.back().parent;
    stack_.pop_back();
    return true;
  }
  bool start_array(std::size_t) override {
    value();
    stack_.push_back({true, 0, {}, path_});
    return true;
  }
  bool end_array() override { return end_object(); }
  bool parse_error(std::size_t, const std::string&, const nlohmann::detail::exception& ex) override {
    error_line = *newlines_ + 1;
    error_message = ex.what();
    return false;
  }

 private:
  struct Frame {
    bool array;
    std::size_t index;
    std::string key;
    std::string parent;
  };

  static std::string escape(const std::string& k) {
    std::string out;
    for (char c : k) {
      if (c == '~') {
        out += "~0";
      } else if (c == '/') {
        out += "~1";
      } else {
        out += c;
      }
    }
    return out;
  }

  std::string current_path() const {
    if (stack_.empty()) return {};
    const Frame& f = stack_.back();
    return f.parent + "/" + (f.array ? std::to_string(f.index) : escape(f.key));
  }

  bool value() {
    if (stack_.empty()) {
      lines[""] = *newlines_ + 1;
      path_.clear();
      return true;
    }
    path_ = current_path();
    lines.emplace(path_, *newlines_ + 1);
    if (stack_.back().array) ++stack_.back().index;
    return true;
  }

  const std::size_t* newlines_;
  std::vector<Frame> stack_;
  std::string path_;
};

}  // namespace detail

/// A parsed JSON document that can report the source line of any field.
class LocatedJson {
 public:
  explicit LocatedJson(const std::string& text) {
    std::size_t newlines = 0;
    detail::LineMapper mapper(&newlines);
    const char* b = text.data();
    const char* e = b + text.size();
    const bool ok = Json::sax_parse(detail::LineCountingIterator(b, &newlines), detail::LineCountingIterator(e, nullptr),
                                    &mapper);
    if (!ok) throw ParseError(mapper.error_message, mapper.error_line, {});
    lines_ = std::move(mapper.lines);
    doc_ = Json::parse(text);
  }

  const Json& doc() const { return doc_; }

  /// Line of `pointer`, or of its closest recorded ancestor.
  std::size_t line_of(std::string pointer) const {
    while (true) {
      auto it = lines_.find(pointer);
      if (it != lines_.end()) return it->second;
      if (pointer.empty()) return 1;
      pointer.erase(pointer.rfind('/'));
    }
  }

  [[noreturn]] void fail(const std::string& pointer, const std::string& msg) const {
    throw ParseError(msg, line_of(pointer), pointer);
  }

 private:
  Json doc_;
  std::map<std::string, std::size_t> lines_;
};

struct AgentSpec {
  std::string id;
  executive::Role role = executive::Role::Leader;
  mas::AutonomyLevel level = mas::AutonomyLevel::E4;
  std::size_t storage_slots = 0;
};

struct ToolSpec {
  std::string tool_id;
  manip::ToolKind kind = manip::ToolKind::Shovel;
  std::string slot_id;
};

struct GoalSpec {
  world::Tick at = 0;
  mas::Goal goal;  // goal_id is assigned when issued
};

struct CommandSpec {
  world::Tick at = 0;
  Json command;
  bool retry = false;  // re-apply every tick until acknowledged
};

struct Scenario {
  std::string name;
  std::uint64_t seed = 0;
  world::World world;
  std::vector<AgentSpec> agents;
  std::vector<ToolSpec> tools;
  supervise::Assignments assignments;
  std::vector<GoalSpec> goals;
  std::vector<CommandSpec> commands;
  Json config_overrides = Json::object();
  SimConfig config;
};

namespace detail {

template <typename T>
T field(const LocatedJson& doc, const Json& obj, const std::string& ptr, const char* key) {
  if (!obj.is_object() || !obj.contains(key)) doc.fail(ptr, std::string("missing field '") + key + "'");
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    doc.fail(ptr + "/" + key, std::string("field '") + key + "' has the wrong type");
  }
}

inline Vec2 vec_field(const LocatedJson& doc, const Json& v, const std::string& ptr) {
  if (!v.is_array() || v.size() < 2 || !v.at(0).is_number() || !v.at(1).is_number()) {
    doc.fail(ptr, "expected [x, y]");
  }
  return {v.at(0).get<double>(), v.at(1).get<double>()};
}

inline Pose2D pose_field(const LocatedJson& doc, const Json& v, const std::string& ptr) {
  const Vec2 p = vec_field(doc, v, ptr);
  double th = 0.0;
  if (v.size() > 2) {
    if (!v.at(2).is_number()) doc.fail(ptr + "/2", "theta must be a number");
    th = v.at(2).get<double>();
  }
  return {p.x, p.y, normalize_angle(th)};
}

inline world::Tick tick_field(const LocatedJson& doc, const Json& obj, const std::string& ptr) {
  if (!obj.contains("at")) return 0;
  const Json& a = obj.at("at");
  if (!a.is_number_integer() || a.get<long long>() < 0) doc.fail(ptr + "/at", "'at' must be a non-negative integer");
  return a.get<world::Tick>();
}

}  // namespace detail

/// Builds a scenario from its JSON text. `overrides` (for instance the
/// CISRU_SIM_CONFIG file) is applied after the document's own config.
inline Scenario load_scenario(const std::string& text, const Json& overrides = Json()) {
  const LocatedJson doc(text);
  const Json& j = doc.doc();
  if (!j.is_object()) doc.fail("", "scenario must be a JSON object");
  static const char* kKeys[] = {"name", "grid", "entities", "assignments", "goals", "script", "seed", "config"};
  for (const auto& [key, _] : j.items()) {
    if (std::find_if(std::begin(kKeys), std::end(kKeys), [&](const char* k) { return key == k; }) == std::end(kKeys)) {
      doc.fail("/" + key, "unknown top-level key '" + key + "'");
    }
  }
  Scenario sc;
  sc.name = j.value("name", std::string("scenario"));
  if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned()) doc.fail("/seed", "seed must be a non-negative integer");
    sc.seed = j.at("seed").get<std::uint64_t>();
  }

  if (j.contains("config")) sc.config_overrides = j.at("config");
  try {
    apply_config(sc.config, sc.config_overrides);
  } catch (const ConfigError& e) {
    doc.fail("/config", e.what());
  }
  try {
    apply_config(sc.config, overrides);
  } catch (const ConfigError& e) {
    throw ParseError(std::string("config override: ") + e.what(), 0, {});
  }

  if (!j.contains("grid")) doc.fail("", "missing field 'grid'");
  const Json& g = j.at("grid");
  const double res = g.value("resolution", 1.0);
  if (!(res > 0.0)) doc.fail("/grid/resolution", "resolution must be positive");
  Pose2D origin{};
  if (g.contains("origin")) origin = detail::pose_field(doc, g.at("origin"), "/grid/origin");
  GridMap terrain;
  if (g.contains("rows")) {
    const auto rows = detail::field<std::vector<std::string>>(doc, g, "/grid", "rows");
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].find('?') != std::string::npos) {
        doc.fail("/grid/rows/" + std::to_string(i), "'?' (Unknown) is illegal in ground truth");
      }
    }
    try {
      terrain = grid_from_rows(rows, res, origin, false);
    } catch (const std::invalid_argument& e) {
      doc.fail("/grid/rows", e.what());
    }
  } else {
    const int w = detail::field<int>(doc, g, "/grid", "width");
    const int h = detail::field<int>(doc, g, "/grid", "height");
    if (w <= 0 || h <= 0) doc.fail("/grid", "width and height must be positive");
    terrain = GridMap(w, h, res, origin, CellState::Free);
  }
  sc.world = world::World(std::move(terrain), sc.config.world);

  if (j.contains("entities")) {
    const Json& es = j.at("entities");
    if (!es.is_array()) doc.fail("/entities", "entities must be an array");
    for (std::size_t i = 0; i < es.size(); ++i) {
      const std::string ptr = "/entities/" + std::to_string(i);
      const Json& e = es.at(i);
      world::Entity ent;
      ent.id = detail::field<std::string>(doc, e, ptr, "id");
      const auto kind = world::entity_kind_from_string(detail::field<std::string>(doc, e, ptr, "kind"));
      if (!kind) doc.fail(ptr + "/kind", "unknown entity kind '" + e.at("kind").get<std::string>() + "'");
      ent.kind = *kind;
      if (e.contains("pose")) ent.pose = detail::pose_field(doc, e.at("pose"), ptr + "/pose");
      ent.footprint_radius = e.value("radius", 0.0);
      if (ent.kind == world::EntityKind::Astronaut) {
        const std::string posture = e.value("posture", std::string("Upright"));
        if (posture != "Upright" && posture != "Fallen") doc.fail(ptr + "/posture", "posture must be Upright or Fallen");
        ent.posture = posture == "Upright" ? world::Posture::Upright : world::Posture::Fallen;
      } else if (e.contains("posture")) {
        doc.fail(ptr + "/posture", "posture only applies to astronauts");
      }
      if (e.contains("defects")) {
        const Json& ds = e.at("defects");
        for (std::size_t k = 0; k < ds.size(); ++k) {
          const std::string dp = ptr + "/defects/" + std::to_string(k);
          world::Defect d;
          d.local_point = detail::vec_field(doc, ds.at(k).value("at", Json()), dp + "/at");
          d.has_crack = ds.at(k).value("crack", true);
          ent.defects.push_back(d);
        }
      }
      if (e.contains("interest")) {
        if (!e.at("interest").is_number()) doc.fail(ptr + "/interest", "interest must be a number");
        ent.interest_score = e.at("interest").get<double>();
      }
      const char* parent_key = e.contains("on") ? "on" : "attached_to";
      if (e.contains(parent_key)) {
        if (!e.at(parent_key).is_string()) doc.fail(ptr + "/" + parent_key, "parent must be an entity id");
        ent.attached_to = e.at(parent_key).get<std::string>();
        if (e.contains("offset")) ent.attach_offset = detail::vec_field(doc, e.at("offset"), ptr + "/offset");
      }
      try {
        world::validate(ent);
        sc.world.add_entity(ent);
      } catch (const std::invalid_argument& ex) {
        doc.fail(ptr, ex.what());
      }
      if (ent.kind == world::EntityKind::Rover) {
        AgentSpec a;
        a.id = ent.id;
        const auto role = executive::role_from_string(e.value("role", std::string("Leader")));
        if (!role) doc.fail(ptr + "/role", "role must be Leader or Secondary");
        a.role = *role;
        const auto level = mas::autonomy_level_from_string(e.value("level", std::string("E4")));
        if (!level) doc.fail(ptr + "/level", "level must be one of E1..E4");
        a.level = *level;
        a.storage_slots = e.value("storage_slots", std::size_t{0});
        sc.agents.push_back(a);
      }
      if (ent.kind == world::EntityKind::ToolSlot && e.contains("tool")) {
        const Json& t = e.at("tool");
        ToolSpec ts;
        ts.tool_id = detail::field<std::string>(doc, t, ptr + "/tool", "id");
        const std::string k = t.value("kind", std::string("Shovel"));
        if (k != "Shovel" && k != "Brush") doc.fail(ptr + "/tool/kind", "tool kind must be Shovel or Brush");
        ts.kind = k == "Shovel" ? manip::ToolKind::Shovel : manip::ToolKind::Brush;
        ts.slot_id = ent.id;
        sc.tools.push_back(ts);
      }
    }
    for (std::size_t i = 0; i < es.size(); ++i) {
      const auto& ent = sc.world.entities()[i];
      if (ent.attached_to && !sc.world.find(*ent.attached_to)) {
        const std::string key = es.at(i).contains("on") ? "/on" : "/attached_to";
        doc.fail("/entities/" + std::to_string(i) + key, "unknown entity '" + *ent.attached_to + "'");
      }
    }
    std::size_t leaders = 0;
    for (const auto& a : sc.agents) leaders += a.role == executive::Role::Leader;
    if (leaders > 1) doc.fail("/entities", "at most one Leader rover");
  }
  // Panels are solid: stamp their footprints into the terrain.
  for (const auto& e : sc.world.entities()) {
    if (e.kind != world::EntityKind::SolarPanelArray) continue;
    auto& t = sc.world.terrain();
    auto cells = world::cells_in_disc(t, e.position(), e.footprint_radius);
    if (auto c = t.try_world_to_cell(e.position())) cells.push_back(*c);
    for (const auto& c : cells) t.set(c, CellState::Obstacle);
  }
  sc.world.update_attachments();

  if (j.contains("assignments")) {
    const Json& a = j.at("assignments");
    if (!a.is_object()) doc.fail("/assignments", "assignments must map astronaut id to asset id");
    for (const auto& [astro, asset] : a.items()) {
      const auto* e = sc.world.find(astro);
      if (!e || e->kind != world::EntityKind::Astronaut) doc.fail("/assignments/" + astro, "unknown astronaut");
      if (!asset.is_string() || !sc.world.find(asset.get<std::string>())) {
        doc.fail("/assignments/" + astro, "unknown asset");
      }
      sc.assignments[astro] = asset.get<std::string>();
    }
  }

  if (j.contains("goals")) {
    const Json& gs = j.at("goals");
    if (!gs.is_array()) doc.fail("/goals", "goals must be an array");
    for (std::size_t i = 0; i < gs.size(); ++i) {
      const std::string ptr = "/goals/" + std::to_string(i);
      const Json& gj = gs.at(i);
      GoalSpec spec;
      spec.at = detail::tick_field(doc, gj, ptr);
      const auto kind = mas::goal_kind_from_string(detail::field<std::string>(doc, gj, ptr, "kind"));
      if (!kind) doc.fail(ptr + "/kind", "unknown goal kind '" + gj.at("kind").get<std::string>() + "'");
      const auto level = mas::autonomy_level_from_string(gj.value("level", std::string("E4")));
      if (!level) doc.fail(ptr + "/level", "level must be one of E1..E4");
      spec.goal.required_level = *level;
      try {
        spec.goal.params = mas::params_from_json(*kind, gj.value("params", Json::object()));
      } catch (const mas::GoalFormatError& e) {
        doc.fail(ptr + "/params", e.what());
      }
      spec.goal.addressee = detail::field<std::string>(doc, gj, ptr, "addressee");
      const auto* addressee = sc.world.find(spec.goal.addressee);
      if (!addressee || addressee->kind != world::EntityKind::Rover) {
        doc.fail(ptr + "/addressee", "addressee must be a rover");
      }
      spec.goal.originator = gj.value("originator", std::string("mc"));
      sc.goals.push_back(std::move(spec));
    }
  }

  if (j.contains("script")) {
    const Json& ss = j.at("script");
    if (!ss.is_array()) doc.fail("/script", "script must be an array");
    for (std::size_t i = 0; i < ss.size(); ++i) {
      const std::string ptr = "/script/" + std::to_string(i);
      const Json& s = ss.at(i);
      const world::Tick at = detail::tick_field(doc, s, ptr);
      if (s.contains("command")) {
        if (!s.at("command").is_object() || !s.at("command").contains("name")) {
          doc.fail(ptr + "/command", "command needs a 'name'");
        }
        sc.commands.push_back({at, s.at("command"), s.value("retry", false)});
        continue;
      }
      world::WorldEvent ev;
      ev.at = at;
      const std::string kind = detail::field<std::string>(doc, s, ptr, "event");
      if (kind == "Fall") {
        ev.kind = world::WorldEventKind::Fall;
      } else if (kind == "StandUp") {
        ev.kind = world::WorldEventKind::StandUp;
      } else if (kind == "MoveTo") {
        ev.kind = world::WorldEventKind::MoveTo;
        ev.target = detail::vec_field(doc, s.value("target", Json()), ptr + "/target");
        ev.speed = s.value("speed", 0.5);
      } else if (kind == "AddObstacle" || kind == "RemoveObstacle") {
        ev.kind = kind == "AddObstacle" ? world::WorldEventKind::AddObstacle : world::WorldEventKind::RemoveObstacle;
        const Json& cells = s.value("cells", Json::array());
        for (std::size_t k = 0; k < cells.size(); ++k) {
          const Json& c = cells.at(k);
          if (!c.is_array() || c.size() != 2) doc.fail(ptr + "/cells/" + std::to_string(k), "expected [col, row]");
          ev.cells.push_back({c.at(0).get<int>(), c.at(1).get<int>()});
        }
      } else {
        doc.fail(ptr + "/event", "unknown script event '" + kind + "'");
      }
      if (ev.kind != world::WorldEventKind::AddObstacle && ev.kind != world::WorldEventKind::RemoveObstacle) {
        ev.entity = detail::field<std::string>(doc, s, ptr, "entity");
        if (!sc.world.find(ev.entity)) doc.fail(ptr + "/entity", "unknown entity '" + ev.entity + "'");
      }
      sc.world.add_script(std::move(ev));
    }
  }
  return sc;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Override document named by CISRU_SIM_CONFIG, or null.
inline Json env_config_overrides() {
  const char* path = std::getenv("CISRU_SIM_CONFIG");
  if (!path || !*path) return Json();
  const std::string text = read_file(path);
  try {
    return LocatedJson(text).doc();
  } catch (const ParseError& e) {
    throw ParseError(std::string("CISRU_SIM_CONFIG ") + path + ": " + e.what(), e.line(), e.field());
  }
}

}  // namespace cisru
