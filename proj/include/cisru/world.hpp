#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cisru/geometry.hpp"
#include "cisru/grid_map.hpp"

namespace cisru::world {

using Tick = std::uint64_t;

enum class EntityKind { Rover, Astronaut, SolarPanelArray, BaseStation, ToolSlot, SamplePoint };
enum class Posture { Upright, Fallen };

inline std::string_view to_string(EntityKind k) {
  switch (k) {
    case EntityKind::Rover: return "Rover";
    case EntityKind::Astronaut: return "Astronaut";
    case EntityKind::SolarPanelArray: return "SolarPanelArray";
    case EntityKind::BaseStation: return "BaseStation";
    case EntityKind::ToolSlot: return "ToolSlot";
    case EntityKind::SamplePoint: return "SamplePoint";
  }
  return "?";
}

inline std::optional<EntityKind> entity_kind_from_string(std::string_view s) {
  for (auto k : {EntityKind::Rover, EntityKind::Astronaut, EntityKind::SolarPanelArray,
                 EntityKind::BaseStation, EntityKind::ToolSlot, EntityKind::SamplePoint}) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

inline std::string_view to_string(Posture p) { return p == Posture::Upright ? "Upright" : "Fallen"; }

struct Defect {
  Vec2 local_point{};
  bool has_crack = false;
};

struct Entity {
  std::string id;
  EntityKind kind = EntityKind::Rover;
  Pose2D pose{};
  double footprint_radius = 0.0;
  std::optional<Posture> posture;        // astronauts only
  std::vector<Defect> defects;           // panels only
  std::optional<double> interest_score;  // sample points only

  // Tool slots ride on a rover.
  std::optional<std::string> attached_to;
  Vec2 attach_offset{};

  // Scripted walking target (astronauts).
  std::optional<Vec2> waypoint;
  double waypoint_speed = 0.0;

  Vec2 position() const { return pose.position(); }
};

/// Throws std::invalid_argument when an entity breaks its kind's invariants.
inline void validate(const Entity& e) {
  if (e.id.empty()) throw std::invalid_argument("entity id is empty");
  if (!(e.footprint_radius >= 0.0)) throw std::invalid_argument(e.id + ": footprint_radius must be >= 0");
  if (e.posture && e.kind != EntityKind::Astronaut) throw std::invalid_argument(e.id + ": posture only on astronauts");
  if (e.kind == EntityKind::Astronaut && !e.posture) throw std::invalid_argument(e.id + ": astronaut needs a posture");
  if (!e.defects.empty() && e.kind != EntityKind::SolarPanelArray) {
    throw std::invalid_argument(e.id + ": defects only on solar panel arrays");
  }
  if (e.interest_score) {
    if (e.kind != EntityKind::SamplePoint) throw std::invalid_argument(e.id + ": interest_score only on sample points");
    if (*e.interest_score < 0.0 || *e.interest_score > 1.0) {
      throw std::invalid_argument(e.id + ": interest_score outside [0,1]");
    }
  }
}

struct SimClock {
  Tick tick = 0;
  double dt = 1.0;
};

struct WorldConfig {
  double dt = 1.0;
  double v_max = 0.5;
  double omega_max = 0.8;
};

struct VelocityCommand {
  double v = 0.0;
  double omega = 0.0;
  bool operator==(const VelocityCommand&) const = default;
};

enum class WorldEventKind { Fall, StandUp, MoveTo, AddObstacle, RemoveObstacle };

inline std::string_view to_string(WorldEventKind k) {
  switch (k) {
    case WorldEventKind::Fall: return "Fall";
    case WorldEventKind::StandUp: return "StandUp";
    case WorldEventKind::MoveTo: return "MoveTo";
    case WorldEventKind::AddObstacle: return "AddObstacle";
    case WorldEventKind::RemoveObstacle: return "RemoveObstacle";
  }
  return "?";
}

struct WorldEvent {
  Tick at = 0;
  WorldEventKind kind = WorldEventKind::Fall;
  std::string entity;
  Vec2 target{};
  double speed = 0.0;
  std::vector<CellIndex> cells;
};

/// Something that happened while stepping: a collision or an applied script event.
struct StepRecord {
  Tick tick = 0;
  std::string type;  // "Collision" or the script event kind
  std::string entity;
  Vec2 position{};
  std::size_t cell_count = 0;
};

class World {
 public:
  World() = default;
  World(GridMap terrain, WorldConfig config) : terrain_(std::move(terrain)), config_(config) {
    if (!(config.dt > 0.0)) throw std::invalid_argument("dt must be positive");
    clock_.dt = config.dt;
  }

  const GridMap& terrain() const { return terrain_; }
  GridMap& terrain() { return terrain_; }
  const WorldConfig& config() const { return config_; }
  const SimClock& clock() const { return clock_; }
  Tick tick() const { return clock_.tick; }

  const std::vector<Entity>& entities() const { return entities_; }

  void add_entity(Entity e) {
    validate(e);
    if (find(e.id)) throw std::invalid_argument("duplicate entity id '" + e.id + "'");
    entities_.push_back(std::move(e));
  }

  const Entity* find(std::string_view id) const {
    for (const auto& e : entities_) if (e.id == id) return &e;
    return nullptr;
  }
  Entity* find(std::string_view id) {
    for (auto& e : entities_) if (e.id == id) return &e;
    return nullptr;
  }
  const Entity& get(std::string_view id) const {
    const Entity* e = find(id);
    if (!e) throw std::out_of_range("unknown entity '" + std::string(id) + "'");
    return *e;
  }

  std::vector<const Entity*> of_kind(EntityKind k) const {
    std::vector<const Entity*> out;
    for (const auto& e : entities_) if (e.kind == k) out.push_back(&e);
    return out;
  }

  void add_script(WorldEvent ev) {
    auto pos = std::upper_bound(script_.begin() + static_cast<std::ptrdiff_t>(next_event_), script_.end(), ev.at,
                                [](Tick t, const WorldEvent& e) { return t < e.at; });
    script_.insert(pos, std::move(ev));
  }
  const std::vector<WorldEvent>& script() const { return script_; }

  /// Applies script events due at the current tick. Used once after loading.
  std::vector<StepRecord> apply_due_events() {
    std::vector<StepRecord> out;
    while (next_event_ < script_.size() && script_[next_event_].at <= clock_.tick) {
      out.push_back(apply_event(script_[next_event_]));
      ++next_event_;
    }
    return out;
  }

  /// Unicycle integration for every rover, scripted walking, then the clock
  /// advances and due script events are applied. Commands are clamped.
  std::vector<StepRecord> step(const std::map<std::string, VelocityCommand>& commands) {
    std::vector<StepRecord> out;
    const double dt = clock_.dt;
    for (auto& e : entities_) {
      if (e.kind != EntityKind::Rover) continue;
      auto it = commands.find(e.id);
      if (it == commands.end()) continue;
      const double v = std::clamp(it->second.v, -config_.v_max, config_.v_max);
      const double w = std::clamp(it->second.omega, -config_.omega_max, config_.omega_max);
      const Vec2 from = e.position();
      const Vec2 to{from.x + v * std::cos(e.pose.theta) * dt, from.y + v * std::sin(e.pose.theta) * dt};
      const auto [reached, collided] = sweep(from, to);
      e.pose.x = reached.x;
      e.pose.y = reached.y;
      e.pose.theta = normalize_angle(e.pose.theta + w * dt);
      if (collided) out.push_back({clock_.tick, "Collision", e.id, reached, 0});
    }
    for (auto& e : entities_) {
      if (!e.waypoint || (e.posture && *e.posture == Posture::Fallen)) continue;
      const Vec2 d = *e.waypoint - e.position();
      const double dist = d.norm();
      const double reach = e.waypoint_speed * dt;
      if (dist <= reach || dist == 0.0) {
        e.pose.x = e.waypoint->x;
        e.pose.y = e.waypoint->y;
        e.waypoint.reset();
      } else {
        e.pose.x += d.x / dist * reach;
        e.pose.y += d.y / dist * reach;
        e.pose.theta = std::atan2(d.y, d.x);
      }
    }
    update_attachments();
    ++clock_.tick;
    auto applied = apply_due_events();
    out.insert(out.end(), applied.begin(), applied.end());
    return out;
  }

  void update_attachments() {
    for (auto& e : entities_) {
      if (!e.attached_to) continue;
      const Entity* parent = find(*e.attached_to);
      if (!parent) continue;
      const Vec2 p = parent->pose.transform(e.attach_offset);
      e.pose = {p.x, p.y, parent->pose.theta};
    }
  }

  bool blocked(Vec2 p) const {
    auto c = terrain_.try_world_to_cell(p);
    return !c || terrain_.at(*c) == CellState::Obstacle;
  }

 private:
  struct SweepResult {
    Vec2 reached;
    bool collided;
  };

  // Clamp, never teleport: stop at the last sample before an obstacle cell or the grid edge.
  SweepResult sweep(Vec2 from, Vec2 to) const {
    const double len = distance(from, to);
    if (len == 0.0) return {from, false};
    const int n = std::max(1, static_cast<int>(std::ceil(len / (terrain_.resolution() / 4.0))));
    Vec2 last = from;
    for (int i = 1; i <= n; ++i) {
      const Vec2 p = from + (to - from) * (static_cast<double>(i) / n);
      if (blocked(p)) return {last, true};
      last = p;
    }
    return {to, false};
  }

  StepRecord apply_event(const WorldEvent& ev) {
    StepRecord rec{clock_.tick, std::string(to_string(ev.kind)), ev.entity, ev.target, 0};
    switch (ev.kind) {
      case WorldEventKind::Fall:
      case WorldEventKind::StandUp: {
        Entity* e = find(ev.entity);
        if (e && e->kind == EntityKind::Astronaut) {
          e->posture = ev.kind == WorldEventKind::Fall ? Posture::Fallen : Posture::Upright;
          if (ev.kind == WorldEventKind::Fall) e->waypoint.reset();
          rec.position = e->position();
        }
        break;
      }
      case WorldEventKind::MoveTo: {
        Entity* e = find(ev.entity);
        if (e) {
          e->waypoint = ev.target;
          e->waypoint_speed = ev.speed;
        }
        break;
      }
      case WorldEventKind::AddObstacle:
      case WorldEventKind::RemoveObstacle:
        for (const auto& c : ev.cells) {
          if (!terrain_.in_bounds(c)) continue;
          terrain_.set(c, ev.kind == WorldEventKind::AddObstacle ? CellState::Obstacle : CellState::Free);
          ++rec.cell_count;
        }
        break;
    }
    return rec;
  }

  GridMap terrain_;
  WorldConfig config_{};
  SimClock clock_{};
  std::vector<Entity> entities_;
  std::vector<WorldEvent> script_;
  std::size_t next_event_ = 0;
};

struct RevealedCell {
  std::size_t index = 0;
  CellState state = CellState::Unknown;
  bool operator==(const RevealedCell&) const = default;
};

/// Ground-truth states of the cells hit by rays inside the sensor cone. Rays
/// are marched at resolution/2 and stop after the first Obstacle cell; ray
/// spacing is resolution/range radians.
inline std::vector<RevealedCell> raycast_reveal(const GridMap& truth, const Pose2D& sensor, double fov,
                                                double range) {
  std::vector<RevealedCell> out;
  if (!(range > 0.0) || !(fov > 0.0)) return out;
  fov = std::min(fov, 2.0 * kPi);
  const double res = truth.resolution();
  const double spacing = res / range;
  const bool full = fov >= 2.0 * kPi - 1e-12;
  const int n = std::max(1, static_cast<int>(std::ceil(fov / spacing)));
  const int rays = full ? n : n + 1;
  const double step = res / 2.0;
  const int samples = static_cast<int>(std::floor(range / step));
  std::vector<char> seen(truth.size(), 0);
  for (int k = 0; k < rays; ++k) {
    const double a = full ? sensor.theta - kPi + (2.0 * kPi * k) / n
                          : sensor.theta - fov / 2.0 + fov * k / n;
    const Vec2 dir{std::cos(a), std::sin(a)};
    for (int i = 0; i <= samples; ++i) {
      const Vec2 p = sensor.position() + dir * (step * i);
      const auto c = truth.try_world_to_cell(p);
      if (!c) break;
      const std::size_t idx = truth.index(*c);
      seen[idx] = 1;
      if (truth.at(idx) == CellState::Obstacle) break;
    }
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (seen[i]) out.push_back({i, truth.at(i)});
  }
  return out;
}

/// Cells whose centers lie inside a disc.
inline std::vector<CellIndex> cells_in_disc(const GridMap& g, Vec2 center, double radius) {
  std::vector<CellIndex> out;
  const double res = g.resolution();
  const Vec2 l = g.to_local(center);
  const int c0 = std::max(0, static_cast<int>(std::floor((l.x - radius) / res)));
  const int c1 = std::min(g.width() - 1, static_cast<int>(std::floor((l.x + radius) / res)));
  const int r0 = std::max(0, static_cast<int>(std::floor((l.y - radius) / res)));
  const int r1 = std::min(g.height() - 1, static_cast<int>(std::floor((l.y + radius) / res)));
  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) {
      const CellIndex ci{c, r};
      if (distance(g.cell_center(ci), center) <= radius) out.push_back(ci);
    }
  }
  return out;
}

}  // namespace cisru::world
