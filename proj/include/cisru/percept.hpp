#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "cisru/geometry.hpp"
#include "cisru/grid_map.hpp"
#include "cisru/world.hpp"

namespace cisru::percept {

using world::Entity;
using world::EntityKind;
using world::Tick;
using world::World;

enum class DetClass { Astronaut, Rover, SolarPanel, Rock };

inline std::string_view to_string(DetClass c) {
  switch (c) {
    case DetClass::Astronaut: return "Astronaut";
    case DetClass::Rover: return "Rover";
    case DetClass::SolarPanel: return "SolarPanel";
    case DetClass::Rock: return "Rock";
  }
  return "?";
}

inline std::optional<DetClass> detection_class(EntityKind k) {
  switch (k) {
    case EntityKind::Astronaut: return DetClass::Astronaut;
    case EntityKind::Rover: return DetClass::Rover;
    case EntityKind::SolarPanelArray: return DetClass::SolarPanel;
    default: return std::nullopt;
  }
}

struct Detection {
  DetClass cls = DetClass::Rock;
  Vec2 world_pos;
  double confidence = 0.0;
  std::string source_sensor;
  std::string entity_id;  // oracle association, stands in for appearance matching
};

struct PerceptConfig {
  double fov = 2.0 * kPi;
  double range = 6.0;
  double d_int = 1.0;
  double gate = 2.0;
  Tick stale_window = 20;
  double inspect_range = 2.0;
};

/// Free line of sight from `from` until the disc (center, radius) is reached.
inline bool line_of_sight(const GridMap& terrain, Vec2 from, Vec2 center, double radius) {
  const double len = distance(from, center);
  const double reach = len - radius;
  if (reach <= 0.0) return true;
  const double step = terrain.resolution() / 2.0;
  const Vec2 dir = (center - from) / len;
  const auto own = terrain.try_world_to_cell(from);
  for (double s = step; s < reach; s += step) {
    const auto c = terrain.try_world_to_cell(from + dir * s);
    if (!c) return false;
    if (own && *c == *own) continue;
    if (terrain.at(*c) == CellState::Obstacle) return false;
  }
  return true;
}

/// Oracle detector: every entity of a detectable class whose footprint meets
/// the sensor cone inside `range` with a clear line of sight.
inline std::vector<Detection> detect(const World& w, const std::string& sensor_id, const Pose2D& sensor, double fov,
                                     double range) {
  std::vector<Detection> out;
  if (!(range > 0.0)) return out;
  for (const auto& e : w.entities()) {
    if (e.id == sensor_id) continue;
    const auto cls = detection_class(e.kind);
    if (!cls) continue;
    const Vec2 d = e.position() - sensor.position();
    const double center_dist = d.norm();
    const double boundary = std::max(0.0, center_dist - e.footprint_radius);
    if (boundary > range) continue;
    if (fov < 2.0 * kPi && center_dist > e.footprint_radius) {
      const double off = std::abs(normalize_angle(std::atan2(d.y, d.x) - sensor.theta));
      const double half_width = std::asin(std::min(1.0, e.footprint_radius / center_dist));
      if (off - half_width > fov / 2.0) continue;
    }
    if (!line_of_sight(w.terrain(), sensor.position(), e.position(), e.footprint_radius)) continue;
    out.push_back({*cls, e.position(), std::clamp(1.0 - boundary / range, 0.0, 1.0), sensor_id, e.id});
  }
  return out;
}

enum class TrackStatus { Live, Stale };

struct Track {
  std::string track_id;
  DetClass cls = DetClass::Rock;
  Vec2 last_pos;
  Tick last_seen_tick = 0;
  TrackStatus status = TrackStatus::Live;
  std::string entity_id;
};

struct TrackEvent {
  enum Kind { Opened, WentStale } kind;
  std::string track_id;
};

/// Global instance tracker; ids are "t<N>" and never reused.
class Tracker {
 public:
  const std::vector<Track>& tracks() const { return tracks_; }

  const Track* find(const std::string& id) const {
    for (const auto& t : tracks_) {
      if (t.track_id == id) return &t;
    }
    return nullptr;
  }

  /// Greedy nearest-neighbour assignment inside the gate, closest pairs first.
  std::vector<TrackEvent> update(const std::vector<Detection>& dets, Tick now, double gate, Tick stale_window) {
    std::vector<TrackEvent> events;
    for (auto& t : tracks_) {
      if (t.status == TrackStatus::Live && now > t.last_seen_tick && now - t.last_seen_tick > stale_window) {
        t.status = TrackStatus::Stale;
        events.push_back({TrackEvent::WentStale, t.track_id});
      }
    }
    struct Pair {
      double d;
      std::size_t t;
      std::size_t k;
    };
    std::vector<Pair> pairs;
    for (std::size_t t = 0; t < tracks_.size(); ++t) {
      if (tracks_[t].status != TrackStatus::Live) continue;
      for (std::size_t k = 0; k < dets.size(); ++k) {
        if (dets[k].cls != tracks_[t].cls) continue;
        const double d = distance(tracks_[t].last_pos, dets[k].world_pos);
        if (d <= gate) pairs.push_back({d, t, k});
      }
    }
    std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
      if (a.d != b.d) return a.d < b.d;
      if (a.t != b.t) return a.t < b.t;
      return a.k < b.k;
    });
    std::vector<char> track_used(tracks_.size(), 0);
    std::vector<char> det_used(dets.size(), 0);
    for (const auto& p : pairs) {
      if (track_used[p.t] || det_used[p.k]) continue;
      track_used[p.t] = det_used[p.k] = 1;
      auto& tr = tracks_[p.t];
      tr.last_pos = dets[p.k].world_pos;
      tr.last_seen_tick = now;
      tr.entity_id = dets[p.k].entity_id;
    }
    for (std::size_t k = 0; k < dets.size(); ++k) {
      if (det_used[k]) continue;
      Track t;
      t.track_id = "t" + std::to_string(++counter_);
      t.cls = dets[k].cls;
      t.last_pos = dets[k].world_pos;
      t.last_seen_tick = now;
      t.entity_id = dets[k].entity_id;
      tracks_.push_back(t);
      events.push_back({TrackEvent::Opened, t.track_id});
    }
    return events;
  }

 private:
  std::vector<Track> tracks_;
  std::uint64_t counter_ = 0;
};

/// Detections from several sensors describing the same entity collapse to the
/// most confident one, so one physical instance feeds one track.
inline std::vector<Detection> merge_detections(const std::vector<Detection>& all) {
  std::vector<Detection> out;
  for (const auto& d : all) {
    auto it = std::find_if(out.begin(), out.end(), [&](const Detection& o) { return o.entity_id == d.entity_id; });
    if (it == out.end()) {
      out.push_back(d);
    } else if (d.confidence > it->confidence) {
      *it = d;
    }
  }
  return out;
}

struct FallEvent {
  std::string track_id;
  std::string astronaut_id;
  Vec2 position;
  Tick tick = 0;
};

/// Live astronaut tracks seen this tick whose astronaut is down.
inline std::vector<FallEvent> detect_fall(const std::vector<Track>& tracks, const World& w, Tick now) {
  std::vector<FallEvent> out;
  for (const auto& t : tracks) {
    if (t.cls != DetClass::Astronaut || t.status != TrackStatus::Live || t.last_seen_tick != now) continue;
    const Entity* e = w.find(t.entity_id);
    if (!e || !e->posture || *e->posture != world::Posture::Fallen) continue;
    out.push_back({t.track_id, e->id, e->position(), now});
  }
  return out;
}

struct InteractionEvent {
  std::string astronaut_track;
  std::string astronaut_id;
  std::string asset_id;
  double distance = 0.0;
  Tick tick = 0;
};

/// Footprint-boundary distance between two entities.
inline double boundary_distance(const Entity& a, const Entity& b) {
  return std::max(0.0, distance(a.position(), b.position()) - a.footprint_radius - b.footprint_radius);
}

/// One event per (visible astronaut, panel or rover) pair with boundary
/// distance <= d_int.
inline std::vector<InteractionEvent> detect_interaction(const std::vector<Track>& tracks, const World& w, double d_int,
                                                        Tick now) {
  if (!(d_int > 0.0)) throw std::invalid_argument("d_int must be positive");
  std::vector<InteractionEvent> out;
  for (const auto& t : tracks) {
    if (t.cls != DetClass::Astronaut || t.status != TrackStatus::Live || t.last_seen_tick != now) continue;
    const Entity* a = w.find(t.entity_id);
    if (!a) continue;
    for (const auto& e : w.entities()) {
      if (e.kind != EntityKind::SolarPanelArray && e.kind != EntityKind::Rover) continue;
      const double d = boundary_distance(*a, e);
      if (d <= d_int) out.push_back({t.track_id, a->id, e.id, d, now});
    }
  }
  return out;
}

class OutOfInspectRange : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DefectReport {
  std::string panel_id;
  Vec2 local_point;
  Vec2 world_point;
  Tick tick = 0;
};

inline std::vector<DefectReport> inspect_panel(const Entity& panel, const Pose2D& rover_pose, double inspect_range,
                                               Tick now = 0) {
  const double d = std::max(0.0, distance(panel.position(), rover_pose.position()) - panel.footprint_radius);
  if (d > inspect_range) {
    throw OutOfInspectRange(panel.id + " is " + std::to_string(d) + " m away, inspect range " +
                            std::to_string(inspect_range) + " m");
  }
  std::vector<DefectReport> out;
  for (const auto& def : panel.defects) {
    if (!def.has_crack) continue;
    out.push_back({panel.id, def.local_point, panel.pose.transform(def.local_point), now});
  }
  return out;
}

inline std::optional<SemLabel> semantic_class(EntityKind k) {
  switch (k) {
    case EntityKind::Astronaut: return SemLabel::Astronaut;
    case EntityKind::Rover: return SemLabel::Rover;
    case EntityKind::SolarPanelArray: return SemLabel::SolarPanel;
    default: return std::nullopt;
  }
}

/// Footprint cells of visible entities get the entity's class; other known
/// cells fall back to Regolith (Free) or Rock (Obstacle).
inline void semantic_overlay(GridMap& known, const World& w, const std::set<std::string>& visible) {
  for (std::size_t i = 0; i < known.size(); ++i) {
    switch (known.at(i)) {
      case CellState::Free: known.set_label(i, SemLabel::Regolith); break;
      case CellState::Obstacle: known.set_label(i, SemLabel::Rock); break;
      case CellState::Unknown: break;
    }
  }
  for (const auto& e : w.entities()) {
    if (!visible.count(e.id)) continue;
    const auto label = semantic_class(e.kind);
    if (!label) continue;
    auto cells = world::cells_in_disc(known, e.position(), e.footprint_radius);
    if (auto c = known.try_world_to_cell(e.position())) cells.push_back(*c);
    for (const auto& c : cells) known.set_label(c, label);
  }
}

}  // namespace cisru::percept
