#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "cisru/executive.hpp"
#include "cisru/fusion.hpp"
#include "cisru/grid_io.hpp"
#include "cisru/netsim.hpp"

namespace cisru {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct SimConfig {
  world::WorldConfig world;
  nav::NavConfig nav;
  percept::PerceptConfig percept;
  manip::ManipConfig manip;
  supervise::SuperviseConfig supervise;
  executive::ExecConfig exec;
  fusion::FusionConfig fusion;
  world::Tick fusion_interval = 10;
  world::Tick retransmit_period = 5;
  netsim::ChannelParams net;

  /// Keeps the copies of shared constants (dt, speed limits) consistent.
  void sync() {
    nav.dt = world.dt;
    nav.v_max = world.v_max;
    nav.omega_max = world.omega_max;
    supervise.dt = world.dt;
  }
};

namespace detail {

using FieldRef = std::variant<double*, int*, std::uint64_t*>;  // Tick is std::uint64_t

struct Field {
  const char* name;
  FieldRef ref;
};

struct Section {
  const char* name;  // empty for top-level keys
  std::vector<Field> fields;
};

inline std::vector<Section> config_sections(SimConfig& c) {
  return {
      {"",
       {{"dt", &c.world.dt},
        {"v_max", &c.world.v_max},
        {"omega_max", &c.world.omega_max},
        {"fusion_interval", &c.fusion_interval},
        {"retransmit_period", &c.retransmit_period},
        {"latency_ticks", &c.net.latency_ticks},
        {"drop_probability", &c.net.drop_probability}}},
      {"nav",
       {{"w_max", &c.nav.w_max},
        {"unknown_speed", &c.nav.unknown_speed},
        {"goal_tolerance", &c.nav.goal_tolerance},
        {"step_budget", &c.nav.step_budget},
        {"lookahead", &c.nav.lookahead},
        {"heading_gain", &c.nav.heading_gain}}},
      {"percept",
       {{"fov", &c.percept.fov},
        {"range", &c.percept.range},
        {"d_int", &c.percept.d_int},
        {"gate", &c.percept.gate},
        {"stale_window", &c.percept.stale_window},
        {"inspect_range", &c.percept.inspect_range}}},
      {"manip",
       {{"l1", &c.manip.l1},
        {"l2", &c.manip.l2},
        {"scoop_range", &c.manip.scoop_range},
        {"localize_sigma", &c.manip.localize_sigma},
        {"localize_range", &c.manip.localize_range},
        {"approach_distance", &c.manip.approach_distance},
        {"transfer_range", &c.manip.transfer_range}}},
      {"supervise", {{"t_ack", &c.supervise.t_ack}, {"debounce", &c.supervise.debounce}}},
      {"exec",
       {{"theta", &c.exec.theta},
        {"max_retries", &c.exec.max_retries},
        {"lane_spacing", &c.exec.lane_spacing},
        {"standoff", &c.exec.standoff},
        {"rendezvous_radius", &c.exec.rendezvous_radius},
        {"base_radius", &c.exec.base_radius},
        {"stuck_ticks", &c.exec.stuck_ticks}}},
      {"fusion",
       {{"harris_k", &c.fusion.harris_k},
        {"rel_threshold", &c.fusion.rel_threshold},
        {"ratio", &c.fusion.ratio},
        {"iterations", &c.fusion.iterations},
        {"inlier_radius_cells", &c.fusion.inlier_radius_cells},
        {"orientation_tolerance", &c.fusion.orientation_tolerance},
        {"min_inliers", &c.fusion.min_inliers},
        {"seed", &c.fusion.seed}}},
  };
}

inline void set_field(const Field& f, const Json& v, const std::string& path) {
  if (!v.is_number()) throw ConfigError("config field '" + path + "' must be a number");
  std::visit(
      [&](auto* p) {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, double>) {
          *p = v.get<double>();
        } else {
          if (!v.is_number_integer() || v.get<long long>() < 0) {
            throw ConfigError("config field '" + path + "' must be a non-negative integer");
          }
          *p = v.get<T>();
        }
      },
      f.ref);
}

inline Json get_field(const Field& f) {
  return std::visit([](auto* p) { return Json(*p); }, f.ref);
}

}  // namespace detail

/// Applies a (possibly nested) override document. Unknown keys are errors so
/// typos never pass silently.
inline void apply_config(SimConfig& c, const Json& j) {
  if (j.is_null()) return;
  if (!j.is_object()) throw ConfigError("config must be an object");
  auto sections = detail::config_sections(c);
  auto find = [](detail::Section& s, const std::string& key) -> const detail::Field* {
    for (const auto& f : s.fields) {
      if (key == f.name) return &f;
    }
    return nullptr;
  };
  for (const auto& [key, value] : j.items()) {
    if (const auto* f = find(sections.front(), key)) {
      detail::set_field(*f, value, key);
      continue;
    }
    if (key == "manip" && value.is_object() && value.contains("mount_offset")) {
      const auto& o = value.at("mount_offset");
      if (!o.is_array() || o.size() != 3) throw ConfigError("config field 'manip.mount_offset' must be [x, y, theta]");
      c.manip.mount_offset = {o.at(0).get<double>(), o.at(1).get<double>(), o.at(2).get<double>()};
    }
    bool matched = false;
    for (auto& s : sections) {
      if (key != s.name || !*s.name) continue;
      matched = true;
      if (!value.is_object()) throw ConfigError("config section '" + key + "' must be an object");
      for (const auto& [sub, v] : value.items()) {
        if (key == "manip" && sub == "mount_offset") continue;
        const auto* f = find(s, sub);
        if (!f) throw ConfigError("unknown config field '" + key + "." + sub + "'");
        detail::set_field(*f, v, key + "." + sub);
      }
    }
    if (!matched) throw ConfigError("unknown config field '" + key + "'");
  }
  if (!(c.world.dt > 0.0)) throw ConfigError("config field 'dt' must be positive");
  if (!(c.nav.w_max > 0.0)) throw ConfigError("config field 'nav.w_max' must be positive");
  if (c.net.drop_probability < 0.0 || c.net.drop_probability > 1.0) {
    throw ConfigError("config field 'drop_probability' must lie in [0, 1]");
  }
  c.sync();
}

/// Effective configuration, in the same shape apply_config accepts.
inline Json config_to_json(SimConfig c) {
  Json out = Json::object();
  for (auto& s : detail::config_sections(c)) {
    Json& dst = *s.name ? out[s.name] : out;
    for (const auto& f : s.fields) dst[f.name] = detail::get_field(f);
  }
  out["manip"]["mount_offset"] = Json::array({c.manip.mount_offset.x, c.manip.mount_offset.y,
                                              c.manip.mount_offset.theta});
  return out;
}

}  // namespace cisru
