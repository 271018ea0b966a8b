#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cisru/geometry.hpp"
#include "cisru/rng.hpp"
#include "cisru/world.hpp"

namespace cisru::manip {

struct ManipConfig {
  Pose2D mount_offset{0.3, 0.0, 0.0};
  double l1 = 0.6;
  double l2 = 0.5;
  double scoop_range = 0.8;
  double localize_sigma = 0.01;
  double localize_range = 2.0;
  double approach_distance = 0.7;  // arm base to slot distance that counts as arrived
  double transfer_range = 2.0;     // leader to secondary distance for unloading
};

// ---------------------------------------------------------------------------
// Arm

struct Arm {
  Pose2D mount_offset{0.3, 0.0, 0.0};
  double l1 = 0.6;
  double l2 = 0.5;
  double q1 = 0.0;
  double q2 = 0.0;
  std::optional<std::string> holding;
};

inline Arm make_arm(const ManipConfig& c) { return Arm{c.mount_offset, c.l1, c.l2, 0.0, 0.0, std::nullopt}; }

inline Pose2D arm_base(const Arm& arm, const Pose2D& rover) {
  const Vec2 p = rover.transform(arm.mount_offset.position());
  return {p.x, p.y, normalize_angle(rover.theta + arm.mount_offset.theta)};
}

struct Reach {
  bool reachable = false;
  double q1 = 0.0;
  double q2 = 0.0;
  double distance = 0.0;
};

/// Planar 2-link analytic IK (elbow angle from the law of cosines).
inline Reach check_reach(const Arm& arm, const Pose2D& rover, Vec2 target) {
  const Pose2D base = arm_base(arm, rover);
  const Vec2 d = target - base.position();
  Reach r;
  r.distance = d.norm();
  const double eps = 1e-9;
  if (r.distance < std::abs(arm.l1 - arm.l2) - eps || r.distance > arm.l1 + arm.l2 + eps) return r;
  const double c2 = (r.distance * r.distance - arm.l1 * arm.l1 - arm.l2 * arm.l2) / (2.0 * arm.l1 * arm.l2);
  r.reachable = true;
  r.q2 = std::acos(std::clamp(c2, -1.0, 1.0));
  r.q1 = normalize_angle(std::atan2(d.y, d.x) - base.theta -
                         std::atan2(arm.l2 * std::sin(r.q2), arm.l1 + arm.l2 * std::cos(r.q2)));
  return r;
}

// ---------------------------------------------------------------------------
// Tools and storage

enum class ToolKind { Shovel, Brush };

inline std::string_view to_string(ToolKind k) { return k == ToolKind::Shovel ? "Shovel" : "Brush"; }

struct Tool {
  std::string tool_id;
  ToolKind kind = ToolKind::Shovel;
  bool on_arm = false;
  std::string slot_id;  // home slot; the current location when !on_arm
};

class ToolInventory {
 public:
  void add(Tool t) {
    if (find(t.tool_id)) throw std::invalid_argument("duplicate tool '" + t.tool_id + "'");
    tools_.push_back(std::move(t));
  }
  Tool* find(const std::string& id) {
    for (auto& t : tools_) {
      if (t.tool_id == id) return &t;
    }
    return nullptr;
  }
  const Tool* find(const std::string& id) const { return const_cast<ToolInventory*>(this)->find(id); }
  const Tool* in_slot(const std::string& slot_id) const {
    for (const auto& t : tools_) {
      if (!t.on_arm && t.slot_id == slot_id) return &t;
    }
    return nullptr;
  }
  const std::vector<Tool>& tools() const { return tools_; }

 private:
  std::vector<Tool> tools_;
};

struct StorageState {
  std::vector<std::optional<std::string>> slots;

  bool full() const {
    return std::all_of(slots.begin(), slots.end(), [](const auto& s) { return s.has_value(); });
  }
  bool contains(const std::string& sample) const {
    return std::any_of(slots.begin(), slots.end(), [&](const auto& s) { return s && *s == sample; });
  }
  std::optional<std::size_t> first_empty() const {
    for (std::size_t i = 0; i < slots.size(); ++i) {
      if (!slots[i]) return i;
    }
    return std::nullopt;
  }
  void clear() {
    for (auto& s : slots) s.reset();
  }
};

class SlotNotVisible : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Slot pose seen from the arm base, with zero-mean Gaussian position noise.
inline Pose2D localize_tool(const world::World& w, const Pose2D& arm_base_pose, const std::string& slot_id,
                            double range, double sigma, Rng& rng) {
  const world::Entity* slot = w.find(slot_id);
  if (!slot || slot->kind != world::EntityKind::ToolSlot) throw SlotNotVisible("no tool slot '" + slot_id + "'");
  if (distance(slot->position(), arm_base_pose.position()) > range) {
    throw SlotNotVisible("tool slot '" + slot_id + "' out of sensor range");
  }
  Pose2D est = slot->pose;
  if (sigma > 0.0) {
    est.x += rng.normal(0.0, sigma);
    est.y += rng.normal(0.0, sigma);
  }
  return est;
}

// ---------------------------------------------------------------------------
// Tool changer state machine

enum class TcState { Stowed, Approach, Localize, Reach, Latch, Mounted, Unlatch, Retreat, Fault };

inline constexpr TcState kAllTcStates[] = {TcState::Stowed, TcState::Approach, TcState::Localize,
                                           TcState::Reach,  TcState::Latch,    TcState::Mounted,
                                           TcState::Unlatch, TcState::Retreat, TcState::Fault};

inline std::string_view to_string(TcState s) {
  switch (s) {
    case TcState::Stowed: return "Stowed";
    case TcState::Approach: return "Approach";
    case TcState::Localize: return "Localize";
    case TcState::Reach: return "Reach";
    case TcState::Latch: return "Latch";
    case TcState::Mounted: return "Mounted";
    case TcState::Unlatch: return "Unlatch";
    case TcState::Retreat: return "Retreat";
    case TcState::Fault: return "Fault";
  }
  return "?";
}

enum class TcEvent {
  MountRequested,
  ArrivedAtSlot,
  PoseEstimated,
  SlotNotVisible,
  ReachOk,
  Unreachable,
  Latched,
  DismountRequested,
  Unlatched,
  Retreated,
  Reset
};

inline constexpr TcEvent kAllTcEvents[] = {
    TcEvent::MountRequested, TcEvent::ArrivedAtSlot,     TcEvent::PoseEstimated, TcEvent::SlotNotVisible,
    TcEvent::ReachOk,        TcEvent::Unreachable,       TcEvent::Latched,       TcEvent::DismountRequested,
    TcEvent::Unlatched,      TcEvent::Retreated,         TcEvent::Reset};

inline std::string_view to_string(TcEvent e) {
  switch (e) {
    case TcEvent::MountRequested: return "MountRequested";
    case TcEvent::ArrivedAtSlot: return "ArrivedAtSlot";
    case TcEvent::PoseEstimated: return "PoseEstimated";
    case TcEvent::SlotNotVisible: return "SlotNotVisible";
    case TcEvent::ReachOk: return "ReachOk";
    case TcEvent::Unreachable: return "Unreachable";
    case TcEvent::Latched: return "Latched";
    case TcEvent::DismountRequested: return "DismountRequested";
    case TcEvent::Unlatched: return "Unlatched";
    case TcEvent::Retreated: return "Retreated";
    case TcEvent::Reset: return "Reset";
  }
  return "?";
}

struct ToolChangerFsm {
  TcState state = TcState::Stowed;
  std::string fault_reason;
  std::string tool_id;
  std::string slot_id;
};

/// Raised towards the cooperative layer.
struct Notice {
  std::string code;
  std::string detail;
};

/// Total transition function. The tool's location flips to the arm when the
/// latch closes (Latch -> Mounted) and back to its slot when it opens
/// (Unlatch -> Retreat). Events that make no sense in a state fault the FSM.
inline std::optional<Notice> tc_step(ToolChangerFsm& fsm, TcEvent ev, Arm& arm, ToolInventory& inv,
                                     const std::string& tool_id = {}, const std::string& slot_id = {}) {
  auto fault = [&](std::string reason) -> std::optional<Notice> {
    fsm.state = TcState::Fault;
    fsm.fault_reason = std::move(reason);
    if (fsm.fault_reason == "Unreachable") return Notice{"ToolUnreachable", fsm.tool_id};
    return std::nullopt;
  };
  if (ev == TcEvent::Reset) {
    fsm.state = arm.holding ? TcState::Mounted : TcState::Stowed;
    fsm.fault_reason.clear();
    return std::nullopt;
  }
  switch (fsm.state) {
    case TcState::Stowed:
      if (ev != TcEvent::MountRequested) return fault("UnexpectedEvent");
      {
        const Tool* t = inv.find(tool_id);
        if (!t || t->on_arm || (!slot_id.empty() && t->slot_id != slot_id)) return fault("ToolNotInSlot");
        fsm.tool_id = tool_id;
        fsm.slot_id = t->slot_id;
      }
      fsm.state = TcState::Approach;
      return std::nullopt;
    case TcState::Approach:
      if (ev != TcEvent::ArrivedAtSlot) return fault("UnexpectedEvent");
      fsm.state = TcState::Localize;
      return std::nullopt;
    case TcState::Localize:
      if (ev == TcEvent::SlotNotVisible) return fault("SlotNotVisible");
      if (ev != TcEvent::PoseEstimated) return fault("UnexpectedEvent");
      fsm.state = TcState::Reach;
      return std::nullopt;
    case TcState::Reach:
      if (ev == TcEvent::Unreachable) return fault("Unreachable");
      if (ev != TcEvent::ReachOk) return fault("UnexpectedEvent");
      fsm.state = TcState::Latch;
      return std::nullopt;
    case TcState::Latch:
      if (ev != TcEvent::Latched) return fault("UnexpectedEvent");
      if (Tool* t = inv.find(fsm.tool_id)) t->on_arm = true;
      arm.holding = fsm.tool_id;
      fsm.state = TcState::Mounted;
      return std::nullopt;
    case TcState::Mounted:
      if (ev == TcEvent::MountRequested) return fault("ToolAlreadyMounted");
      if (ev != TcEvent::DismountRequested) return fault("UnexpectedEvent");
      fsm.state = TcState::Unlatch;
      return std::nullopt;
    case TcState::Unlatch:
      if (ev != TcEvent::Unlatched) return fault("UnexpectedEvent");
      if (Tool* t = inv.find(fsm.tool_id)) t->on_arm = false;
      arm.holding.reset();
      fsm.state = TcState::Retreat;
      return std::nullopt;
    case TcState::Retreat:
      if (ev != TcEvent::Retreated) return fault("UnexpectedEvent");
      fsm.state = TcState::Stowed;
      return std::nullopt;
    case TcState::Fault:
      return std::nullopt;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Sample collection state machine

enum class ScState { VerifyTool, Scoop, Transfer, Unload, Done, Fault };

inline constexpr ScState kAllScStates[] = {ScState::VerifyTool, ScState::Scoop, ScState::Transfer,
                                           ScState::Unload,     ScState::Done,  ScState::Fault};

inline std::string_view to_string(ScState s) {
  switch (s) {
    case ScState::VerifyTool: return "VerifyTool";
    case ScState::Scoop: return "Scoop";
    case ScState::Transfer: return "Transfer";
    case ScState::Unload: return "Unload";
    case ScState::Done: return "Done";
    case ScState::Fault: return "Fault";
  }
  return "?";
}

struct SampleCollectionFsm {
  ScState state = ScState::VerifyTool;
  std::string fault_reason;
  std::string sample_id;
  bool verified = false;
  std::optional<std::size_t> stored_slot;
};

struct ScContext {
  std::optional<ToolKind> held_tool;
  double distance_to_sample = 0.0;
  double scoop_range = 0.8;
  bool storage_in_reach = false;
  StorageState* storage = nullptr;
};

inline void sc_step(SampleCollectionFsm& fsm, const ScContext& ctx) {
  auto fault = [&](const char* reason) {
    fsm.state = ScState::Fault;
    fsm.fault_reason = reason;
  };
  switch (fsm.state) {
    case ScState::VerifyTool:
      if (ctx.held_tool && *ctx.held_tool == ToolKind::Shovel) {
        fsm.verified = true;
        fsm.state = ScState::Scoop;
      } else {
        fault("ToolNotAssembled");
      }
      return;
    case ScState::Scoop:
      if (!fsm.verified) return fault("ToolNotAssembled");
      if (ctx.distance_to_sample <= ctx.scoop_range) {
        fsm.state = ScState::Transfer;
      } else {
        fault("OutOfScoopRange");
      }
      return;
    case ScState::Transfer:
      if (ctx.storage_in_reach) fsm.state = ScState::Unload;
      return;
    case ScState::Unload: {
      if (!ctx.storage) return fault("StorageFull");
      if (ctx.storage->contains(fsm.sample_id)) return fault("DuplicateSample");
      const auto slot = ctx.storage->first_empty();
      if (!slot) return fault("StorageFull");
      ctx.storage->slots[*slot] = fsm.sample_id;
      fsm.stored_slot = slot;
      fsm.state = ScState::Done;
      return;
    }
    case ScState::Done:
    case ScState::Fault:
      return;
  }
}

}  // namespace cisru::manip
