#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cisru/manip.hpp"
#include "cisru/mas.hpp"
#include "cisru/nav.hpp"
#include "cisru/percept.hpp"
#include "cisru/supervise.hpp"
#include "cisru/world.hpp"

namespace cisru::executive {

using mas::Goal;
using mas::GoalStatus;
using mas::Json;
using mas::MasMessage;
using mas::MessageKind;
using world::Tick;

enum class Role { Leader, Secondary };

inline std::string_view to_string(Role r) { return r == Role::Leader ? "Leader" : "Secondary"; }

inline std::optional<Role> role_from_string(std::string_view s) {
  if (s == "Leader") return Role::Leader;
  if (s == "Secondary") return Role::Secondary;
  return std::nullopt;
}

struct ExecConfig {
  double theta = 0.7;
  int max_retries = 3;
  double lane_spacing = 6.0;
  double standoff = 1.0;  // beyond a panel's footprint
  double rendezvous_radius = 1.5;
  double base_radius = 1.5;
  Tick stuck_ticks = 20;
};

enum class TaskKind {
  NavigateTo,
  SweepArea,
  InspectPanel,
  AnalyzePoint,
  RequestSecondary,
  RendezvousAwait,
  MountTool,
  CollectSample,
  StoreToSlot,
  ReturnToBase,
  AwaitStorageEmptied,
  Supervise
};

inline std::string_view to_string(TaskKind k) {
  switch (k) {
    case TaskKind::NavigateTo: return "NavigateTo";
    case TaskKind::SweepArea: return "SweepArea";
    case TaskKind::InspectPanel: return "InspectPanel";
    case TaskKind::AnalyzePoint: return "AnalyzePoint";
    case TaskKind::RequestSecondary: return "RequestSecondary";
    case TaskKind::RendezvousAwait: return "RendezvousAwait";
    case TaskKind::MountTool: return "MountTool";
    case TaskKind::CollectSample: return "CollectSample";
    case TaskKind::StoreToSlot: return "StoreToSlot";
    case TaskKind::ReturnToBase: return "ReturnToBase";
    case TaskKind::AwaitStorageEmptied: return "AwaitStorageEmptied";
    case TaskKind::Supervise: return "Supervise";
  }
  return "?";
}

enum class TaskStatus { Waiting, Active, Done, Failed };

inline std::string_view to_string(TaskStatus s) {
  switch (s) {
    case TaskStatus::Waiting: return "Waiting";
    case TaskStatus::Active: return "Active";
    case TaskStatus::Done: return "Done";
    case TaskStatus::Failed: return "Failed";
  }
  return "?";
}

struct Task {
  TaskKind kind = TaskKind::NavigateTo;
  TaskStatus status = TaskStatus::Waiting;
  int attempts = 0;
  std::string ref;  // panel, sample, tool or base id
  Vec2 target{};
  double tolerance = 0.0;
  std::vector<Vec2> waypoints;
  std::size_t next = 0;
};

inline Task make_task(TaskKind k, std::string ref = {}, Vec2 target = {}, double tolerance = 0.0) {
  Task t;
  t.kind = k;
  t.ref = std::move(ref);
  t.target = target;
  t.tolerance = tolerance;
  return t;
}

inline Json task_to_json(const Task& t) {
  Json j;
  j["kind"] = to_string(t.kind);
  if (!t.ref.empty()) j["ref"] = t.ref;
  if (t.kind == TaskKind::NavigateTo || t.kind == TaskKind::ReturnToBase) j["target"] = mas::vec_json(t.target);
  if (t.kind == TaskKind::SweepArea) j["waypoints"] = t.waypoints.size();
  return j;
}

struct Plan {
  std::string plan_id;
  std::string root_goal_id;
  std::vector<Task> tasks;
  std::optional<Task> background;
  std::size_t current = 0;

  Task* active() { return current < tasks.size() ? &tasks[current] : nullptr; }
};

class DecomposeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class UnknownGoalKind : public DecomposeError {
 public:
  using DecomposeError::DecomposeError;
};

class RoleMismatch : public DecomposeError {
 public:
  using DecomposeError::DecomposeError;
};

/// Lanes parallel to x at `spacing`, alternating direction.
inline std::vector<Vec2> boustrophedon(const mas::Rect& area, double spacing) {
  if (!(spacing > 0.0)) throw std::invalid_argument("lane spacing must be positive");
  const double x0 = std::min(area.x0, area.x1), x1 = std::max(area.x0, area.x1);
  const double y0 = std::min(area.y0, area.y1), y1 = std::max(area.y0, area.y1);
  std::vector<Vec2> out;
  bool forward = true;
  for (double y = y0 + std::min(spacing / 2.0, (y1 - y0) / 2.0); y <= y1 + 1e-9; y += spacing) {
    out.push_back({forward ? x0 : x1, y});
    out.push_back({forward ? x1 : x0, y});
    forward = !forward;
  }
  return out;
}

/// Point `standoff` beyond the panel's footprint, facing `from`; rotated in
/// 45 degree steps until it lands on a free terrain cell.
inline Vec2 panel_standoff(const world::World& w, const world::Entity& panel, Vec2 from, double standoff) {
  const double r = panel.footprint_radius + standoff;
  Vec2 d = from - panel.position();
  double base = d.norm() > 1e-9 ? std::atan2(d.y, d.x) : 0.0;
  for (int k = 0; k < 8; ++k) {
    const double a = base + (k % 2 == 0 ? 1 : -1) * ((k + 1) / 2) * (kPi / 4.0);
    const Vec2 p = panel.position() + Vec2{std::cos(a), std::sin(a)} * r;
    if (!w.blocked(p)) return p;
  }
  throw DecomposeError("no free standoff point around " + panel.id);
}

inline const world::Entity& require_entity(const world::World& w, const std::string& id, world::EntityKind kind) {
  const world::Entity* e = w.find(id);
  if (!e || e->kind != kind) {
    throw DecomposeError("unknown " + std::string(world::to_string(kind)) + " '" + id + "'");
  }
  return *e;
}

inline const world::Entity& base_station(const world::World& w, const std::string& id) {
  if (!id.empty()) return require_entity(w, id, world::EntityKind::BaseStation);
  auto bases = w.of_kind(world::EntityKind::BaseStation);
  if (bases.empty()) throw DecomposeError("scenario has no BaseStation");
  return *bases.front();
}

inline Plan decompose(const Goal& goal, Role role, const world::World& w, const Pose2D& self, const ExecConfig& cfg,
                      const nav::NavConfig& nav_cfg) {
  Plan plan;
  plan.root_goal_id = goal.goal_id;
  auto leader_only = [&] {
    if (role != Role::Leader) {
      throw RoleMismatch(std::string(mas::to_string(goal.kind())) + " is not executable by a Secondary");
    }
  };
  const double tol = nav_cfg.goal_tolerance;
  switch (goal.kind()) {
    case mas::GoalKind::InspectPanels: {
      leader_only();
      const auto& p = std::get<mas::InspectPanelsParams>(goal.params);
      Vec2 from = self.position();
      for (const auto& pt : p.points) {
        const auto& panel = require_entity(w, pt.panel_id, world::EntityKind::SolarPanelArray);
        const Vec2 at = pt.at ? *pt.at : panel_standoff(w, panel, from, cfg.standoff);
        plan.tasks.push_back(make_task(TaskKind::NavigateTo, panel.id, at, tol));
        plan.tasks.push_back(make_task(TaskKind::InspectPanel, panel.id));
        from = at;
      }
      plan.background = make_task(TaskKind::Supervise);
      return plan;
    }
    case mas::GoalKind::MapAndSample: {
      leader_only();
      const auto& p = std::get<mas::MapAndSampleParams>(goal.params);
      const auto lanes = boustrophedon(p.area, cfg.lane_spacing);
      struct Stop {
        std::size_t after;
        std::size_t order;
        const world::Entity* sample;
      };
      std::vector<Stop> stops;
      for (std::size_t i = 0; i < p.sample_points.size(); ++i) {
        const auto& s = require_entity(w, p.sample_points[i], world::EntityKind::SamplePoint);
        std::size_t best = 0;
        for (std::size_t k = 1; k < lanes.size(); ++k) {
          if (distance(lanes[k], s.position()) < distance(lanes[best], s.position())) best = k;
        }
        stops.push_back({best, i, &s});
      }
      std::stable_sort(stops.begin(), stops.end(), [](const Stop& a, const Stop& b) { return a.after < b.after; });
      std::size_t from = 0;
      auto sweep = [&](std::size_t upto) {
        if (upto <= from) return;
        Task t = make_task(TaskKind::SweepArea);
        t.waypoints.assign(lanes.begin() + static_cast<std::ptrdiff_t>(from),
                           lanes.begin() + static_cast<std::ptrdiff_t>(upto));
        plan.tasks.push_back(std::move(t));
        from = upto;
      };
      for (const auto& s : stops) {
        sweep(s.after + 1);
        plan.tasks.push_back(make_task(TaskKind::NavigateTo, s.sample->id, s.sample->position(), tol));
        plan.tasks.push_back(make_task(TaskKind::AnalyzePoint, s.sample->id));
      }
      sweep(lanes.size());
      return plan;
    }
    case mas::GoalKind::StoreSample: {
      if (role != Role::Secondary) throw RoleMismatch("StoreSample is not executable by a Leader");
      const auto& p = std::get<mas::StoreSampleParams>(goal.params);
      plan.tasks.push_back(make_task(TaskKind::NavigateTo, "rendezvous", p.rendezvous, cfg.rendezvous_radius));
      plan.tasks.push_back(make_task(TaskKind::RendezvousAwait, p.sample_id));
      return plan;
    }
    case mas::GoalKind::ReturnToBase: {
      const auto& base = base_station(w, std::get<mas::ReturnToBaseParams>(goal.params).base_id);
      plan.tasks.push_back(make_task(TaskKind::NavigateTo, base.id, base.position(), cfg.base_radius));
      plan.tasks.push_back(make_task(TaskKind::AwaitStorageEmptied, base.id));
      return plan;
    }
    case mas::GoalKind::NavigateTo:
      plan.tasks.push_back(
          make_task(TaskKind::NavigateTo, {}, std::get<mas::NavigateToParams>(goal.params).target, tol));
      return plan;
    case mas::GoalKind::CollectSample: {
      leader_only();
      const auto& s = require_entity(w, std::get<mas::CollectSampleParams>(goal.params).sample_id,
                                     world::EntityKind::SamplePoint);
      plan.tasks.push_back(make_task(TaskKind::NavigateTo, s.id, s.position(), tol));
      plan.tasks.push_back(make_task(TaskKind::CollectSample, s.id));
      return plan;
    }
    case mas::GoalKind::Supervise:
      plan.background = make_task(TaskKind::Supervise);
      return plan;
  }
  throw UnknownGoalKind("unknown goal kind");
}

enum class AfterStore { ContinueMapping, ReturnToBase };

inline std::string_view to_string(AfterStore a) {
  return a == AfterStore::ContinueMapping ? "ContinueMapping" : "ReturnToBase";
}

inline AfterStore decide_after_store(const manip::StorageState& storage) {
  return storage.full() ? AfterStore::ReturnToBase : AfterStore::ContinueMapping;
}

// ---------------------------------------------------------------------------
// Agent

struct LogItem {
  std::string type;
  Json payload;
};

struct TickOutput {
  world::VelocityCommand cmd;
  std::vector<MasMessage> messages;
  std::vector<LogItem> log;
  std::vector<supervise::ErrorReport> errors;

  void append(TickOutput&& o) {
    for (auto& m : o.messages) messages.push_back(std::move(m));
    for (auto& l : o.log) log.push_back(std::move(l));
    for (auto& e : o.errors) errors.push_back(std::move(e));
  }
};

struct AgentContext {
  const world::World& world;
  Tick now = 0;
  manip::ToolInventory* tools = nullptr;
  manip::StorageState* partner_storage = nullptr;
  Rng* rng = nullptr;
  std::function<std::string()> next_goal_id;
};

struct AgentConfig {
  ExecConfig exec;
  nav::NavConfig nav;
  manip::ManipConfig manip;
  double inspect_range = 2.0;
};

class Executive {
 public:
  Executive(std::string id, Role role, mas::AutonomyLevel level, GridMap known, AgentConfig cfg,
            std::size_t storage_slots = 0)
      : id_(std::move(id)), role_(role), level_(level), cfg_(cfg), known_(std::move(known)),
        arm_(manip::make_arm(cfg.manip)) {
    storage_.slots.resize(storage_slots);
  }

  const std::string& id() const { return id_; }
  Role role() const { return role_; }
  mas::AutonomyLevel level() const { return level_; }
  void set_level(mas::AutonomyLevel l) { level_ = l; }
  void set_partner(std::string p) {
    partner_ = std::move(p);
    partner_available_ = true;
  }
  const std::string& partner() const { return partner_; }

  const GridMap& known_map() const { return known_; }
  GridMap& known_map() { return known_; }
  manip::StorageState& storage() { return storage_; }
  const manip::StorageState& storage() const { return storage_; }
  const manip::Arm& arm() const { return arm_; }
  const manip::ToolChangerFsm& tool_changer() const { return tc_; }
  const std::vector<Goal>& goals() const { return goals_; }
  const Goal* goal(const std::string& id) const {
    for (const auto& g : goals_) {
      if (g.goal_id == id) return &g;
    }
    return nullptr;
  }
  const std::optional<Plan>& plan() const { return plan_; }
  bool emergency() const { return emergency_; }
  std::size_t replans() const { return replans_; }

  /// Merges revealed ground truth into the known map; returns how many cells changed.
  std::size_t reveal(const std::vector<world::RevealedCell>& cells) {
    std::size_t changed = 0;
    for (const auto& c : cells) {
      if (known_.at(c.index) == c.state) continue;
      known_.set(c.index, c.state);
      ++changed;
    }
    return changed;
  }

  bool idle() const { return !plan_ && queue_.empty(); }

  /// Every inbound message passes the autonomy gate here first.
  TickOutput deliver(const MasMessage& m, AgentContext& ctx) {
    TickOutput out;
    const auto gate = mas::gate_message(level_, m);
    if (!gate.accepted) {
      out.log.push_back({"GateRejected",
                         {{"msg_id", m.msg_id}, {"kind", mas::to_string(m.kind)}, {"level", mas::to_string(level_)},
                          {"reason", mas::to_string(*gate.reason)}}});
      if (m.kind == MessageKind::GoalRequest) reject_goal(m, "AutonomyLevelMismatch", ctx, out);
      return out;
    }
    if (gate.bypassed) {
      out.log.push_back({"GateBypass", {{"msg_id", m.msg_id}, {"kind", mas::to_string(m.kind)}}});
    }
    switch (m.kind) {
      case MessageKind::GoalRequest: accept_goal(m, ctx, out); break;
      case MessageKind::Telecommand: {
        const Json& p = m.payload;
        telecommand_ = world::VelocityCommand{p.value("v", 0.0), p.value("omega", 0.0)};
        telecommand_until_ = ctx.now + p.value("duration", Tick{1});
        out.log.push_back({"TelecommandApplied", p});
        break;
      }
      case MessageKind::GoalStatus:
        if (m.goal_id && child_goal_ && *m.goal_id == *child_goal_) {
          child_status_ = m.payload.value("status", std::string{});
        }
        break;
      case MessageKind::Observation: {
        const std::string ev = m.payload.value("event", std::string{});
        if (m.sender == partner_ && ev == "StorageFull") partner_available_ = false;
        if (m.sender == partner_ && ev == "StorageEmptied") partner_available_ = true;
        break;
      }
      default: break;
    }
    return out;
  }

  void set_emergency(bool on, TickOutput& out) {
    if (on == emergency_) return;
    emergency_ = on;
    out.log.push_back({on ? "EmergencyHalt" : "EmergencyCleared", Json::object()});
  }

  /// Completes AwaitStorageEmptied. Returns an error code when the agent is
  /// not waiting at the base.
  std::optional<std::string> confirm_storage_emptied(AgentContext& ctx, TickOutput& out) {
    Task* t = plan_ ? plan_->active() : nullptr;
    if (!t || t->kind != TaskKind::AwaitStorageEmptied || storage_confirmed_) return "NotAwaitingStorage";
    storage_.clear();
    storage_confirmed_ = true;
    out.log.push_back({"StorageEmptied", {{"slots", storage_.slots.size()}}});
    if (!partner_.empty()) {
      out.messages.push_back(observation(partner_, {{"event", "StorageEmptied"}}, ctx.now));
    }
    return std::nullopt;
  }

  TickOutput tick(AgentContext& ctx) {
    TickOutput out;
    if (emergency_) return out;
    if (telecommand_ && ctx.now < telecommand_until_) {
      out.cmd = *telecommand_;
      return out;
    }
    telecommand_.reset();
    if (!plan_) start_next(ctx, out);
    // Several instantaneous tasks may complete in one tick; motion ends the tick.
    for (int guard = 0; plan_ && guard < 16; ++guard) {
      Task* t = plan_->active();
      if (!t) {
        finish_goal(GoalStatus::Achieved, std::nullopt, ctx, out);
        break;
      }
      if (t->status == TaskStatus::Waiting) {
        t->status = TaskStatus::Active;
        out.log.push_back({"TaskStarted", task_log(*t)});
      }
      const Step s = step(*t, ctx, out);
      if (s.kind == Step::Running) break;
      // Steps may insert tasks; refetch after the vector may have grown.
      t = plan_->active();
      if (s.kind == Step::Done) {
        t->status = TaskStatus::Done;
        out.log.push_back({"TaskDone", task_log(*t)});
        reset_motion();
        ++plan_->current;
        continue;
      }
      t->status = TaskStatus::Failed;
      out.log.push_back({"TaskFailed", [&] {
                           Json j = task_log(*t);
                           j["reason"] = s.reason;
                           return j;
                         }()});
      out.errors.push_back({id_, s.reason, "error", false, std::string(to_string(t->kind))});
      out.cmd = {};
      finish_goal(GoalStatus::Failed, s.reason, ctx, out);
      break;
    }
    return out;
  }

 private:
  struct Step {
    enum Kind { Running, Done, Failed } kind = Running;
    std::string reason;
    static Step running() { return {Running, {}}; }
    static Step done() { return {Done, {}}; }
    static Step failed(std::string r) { return {Failed, std::move(r)}; }
  };

  enum class Drive { Arrived, Moving, Unreachable, GoalInObstacle, Stuck };

  Json task_log(const Task& t) const {
    Json j = task_to_json(t);
    if (plan_) {
      j["plan_id"] = plan_->plan_id;
      j["goal_id"] = plan_->root_goal_id;
    }
    return j;
  }

  Pose2D pose(const AgentContext& ctx) const { return ctx.world.get(id_).pose; }

  MasMessage observation(const std::string& to, Json payload, Tick now) const {
    MasMessage m;
    m.kind = MessageKind::Observation;
    m.sender = id_;
    m.recipient = to;
    m.payload = std::move(payload);
    m.sent_tick = now;
    return m;
  }

  Goal& goal_mut(const std::string& id) {
    for (auto& g : goals_) {
      if (g.goal_id == id) return g;
    }
    throw std::out_of_range("unknown goal " + id);
  }

  void status(Goal& g, GoalStatus next, std::optional<std::string> reason, Tick now, TickOutput& out) {
    auto msg = mas::update_goal_status(g, next, reason, now, id_);
    out.log.push_back({"GoalStatus", msg.payload});
    if (!g.originator.empty() && g.originator != id_) out.messages.push_back(std::move(msg));
  }

  void reject_goal(const MasMessage& m, const std::string& reason, AgentContext& ctx, TickOutput& out) {
    Goal g;
    try {
      g = mas::goal_from_json(m.payload.at("goal"));
    } catch (const std::exception&) {
      g.goal_id = m.goal_id.value_or(m.msg_id);
    }
    if (g.originator.empty()) g.originator = m.sender;
    goals_.push_back(g);
    status(goals_.back(), GoalStatus::Rejected, reason, ctx.now, out);
  }

  void accept_goal(const MasMessage& m, AgentContext& ctx, TickOutput& out) {
    Goal g;
    try {
      g = mas::goal_from_json(m.payload.at("goal"));
    } catch (const std::exception& e) {
      out.log.push_back({"GoalMalformed", {{"msg_id", m.msg_id}, {"error", e.what()}}});
      return;
    }
    if (g.originator.empty()) g.originator = m.sender;
    if (goal(g.goal_id)) {
      out.log.push_back({"GoalDuplicate", {{"goal_id", g.goal_id}}});
      return;
    }
    out.log.push_back({"GoalReceived", {{"goal_id", g.goal_id}, {"kind", mas::to_string(g.kind())}, {"msg_id", m.msg_id}}});
    Plan p;
    try {
      p = decompose(g, role_, ctx.world, pose(ctx), cfg_.exec, cfg_.nav);
    } catch (const DecomposeError& e) {
      goals_.push_back(g);
      status(goals_.back(), GoalStatus::Rejected, std::string(e.what()), ctx.now, out);
      return;
    }
    p.plan_id = id_ + ":p" + std::to_string(++plan_counter_);
    goals_.push_back(g);
    status(goals_.back(), GoalStatus::Accepted, std::nullopt, ctx.now, out);
    queue_.push_back(std::move(p));
  }

  void start_next(AgentContext& ctx, TickOutput& out) {
    if (queue_.empty()) return;
    plan_ = std::move(queue_.front());
    queue_.erase(queue_.begin());
    reset_motion();
    Goal& g = goal_mut(plan_->root_goal_id);
    status(g, GoalStatus::Active, std::nullopt, ctx.now, out);
    Json tasks = Json::array();
    for (const auto& t : plan_->tasks) tasks.push_back(to_string(t.kind));
    Json j{{"plan_id", plan_->plan_id}, {"goal_id", g.goal_id}, {"tasks", tasks}};
    if (plan_->background) j["background"] = to_string(plan_->background->kind);
    out.log.push_back({"PlanStarted", std::move(j)});
  }

  void finish_goal(GoalStatus s, std::optional<std::string> reason, AgentContext& ctx, TickOutput& out) {
    Goal& g = goal_mut(plan_->root_goal_id);
    status(g, s, reason, ctx.now, out);
    plan_.reset();
    reset_motion();
  }

  void reset_motion() {
    path_.reset();
    best_distance_ = nav::kInf;
  }

  // Remaining path (from the point nearest the rover) crosses a known obstacle.
  bool remaining_blocked(const Vec2 here) const {
    std::size_t nearest = 0;
    for (std::size_t i = 1; i < path_->points.size(); ++i) {
      if (distance(path_->points[i], here) < distance(path_->points[nearest], here)) nearest = i;
    }
    for (std::size_t i = nearest; i < path_->points.size(); ++i) {
      const auto c = known_.try_world_to_cell(path_->points[i]);
      if (c && known_.at(*c) == CellState::Obstacle) return true;
    }
    return false;
  }

  Drive drive(Vec2 target, double tol, const AgentContext& ctx, TickOutput& out) {
    const Pose2D p = pose(ctx);
    tol = std::max(tol, cfg_.nav.goal_tolerance);
    const double d = distance(p.position(), target);
    if (d <= tol) {
      path_.reset();
      return Drive::Arrived;
    }
    std::string why;
    if (!path_ || distance(path_target_, target) > 1e-9) {
      why = "Initial";
    } else if (remaining_blocked(p.position())) {
      why = "PathBlocked";
    }
    if (!why.empty()) {
      const auto r = nav::plan(known_, p.position(), target, cfg_.nav);
      const bool replan = why == "PathBlocked";
      if (replan) {
        ++replans_;
        out.errors.push_back({id_, "PathBlocked", "warning", true, "replanning"});
      }
      if (const auto* f = std::get_if<nav::PlanFailure>(&r)) {
        out.log.push_back({replan ? "Replan" : "PlanFailed",
                           {{"target", mas::vec_json(target)}, {"reason", why}, {"result", nav::to_string(*f)}}});
        path_.reset();
        return *f == nav::PlanFailure::GoalInObstacle ? Drive::GoalInObstacle : Drive::Unreachable;
      }
      path_ = std::get<nav::Path>(r);
      path_target_ = target;
      best_distance_ = d;
      progress_tick_ = ctx.now;
      out.log.push_back({replan ? "Replan" : "PathPlanned",
                         {{"target", mas::vec_json(target)},
                          {"reason", why},
                          {"result", "Path"},
                          {"length", path_->total_length},
                          {"points", path_->points.size()}}});
    }
    if (d < best_distance_ - 0.05) {
      best_distance_ = d;
      progress_tick_ = ctx.now;
    } else if (ctx.now - progress_tick_ > cfg_.exec.stuck_ticks) {
      path_.reset();
      best_distance_ = nav::kInf;
      return Drive::Stuck;
    }
    const auto tw = nav::follow(*path_, p, cfg_.nav);
    out.cmd = {tw.v, tw.omega};
    return Drive::Moving;
  }

  Step retry_or_fail(Task& t, const std::string& reason, TickOutput& out) {
    ++t.attempts;
    out.log.push_back({"TaskRetry", [&] {
                         Json j = task_log(t);
                         j["reason"] = reason;
                         j["attempts"] = t.attempts;
                         return j;
                       }()});
    if (t.attempts > cfg_.exec.max_retries) return Step::failed(reason);
    out.errors.push_back({id_, reason, "warning", true, "retrying"});
    return Step::running();
  }

  Step navigate(Task& t, const AgentContext& ctx, TickOutput& out) {
    switch (drive(t.target, t.tolerance, ctx, out)) {
      case Drive::Arrived: return Step::done();
      case Drive::Moving: return Step::running();
      case Drive::Unreachable: return Step::failed("Unreachable");
      case Drive::GoalInObstacle: return Step::failed("GoalInObstacle");
      case Drive::Stuck: return retry_or_fail(t, "Stuck", out);
    }
    return Step::running();
  }

  Step step(Task& t, AgentContext& ctx, TickOutput& out) {
    switch (t.kind) {
      case TaskKind::NavigateTo:
      case TaskKind::ReturnToBase: return navigate(t, ctx, out);
      case TaskKind::SweepArea: return sweep(t, ctx, out);
      case TaskKind::InspectPanel: return inspect(t, ctx, out);
      case TaskKind::AnalyzePoint: return analyze(t, ctx, out);
      case TaskKind::RequestSecondary: return request_secondary(t, ctx, out);
      case TaskKind::RendezvousAwait: return rendezvous(t, ctx, out);
      case TaskKind::MountTool: return mount(t, ctx, out);
      case TaskKind::CollectSample: return collect(t, ctx, out);
      case TaskKind::StoreToSlot: return store(t, ctx, out);
      case TaskKind::AwaitStorageEmptied:
        if (storage_.slots.empty() || storage_confirmed_) {
          storage_confirmed_ = false;
          return Step::done();
        }
        return Step::running();
      case TaskKind::Supervise: return Step::done();
    }
    return Step::failed("UnknownTask");
  }

  Step sweep(Task& t, AgentContext& ctx, TickOutput& out) {
    if (!partner_.empty() && !partner_available_) {
      if (!paused_) out.log.push_back({"MappingPaused", {{"reason", "SecondaryStorageFull"}}});
      paused_ = true;
      return Step::running();
    }
    if (paused_) {
      out.log.push_back({"MappingResumed", Json::object()});
      paused_ = false;
    }
    while (t.next < t.waypoints.size()) {
      const Vec2 wp = t.waypoints[t.next];
      const Drive d = drive(wp, cfg_.nav.goal_tolerance, ctx, out);
      if (d == Drive::Moving) return Step::running();
      if (d != Drive::Arrived) {
        const char* why = d == Drive::Stuck ? "Stuck" : d == Drive::GoalInObstacle ? "GoalInObstacle" : "Unreachable";
        out.log.push_back({"WaypointSkipped", {{"waypoint", mas::vec_json(wp)}, {"reason", why}}});
      }
      ++t.next;
      reset_motion();
    }
    return Step::done();
  }

  Step inspect(Task& t, AgentContext& ctx, TickOutput& out) {
    const world::Entity* panel = ctx.world.find(t.ref);
    if (!panel) return Step::failed("UnknownPanel");
    std::vector<percept::DefectReport> reports;
    try {
      reports = percept::inspect_panel(*panel, pose(ctx), cfg_.inspect_range, ctx.now);
    } catch (const percept::OutOfInspectRange&) {
      Step s = retry_or_fail(t, "OutOfInspectRange", out);
      // Drive again to the standoff point that precedes this task.
      if (s.kind == Step::Running && plan_->current > 0) {
        t.status = TaskStatus::Waiting;
        --plan_->current;
        plan_->tasks[plan_->current].status = TaskStatus::Waiting;
      }
      return s;
    }
    Json defects = Json::array();
    for (const auto& r : reports) {
      Json d{{"panel_id", r.panel_id}, {"local_point", mas::vec_json(r.local_point)},
             {"world_point", mas::vec_json(r.world_point)}};
      out.log.push_back({"DefectReport", d});
      defects.push_back(std::move(d));
    }
    out.log.push_back({"PanelInspected", {{"panel_id", t.ref}, {"defects", reports.size()}}});
    const Goal* g = goal(plan_->root_goal_id);
    if (g && !g->originator.empty() && g->originator != id_) {
      out.messages.push_back(
          observation(g->originator, {{"event", "PanelInspected"}, {"panel_id", t.ref}, {"defects", defects}}, ctx.now));
    }
    return Step::done();
  }

  Step analyze(Task& t, AgentContext& ctx, TickOutput& out) {
    if (role_ != Role::Leader) return Step::failed("RoleViolation");
    const world::Entity* s = ctx.world.find(t.ref);
    if (!s) return Step::failed("UnknownSample");
    const double score = s->interest_score.value_or(0.0);
    const bool interesting = score >= cfg_.exec.theta;
    out.log.push_back({"PointAnalyzed", {{"sample", t.ref}, {"score", score}, {"interesting", interesting}}});
    if (!interesting) return Step::done();
    if (partner_.empty()) {
      out.log.push_back({"SampleNotStored", {{"sample", t.ref}, {"reason", "NoSecondary"}}});
      return Step::done();
    }
    std::vector<Task> extra;
    extra.push_back(make_task(TaskKind::RequestSecondary, t.ref));
    if (!holding_shovel(ctx)) {
      const std::string tool = pick_shovel(ctx);
      if (tool.empty()) {
        out.log.push_back({"SampleNotStored", {{"sample", t.ref}, {"reason", "NoShovel"}}});
        return Step::done();
      }
      extra.push_back(make_task(TaskKind::MountTool, tool));
    }
    extra.push_back(make_task(TaskKind::CollectSample, t.ref));
    extra.push_back(make_task(TaskKind::StoreToSlot, t.ref));
    auto pos = plan_->tasks.begin() + static_cast<std::ptrdiff_t>(plan_->current + 1);
    plan_->tasks.insert(pos, extra.begin(), extra.end());
    return Step::done();
  }

  bool holding_shovel(const AgentContext& ctx) const {
    if (!arm_.holding || !ctx.tools) return false;
    const manip::Tool* tool = ctx.tools->find(*arm_.holding);
    return tool && tool->kind == manip::ToolKind::Shovel;
  }

  std::string pick_shovel(const AgentContext& ctx) const {
    if (!ctx.tools) return {};
    for (const auto& tool : ctx.tools->tools()) {
      if (tool.kind == manip::ToolKind::Shovel && !tool.on_arm) return tool.tool_id;
    }
    return {};
  }

  Step request_secondary(Task& t, AgentContext& ctx, TickOutput& out) {
    if (!partner_available_) return Step::running();
    if (!child_goal_) {
      Goal g;
      g.goal_id = ctx.next_goal_id ? ctx.next_goal_id() : id_ + ":g" + std::to_string(++plan_counter_);
      g.required_level = mas::AutonomyLevel::E4;
      g.params = mas::StoreSampleParams{t.ref, pose(ctx).position()};
      g.originator = id_;
      g.addressee = partner_;
      MasMessage m;
      m.kind = MessageKind::GoalRequest;
      m.sender = id_;
      m.recipient = partner_;
      m.goal_id = g.goal_id;
      m.sent_tick = ctx.now;
      m.payload = {{"level", "E4"}, {"goal", mas::goal_to_json(g)}};
      out.messages.push_back(std::move(m));
      out.log.push_back({"SecondaryRequested", {{"goal_id", g.goal_id},
                                                {"sample", t.ref},
                                                {"rendezvous", mas::vec_json(pose(ctx).position())}}});
      child_goal_ = g.goal_id;
      child_status_.clear();
      return Step::running();
    }
    if (child_status_ == "Accepted" || child_status_ == "Active" || child_status_ == "Achieved") {
      child_goal_.reset();
      return Step::done();
    }
    if (child_status_ == "Rejected" || child_status_ == "Failed") {
      child_goal_.reset();
      return Step::failed("SecondaryUnavailable");
    }
    return Step::running();
  }

  Step rendezvous(Task& t, AgentContext& ctx, TickOutput& out) {
    if (!storage_.contains(t.ref)) return Step::running();
    const AfterStore d = decide_after_store(storage_);
    out.log.push_back({"DecideAfterStore", {{"sample", t.ref}, {"decision", to_string(d)}}});
    if (d == AfterStore::ReturnToBase) {
      const world::Entity& base = base_station(ctx.world, {});
      plan_->tasks.push_back(make_task(TaskKind::ReturnToBase, base.id, base.position(), cfg_.exec.base_radius));
      plan_->tasks.push_back(make_task(TaskKind::AwaitStorageEmptied, base.id));
      if (!partner_.empty()) out.messages.push_back(observation(partner_, {{"event", "StorageFull"}}, ctx.now));
    }
    return Step::done();
  }

  Step tc(manip::TcEvent ev, AgentContext& ctx, TickOutput& out, const std::string& tool = {}) {
    const auto from = tc_.state;
    const auto notice = manip::tc_step(tc_, ev, arm_, *ctx.tools, tool);
    out.log.push_back({"ToolChanger", {{"from", manip::to_string(from)},
                                       {"event", manip::to_string(ev)},
                                       {"to", manip::to_string(tc_.state)},
                                       {"tool", tc_.tool_id}}});
    if (notice) {
      out.log.push_back({"CooperativeNotice", {{"code", notice->code}, {"tool", notice->detail}}});
      if (!partner_.empty()) {
        MasMessage m = observation(partner_, {{"event", notice->code}, {"tool", notice->detail}}, ctx.now);
        m.kind = MessageKind::Alert;
        out.messages.push_back(std::move(m));
      }
    }
    return Step::running();
  }

  Step mount(Task& t, AgentContext& ctx, TickOutput& out) {
    if (!ctx.tools) return Step::failed("NoToolInventory");
    if (arm_.holding && *arm_.holding == t.ref) return Step::done();
    const Pose2D p = pose(ctx);
    switch (tc_.state) {
      case manip::TcState::Stowed: return tc(manip::TcEvent::MountRequested, ctx, out, t.ref);
      case manip::TcState::Approach: {
        const world::Entity* slot = ctx.world.find(tc_.slot_id);
        if (!slot) return tc(manip::TcEvent::SlotNotVisible, ctx, out);
        // A repositioning retry closes in further before reaching again.
        const double thr = cfg_.manip.approach_distance * (t.attempts > 0 ? 0.5 : 1.0);
        if (distance(manip::arm_base(arm_, p).position(), slot->position()) <= thr) {
          return tc(manip::TcEvent::ArrivedAtSlot, ctx, out);
        }
        const Drive d = drive(slot->position(), 0.0, ctx, out);
        if (d == Drive::Arrived) return tc(manip::TcEvent::ArrivedAtSlot, ctx, out);
        if (d == Drive::Moving) return Step::running();
        return Step::failed("ToolUnreachable");
      }
      case manip::TcState::Localize: {
        try {
          Rng fallback(0);
          tool_estimate_ = manip::localize_tool(ctx.world, manip::arm_base(arm_, p), tc_.slot_id,
                                                cfg_.manip.localize_range, cfg_.manip.localize_sigma,
                                                ctx.rng ? *ctx.rng : fallback);
          return tc(manip::TcEvent::PoseEstimated, ctx, out);
        } catch (const manip::SlotNotVisible&) {
          return tc(manip::TcEvent::SlotNotVisible, ctx, out);
        }
      }
      case manip::TcState::Reach: {
        const auto r = manip::check_reach(arm_, p, tool_estimate_.position());
        if (r.reachable) {
          arm_.q1 = r.q1;
          arm_.q2 = r.q2;
        }
        return tc(r.reachable ? manip::TcEvent::ReachOk : manip::TcEvent::Unreachable, ctx, out);
      }
      case manip::TcState::Latch:
        tc(manip::TcEvent::Latched, ctx, out);
        out.log.push_back({"ToolMounted", {{"tool", t.ref}}});
        return Step::done();
      case manip::TcState::Fault: {
        const std::string reason = tc_.fault_reason == "Unreachable" ? "ToolUnreachable" : tc_.fault_reason;
        tc(manip::TcEvent::Reset, ctx, out);
        ++t.attempts;
        if (reason == "ToolUnreachable" && t.attempts <= 1) {
          out.errors.push_back({id_, reason, "warning", true, "repositioning"});
          out.log.push_back({"TaskRetry", [&] {
                               Json j = task_log(t);
                               j["reason"] = reason;
                               j["attempts"] = t.attempts;
                               return j;
                             }()});
          reset_motion();
          return Step::running();
        }
        return Step::failed(reason);
      }
      case manip::TcState::Mounted:
        if (arm_.holding && *arm_.holding == t.ref) return Step::done();
        return tc(manip::TcEvent::DismountRequested, ctx, out);
      case manip::TcState::Unlatch: return tc(manip::TcEvent::Unlatched, ctx, out);
      case manip::TcState::Retreat: return tc(manip::TcEvent::Retreated, ctx, out);
    }
    return Step::running();
  }

  manip::ScContext sc_context(const AgentContext& ctx, const world::Entity& sample) const {
    manip::ScContext c;
    if (arm_.holding && ctx.tools) {
      if (const auto* tool = ctx.tools->find(*arm_.holding)) c.held_tool = tool->kind;
    }
    c.distance_to_sample = distance(pose(ctx).position(), sample.position());
    c.scoop_range = cfg_.manip.scoop_range;
    return c;
  }

  void sc(const manip::ScContext& c, TickOutput& out) {
    const auto from = sc_->state;
    manip::sc_step(*sc_, c);
    out.log.push_back({"SampleCollection", {{"from", manip::to_string(from)},
                                            {"to", manip::to_string(sc_->state)},
                                            {"sample", sc_->sample_id}}});
  }

  Step collect(Task& t, AgentContext& ctx, TickOutput& out) {
    const world::Entity* s = ctx.world.find(t.ref);
    if (!s) return Step::failed("UnknownSample");
    if (!sc_ || sc_->sample_id != t.ref) {
      sc_ = manip::SampleCollectionFsm{};
      sc_->sample_id = t.ref;
    }
    const auto c = sc_context(ctx, *s);
    switch (sc_->state) {
      case manip::ScState::VerifyTool:
        sc(c, out);
        if (sc_->state == manip::ScState::Fault) return Step::failed(sc_->fault_reason);
        return Step::running();
      case manip::ScState::Scoop: {
        if (c.distance_to_sample > cfg_.manip.scoop_range) {
          const Drive d = drive(s->position(), cfg_.manip.scoop_range * 0.75, ctx, out);
          if (d == Drive::Moving) return Step::running();
          if (d != Drive::Arrived) return Step::failed("OutOfScoopRange");
          return Step::running();
        }
        sc(c, out);
        if (sc_->state == manip::ScState::Fault) return Step::failed(sc_->fault_reason);
        out.log.push_back({"SampleScooped", {{"sample", t.ref}}});
        return Step::done();
      }
      case manip::ScState::Fault: return Step::failed(sc_->fault_reason);
      default: return Step::done();
    }
  }

  Step store(Task& t, AgentContext& ctx, TickOutput& out) {
    if (!sc_ || sc_->sample_id != t.ref) return Step::failed("NoSampleHeld");
    const world::Entity* partner = ctx.world.find(partner_);
    if (!partner || !ctx.partner_storage) return Step::failed("NoStorage");
    auto c = sc_context(ctx, ctx.world.get(t.ref));
    c.storage = ctx.partner_storage;
    switch (sc_->state) {
      case manip::ScState::Transfer: {
        const double d = distance(pose(ctx).position(), partner->position());
        c.storage_in_reach = d <= cfg_.manip.transfer_range;
        if (!c.storage_in_reach) {
          const Drive dr = drive(partner->position(), cfg_.manip.transfer_range * 0.75, ctx, out);
          if (dr == Drive::Moving) return Step::running();
          if (dr != Drive::Arrived) return Step::failed("StorageUnreachable");
          return Step::running();
        }
        sc(c, out);
        return Step::running();
      }
      case manip::ScState::Unload:
        sc(c, out);
        if (sc_->state == manip::ScState::Fault) return Step::failed(sc_->fault_reason);
        out.log.push_back({"SampleStored", {{"sample", t.ref},
                                            {"storage", partner_},
                                            {"slot", *sc_->stored_slot + 1}}});
        sc_.reset();
        return Step::done();
      case manip::ScState::Fault: return Step::failed(sc_->fault_reason);
      default: return Step::failed("NoSampleHeld");
    }
  }

  std::string id_;
  Role role_;
  mas::AutonomyLevel level_;
  AgentConfig cfg_;
  GridMap known_;
  manip::Arm arm_;
  manip::ToolChangerFsm tc_;
  Pose2D tool_estimate_{};
  std::optional<manip::SampleCollectionFsm> sc_;
  manip::StorageState storage_;
  bool storage_confirmed_ = false;

  std::vector<Goal> goals_;
  std::vector<Plan> queue_;
  std::optional<Plan> plan_;
  std::uint64_t plan_counter_ = 0;

  bool emergency_ = false;
  std::optional<world::VelocityCommand> telecommand_;
  Tick telecommand_until_ = 0;

  std::optional<nav::Path> path_;
  Vec2 path_target_{};
  double best_distance_ = nav::kInf;
  Tick progress_tick_ = 0;
  std::size_t replans_ = 0;

  std::string partner_;
  bool partner_available_ = false;
  bool paused_ = false;
  std::optional<std::string> child_goal_;
  std::string child_status_;
};

}  // namespace cisru::executive
