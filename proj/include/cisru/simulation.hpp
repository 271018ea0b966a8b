#pragma once

#include <algorithm>
#include <cstdio>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cisru/event_log.hpp"
#include "cisru/scenario.hpp"

namespace cisru {

using mas::MasMessage;
using mas::MessageKind;

struct SessionInfo {
  std::string scenario_path;
  std::string scenario_text;
  std::optional<Tick> ticks;  // null when serving
};

inline std::string text_hash(const std::string& text) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(text)));
  return buf;
}

/// Outcome of one console or scripted command.
struct CommandReply {
  bool ok = true;
  Json result = Json::object();
  std::string code;
  std::string message;

  static CommandReply ack(Json r = Json::object()) { return {true, std::move(r), {}, {}}; }
  static CommandReply error(std::string code, std::string message) {
    return {false, Json::object(), std::move(code), std::move(message)};
  }

  Json to_json() const {
    if (ok) return {{"ok", true}, {"result", result}};
    return {{"ok", false}, {"code", code}, {"message", message}};
  }
};

class Simulation {
 public:
  using ReplyFn = std::function<void(const CommandReply&)>;

  Simulation(Scenario sc, const SessionInfo& info, EventLog::Sink sink = {}, bool retain = true)
      : cfg_(sc.config),
        seed_(sc.seed),
        world_(std::move(sc.world)),
        assignments_(std::move(sc.assignments)),
        goal_specs_(std::move(sc.goals)),
        log_(std::move(sink), retain),
        net_(splitmix64(sc.seed ^ 0x6e6574ULL), cfg_.net),
        relay_(net_, cfg_.retransmit_period),
        supervisor_(cfg_.supervise),
        rng_(splitmix64(sc.seed ^ 0x6c6f63ULL)) {
    for (auto& c : sc.commands) scripted_commands_.push_back({std::move(c), false, false});
    scripted_goal_ids_.resize(goal_specs_.size());
    Json header;
    header["scenario"] = info.scenario_path;
    header["name"] = sc.name;
    header["seed"] = seed_;
    header["ticks"] = info.ticks ? Json(*info.ticks) : Json();
    header["config"] = config_to_json(cfg_);
    header["scenario_hash"] = text_hash(info.scenario_text);
    log_.append(0, "gateway", "ScenarioLoaded", std::move(header));

    relay_.set_observer({[this](const MasMessage& m, netsim::SendOutcome o, bool retransmit) {
                           static const char* kOutcome[] = {"Enqueued", "Dropped", "Partitioned"};
                           log_.append(now(), "relay", "MessageSent",
                                       {{"msg_id", m.msg_id},
                                        {"kind", mas::to_string(m.kind)},
                                        {"sender", m.sender},
                                        {"recipient", m.recipient},
                                        {"outcome", kOutcome[static_cast<int>(o)]},
                                        {"retransmit", retransmit}});
                         },
                         [this](const MasMessage& m) {
                           log_.append(now(), "relay", "DuplicateDropped",
                                       {{"msg_id", m.msg_id}, {"kind", mas::to_string(m.kind)},
                                        {"recipient", m.recipient}});
                         }});
    relay_.register_endpoint("mc");
    relay_.register_endpoint("supervise");
    for (const auto* a : world_.of_kind(world::EntityKind::Astronaut)) relay_.register_endpoint(a->id);

    std::stable_sort(sc.agents.begin(), sc.agents.end(), [](const AgentSpec& a, const AgentSpec& b) {
      return a.role == executive::Role::Leader && b.role != executive::Role::Leader;
    });
    const GridMap& t = world_.terrain();
    executive::AgentConfig acfg{cfg_.exec, cfg_.nav, cfg_.manip, cfg_.percept.inspect_range};
    for (const auto& a : sc.agents) {
      GridMap known(t.width(), t.height(), t.resolution(), t.origin(), CellState::Unknown);
      agents_.push_back(std::make_unique<executive::Executive>(a.id, a.role, a.level, std::move(known), acfg,
                                                               a.storage_slots));
      relay_.register_endpoint(a.id);
    }
    if (agents_.size() >= 2 && agents_[0]->role() == executive::Role::Leader) {
      for (std::size_t i = 1; i < agents_.size(); ++i) {
        if (agents_[i]->role() != executive::Role::Secondary) continue;
        agents_[0]->set_partner(agents_[i]->id());
        agents_[i]->set_partner(agents_[0]->id());
        break;
      }
    }
    for (const auto& ts : sc.tools) tools_.add({ts.tool_id, ts.kind, false, ts.slot_id});
    if (!agents_.empty()) fused_ = agents_[0]->known_map();
  }

  Tick now() const { return world_.tick(); }
  std::uint64_t seed() const { return seed_; }
  const SimConfig& config() const { return cfg_; }
  const EventLog& log() const { return log_; }
  const world::World& world() const { return world_; }
  const supervise::Supervisor& supervisor() const { return supervisor_; }
  const percept::Tracker& tracker() const { return tracker_; }
  const manip::ToolInventory& tools() const { return tools_; }
  const GridMap& fused_map() const { return fused_; }
  std::size_t agent_count() const { return agents_.size(); }
  const executive::Executive& agent(std::size_t i) const { return *agents_.at(i); }
  const executive::Executive* agent(const std::string& id) const {
    return const_cast<Simulation*>(this)->find_agent(id);
  }
  const std::vector<std::string>& scripted_goal_ids() const { return scripted_goal_ids_; }

  /// Queues a command for the next tick boundary.
  void submit(Json command, std::string origin = "console", ReplyFn reply = {}) {
    inbox_.push_back({std::move(command), std::move(origin), std::move(reply)});
  }

  /// Advances the whole system by one tick.
  void step() {
    const Tick t = now();
    if (!started_) {
      started_ = true;
      log_world(world_.apply_due_events());
    }
    issue_scripted(t);
    apply_inbox(t);

    relay_.tick(t);
    for (auto& m : net_.deliver_due(t)) route(m, t);

    perceive(t);
    supervise(t);

    std::map<std::string, world::VelocityCommand> cmds;
    for (auto& a : agents_) {
      auto ctx = context(*a, t);
      auto out = a->tick(ctx);
      cmds[a->id()] = out.cmd;
      handle_output(a->id(), out, t);
    }

    if (cfg_.fusion_interval > 0 && t > 0 && t % cfg_.fusion_interval == 0) fuse_maps(t);
    log_world(world_.step(cmds));
  }

  /// Registers and fuses the agents' maps now.
  void fuse_maps() { fuse_maps(now()); }

  bool scripted_goals_terminal() const {
    for (std::size_t i = 0; i < goal_specs_.size(); ++i) {
      const auto* a = agent(goal_specs_[i].goal.addressee);
      if (scripted_goal_ids_[i].empty()) return false;
      const auto* g = a ? a->goal(scripted_goal_ids_[i]) : nullptr;
      if (!g || !mas::is_terminal(g->status)) return false;
    }
    return true;
  }

  /// Nothing scripted is left and every agent, case and message has settled.
  bool quiescent() const {
    const Tick t = now();
    if (!started_ && !world_.script().empty()) return false;
    for (const auto& g : goal_specs_) {
      if (g.at >= t) return false;
    }
    for (const auto& c : scripted_commands_) {
      if (c.spec.at >= t || (c.spec.retry && !c.done)) return false;
    }
    for (const auto& e : world_.script()) {
      if (e.at > t) return false;
    }
    if (!inbox_.empty() || relay_.unacked() > 0) return false;
    for (const auto& a : agents_) {
      if (!a->idle()) return false;
    }
    for (const auto& c : supervisor_.cases()) {
      if (!supervise::is_terminal(c.state)) return false;
    }
    return scripted_goals_terminal();
  }

  void end_session() { log_.append(now(), "gateway", "SessionEnded", {{"ticks", now()}}); }

  Json snapshot() const {
    Json j;
    j["tick"] = now();
    Json ents = Json::array();
    for (const auto& e : world_.entities()) {
      Json x{{"id", e.id},
             {"kind", world::to_string(e.kind)},
             {"pose", {e.pose.x, e.pose.y, e.pose.theta}},
             {"radius", e.footprint_radius}};
      if (e.posture) x["posture"] = world::to_string(*e.posture);
      if (e.attached_to) x["on"] = *e.attached_to;
      ents.push_back(std::move(x));
    }
    j["entities"] = std::move(ents);
    j["map"] = grid_to_json(fused_);
    Json agents = Json::array();
    for (const auto& a : agents_) {
      Json x{{"id", a->id()}, {"role", executive::to_string(a->role())}, {"level", mas::to_string(a->level())}};
      Json storage = Json::array();
      for (const auto& s : a->storage().slots) storage.push_back(s ? Json(*s) : Json());
      x["storage"] = std::move(storage);
      x["holding"] = a->arm().holding ? Json(*a->arm().holding) : Json();
      Json goals = Json::array();
      for (const auto& g : a->goals()) {
        Json gj{{"goal_id", g.goal_id}, {"kind", mas::to_string(g.kind())}, {"status", mas::to_string(g.status)}};
        if (g.failure_reason) gj["reason"] = *g.failure_reason;
        goals.push_back(std::move(gj));
      }
      x["goals"] = std::move(goals);
      auto& plan = a->plan();
      x["task"] = plan && plan->current < plan->tasks.size() ? executive::task_to_json(plan->tasks[plan->current])
                                                               : Json();
      x["emergency"] = a->emergency();
      agents.push_back(std::move(x));
    }
    j["agents"] = std::move(agents);
    Json tracks = Json::array();
    for (const auto& t : tracker_.tracks()) {
      tracks.push_back({{"track_id", t.track_id},
                        {"class", percept::to_string(t.cls)},
                        {"position", mas::vec_json(t.last_pos)},
                        {"status", t.status == percept::TrackStatus::Live ? "Live" : "Stale"},
                        {"entity", t.entity_id}});
    }
    j["tracks"] = std::move(tracks);
    Json cases = Json::array();
    Json prompts = Json::array();
    for (const auto& c : supervisor_.cases()) {
      cases.push_back(case_json(c));
      if (c.state == supervise::CaseState::Prompted) {
        prompts.push_back({{"case_id", c.case_id},
                           {"astronaut", c.astronaut_id},
                           {"deadline", supervisor_.deadline(c)}});
      }
    }
    j["cases"] = std::move(cases);
    j["prompts"] = std::move(prompts);
    Json alerts = Json::array();
    for (const auto& a : alerts_) {
      Json x = alert_json(a.id, a.alert);
      x["acknowledged"] = a.acknowledged;
      alerts.push_back(std::move(x));
    }
    j["alerts"] = std::move(alerts);
    return j;
  }

 private:
  struct Pending {
    Json command;
    std::string origin;
    ReplyFn reply;
  };

  struct ScriptedCommand {
    CommandSpec spec;
    bool done = false;
    bool error_logged = false;
  };

  struct AlertEntry {
    std::string id;
    supervise::Alert alert;
    bool acknowledged = false;
  };

  executive::Executive* find_agent(const std::string& id) {
    for (auto& a : agents_) {
      if (a->id() == id) return a.get();
    }
    return nullptr;
  }

  executive::AgentContext context(executive::Executive& a, Tick t) {
    manip::StorageState* partner_storage = nullptr;
    if (auto* p = find_agent(a.partner())) partner_storage = &p->storage();
    return executive::AgentContext{world_, t, &tools_, partner_storage, &rng_, [this] { return next_goal_id(); }};
  }

  std::string next_goal_id() { return "g" + std::to_string(++goal_counter_); }

  void log_world(const std::vector<world::StepRecord>& recs) {
    for (const auto& r : recs) {
      Json p{{"entity", r.entity}, {"position", mas::vec_json(r.position)}};
      if (r.type == "AddObstacle" || r.type == "RemoveObstacle") p = {{"cells", r.cell_count}};
      log_.append(r.tick, "world", r.type, std::move(p));
    }
  }

  void handle_output(const std::string& source, executive::TickOutput& out, Tick t) {
    for (auto& l : out.log) log_.append(t, source, l.type, std::move(l.payload));
    for (auto& m : out.messages) relay_.send(std::move(m), t);
    for (const auto& e : out.errors) {
      log_.append(t, source, "Error",
                  {{"code", e.code}, {"severity", e.severity}, {"handled", e.handled}, {"detail", e.detail}});
      if (auto a = supervisor_.on_error(e, t)) publish_alert(*a, t);
    }
  }

  // -- goals and commands ----------------------------------------------------

  CommandReply issue_goal(mas::Goal g, const std::string& origin, bool precheck, Tick t) {
    executive::Executive* a = find_agent(g.addressee);
    if (!a) return CommandReply::error("UnknownRef", "unknown agent '" + g.addressee + "'");
    g.originator = "mc";
    Json payload{{"level", mas::to_string(g.required_level)}};
    if (precheck) {
      const MasMessage probe = relay_.make(MessageKind::GoalRequest, "mc", g.addressee, payload, t);
      const auto gate = mas::gate_message(a->level(), probe);
      if (!gate.accepted) {
        return CommandReply::error("AutonomyLevelMismatch", g.addressee + " runs at " +
                                                                std::string(mas::to_string(a->level())));
      }
    }
    g.goal_id = next_goal_id();
    payload["goal"] = mas::goal_to_json(g);
    log_.append(t, "gateway", "GoalIssued",
                {{"goal_id", g.goal_id},
                 {"kind", mas::to_string(g.kind())},
                 {"addressee", g.addressee},
                 {"level", mas::to_string(g.required_level)},
                 {"origin", origin}});
    const std::string msg_id =
        relay_.send(relay_.make(MessageKind::GoalRequest, "mc", g.addressee, std::move(payload), t, g.goal_id), t);
    return CommandReply::ack({{"goal_id", g.goal_id}, {"msg_id", msg_id}});
  }

  void issue_scripted(Tick t) {
    for (std::size_t i = 0; i < goal_specs_.size(); ++i) {
      if (goal_specs_[i].at != t) continue;
      const auto reply = issue_goal(goal_specs_[i].goal, "script", false, t);
      if (reply.ok) scripted_goal_ids_[i] = reply.result["goal_id"].get<std::string>();
    }
    for (auto& c : scripted_commands_) {
      if (c.done || c.spec.at > t) continue;
      const auto reply = apply_command(c.spec.command, t);
      if (reply.ok || !c.spec.retry) {
        c.done = true;
      } else if (c.error_logged) {
        continue;
      }
      c.error_logged = true;
      log_command("script", c.spec.command, reply, t);
    }
  }

  void apply_inbox(Tick t) {
    auto inbox = std::move(inbox_);
    inbox_.clear();
    for (auto& p : inbox) {
      const auto reply = apply_command(p.command, t);
      log_command(p.origin, p.command, reply, t);
      if (p.reply) p.reply(reply);
    }
  }

  void log_command(const std::string& origin, const Json& command, const CommandReply& reply, Tick t) {
    log_.append(t, origin, "Command", {{"command", command}, {"reply", reply.to_json()}});
  }

  CommandReply apply_command(const Json& cmd, Tick t) {
    if (!cmd.is_object() || !cmd.contains("name") || !cmd.at("name").is_string()) {
      return CommandReply::error("BadCommand", "command must be an object with a string 'name'");
    }
    const std::string name = cmd.at("name").get<std::string>();
    try {
      if (name == "IssueGoal") return cmd_issue_goal(cmd.at("goal"), t);
      if (name == "Telecommand") return cmd_telecommand(cmd, t);
      if (name == "SetAutonomyLevel") return cmd_set_level(cmd, t);
      if (name == "PromptResponse") return cmd_prompt_response(cmd, t);
      if (name == "ConfirmStorageEmptied") return cmd_confirm_storage(cmd, t);
      if (name == "AcknowledgeAlert") return cmd_ack_alert(cmd, t);
    } catch (const nlohmann::json::exception& e) {
      return CommandReply::error("BadCommand", e.what());
    } catch (const mas::GoalFormatError& e) {
      return CommandReply::error("BadCommand", e.what());
    }
    return CommandReply::error("UnknownCommand", "unknown command '" + name + "'");
  }

  CommandReply cmd_issue_goal(const Json& gj, Tick t) {
    const std::string kind_name = gj.at("kind").get<std::string>();
    const auto kind = mas::goal_kind_from_string(kind_name);
    if (!kind) return CommandReply::error("BadCommand", "unknown goal kind '" + kind_name + "'");
    const auto level = mas::autonomy_level_from_string(gj.value("level", std::string("E4")));
    if (!level) return CommandReply::error("BadCommand", "unknown autonomy level");
    mas::Goal g;
    g.required_level = *level;
    g.params = mas::params_from_json(*kind, gj.value("params", Json::object()));
    g.addressee = gj.at("addressee").get<std::string>();
    return issue_goal(std::move(g), "console", true, t);
  }

  CommandReply cmd_telecommand(const Json& cmd, Tick t) {
    const std::string id = cmd.at("agent").get<std::string>();
    executive::Executive* a = find_agent(id);
    if (!a) return CommandReply::error("UnknownRef", "unknown agent '" + id + "'");
    Json p{{"v", cmd.value("v", 0.0)}, {"omega", cmd.value("omega", 0.0)}, {"duration", cmd.value("duration", Tick{1})}};
    MasMessage m = relay_.make(MessageKind::Telecommand, "mc", id, std::move(p), t);
    const auto gate = mas::gate_message(a->level(), m);
    if (!gate.accepted) {
      return CommandReply::error("AutonomyLevelMismatch",
                                 id + " runs at " + std::string(mas::to_string(a->level())) + " and refuses telecommands");
    }
    return CommandReply::ack({{"msg_id", relay_.send(std::move(m), t)}});
  }

  CommandReply cmd_set_level(const Json& cmd, Tick t) {
    const std::string id = cmd.at("agent").get<std::string>();
    executive::Executive* a = find_agent(id);
    if (!a) return CommandReply::error("UnknownRef", "unknown agent '" + id + "'");
    const auto level = mas::autonomy_level_from_string(cmd.at("level").get<std::string>());
    if (!level) return CommandReply::error("BadCommand", "unknown autonomy level");
    const auto from = a->level();
    a->set_level(*level);
    log_.append(t, id, "AutonomyLevelChanged", {{"from", mas::to_string(from)}, {"to", mas::to_string(*level)}});
    return CommandReply::ack({{"agent", id}, {"level", mas::to_string(*level)}});
  }

  CommandReply cmd_prompt_response(const Json& cmd, Tick t) {
    const auto answer = supervise::prompt_answer_from_string(cmd.at("answer").get<std::string>());
    if (!answer) return CommandReply::error("BadCommand", "answer must be Safe or Emergency");
    std::string case_id;
    if (cmd.contains("case")) {
      case_id = cmd.at("case").get<std::string>();
    } else {
      const std::string astro = cmd.at("astronaut").get<std::string>();
      const auto* c = supervisor_.open_case_for_astronaut(astro);
      if (!c) return CommandReply::error("UnknownRef", "no open case for '" + astro + "'");
      case_id = c->case_id;
    }
    std::vector<supervise::Alert> alerts;
    try {
      alerts = supervisor_.on_prompt_response(case_id, *answer, t);
    } catch (const supervise::UnknownCase& e) {
      return CommandReply::error("UnknownRef", e.what());
    } catch (const supervise::StaleResponse& e) {
      return CommandReply::error("StaleResponse", e.what());
    }
    const auto& c = supervisor_.get(case_id);
    log_.append(t, "supervise", "EmergencyCase", case_json(c, cmd.at("answer").get<std::string>()));
    for (const auto& a : alerts) publish_alert(a, t);
    update_emergency(t);
    return CommandReply::ack({{"case_id", case_id}, {"state", supervise::to_string(c.state)}});
  }

  CommandReply cmd_confirm_storage(const Json& cmd, Tick t) {
    std::vector<executive::Executive*> candidates;
    if (cmd.contains("agent")) {
      auto* a = find_agent(cmd.at("agent").get<std::string>());
      if (!a) return CommandReply::error("UnknownRef", "unknown agent");
      candidates.push_back(a);
    } else {
      for (auto& a : agents_) candidates.push_back(a.get());
    }
    for (auto* a : candidates) {
      auto ctx = context(*a, t);
      executive::TickOutput out;
      if (a->confirm_storage_emptied(ctx, out)) continue;
      handle_output(a->id(), out, t);
      return CommandReply::ack({{"agent", a->id()}});
    }
    return CommandReply::error("NotAwaitingStorage", "no agent is waiting for its storage to be emptied");
  }

  CommandReply cmd_ack_alert(const Json& cmd, Tick t) {
    const std::string id = cmd.at("alert_id").get<std::string>();
    for (auto& a : alerts_) {
      if (a.id != id) continue;
      if (!a.acknowledged) {
        a.acknowledged = true;
        log_.append(t, "gateway", "AlertAcknowledged", {{"alert_id", id}});
      }
      return CommandReply::ack({{"alert_id", id}});
    }
    return CommandReply::error("UnknownRef", "unknown alert '" + id + "'");
  }

  // -- messaging -------------------------------------------------------------

  void route(const MasMessage& m, Tick t) {
    const auto app = relay_.receive(m, t);
    if (!app) return;
    log_.append(t, "relay", "MessageDelivered",
                {{"msg_id", app->msg_id}, {"kind", mas::to_string(app->kind)}, {"sender", app->sender},
                 {"recipient", app->recipient}});
    if (auto* a = find_agent(app->recipient)) {
      auto ctx = context(*a, t);
      auto out = a->deliver(*app, ctx);
      handle_output(a->id(), out, t);
    }
  }

  // -- perception and supervision -----------------------------------------

  void perceive(Tick t) {
    const auto& pc = cfg_.percept;
    std::vector<percept::Detection> all;
    std::vector<std::set<std::string>> visible(agents_.size());
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      auto& a = *agents_[i];
      const Pose2D pose = world_.get(a.id()).pose;
      a.reveal(world::raycast_reveal(world_.terrain(), pose, pc.fov, pc.range));
      for (auto& d : percept::detect(world_, a.id(), pose, pc.fov, pc.range)) {
        visible[i].insert(d.entity_id);
        all.push_back(std::move(d));
      }
    }
    for (const auto& ev : tracker_.update(percept::merge_detections(all), t, pc.gate, pc.stale_window)) {
      const auto* tr = tracker_.find(ev.track_id);
      if (ev.kind == percept::TrackEvent::Opened) {
        log_.append(t, "percept", "TrackOpened",
                    {{"track_id", tr->track_id},
                     {"class", percept::to_string(tr->cls)},
                     {"entity", tr->entity_id},
                     {"position", mas::vec_json(tr->last_pos)}});
      } else {
        log_.append(t, "percept", "TrackStale", {{"track_id", ev.track_id}});
      }
    }
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      percept::semantic_overlay(agents_[i]->known_map(), world_, visible[i]);
    }
  }

  void supervise(Tick t) {
    for (const auto& tr : tracker_.tracks()) {
      if (tr.cls != percept::DetClass::Astronaut || tr.last_seen_tick != t) continue;
      const auto* e = world_.find(tr.entity_id);
      if (e && e->posture == world::Posture::Upright) down_tracks_.erase(tr.track_id);
    }
    for (const auto& f : percept::detect_fall(tracker_.tracks(), world_, t)) {
      if (down_tracks_.count(f.track_id) || supervisor_.open_case_for_track(f.track_id)) continue;
      down_tracks_.insert(f.track_id);
      auto [c, prompt] = supervisor_.on_fall(f, t);
      Json detected = case_json(c);
      detected["state"] = "Detected";
      detected["position"] = mas::vec_json(f.position);
      log_.append(t, "supervise", "EmergencyCase", std::move(detected));
      log_.append(t, "supervise", "EmergencyCase", case_json(c));
      log_.append(t, "supervise", "Prompt",
                  {{"case_id", prompt.case_id}, {"astronaut", prompt.astronaut_id},
                   {"deadline", supervisor_.deadline(c)}});
      relay_.send(relay_.make(MessageKind::Prompt, "supervise", prompt.astronaut_id,
                              {{"case_id", prompt.case_id}, {"question", "Are you safe?"}}, t),
                  t);
    }

    const auto interactions = percept::detect_interaction(tracker_.tracks(), world_, cfg_.percept.d_int, t);
    std::vector<percept::InteractionEvent> panel_events;
    std::set<std::pair<std::string, std::string>> active;
    for (const auto& ev : interactions) {
      const auto key = std::make_pair(ev.astronaut_id, ev.asset_id);
      active.insert(key);
      const bool panel = world_.get(ev.asset_id).kind == world::EntityKind::SolarPanelArray;
      if (panel) panel_events.push_back(ev);
      if (!interacting_.count(key)) {
        log_.append(t, "percept", "InteractionStarted",
                    {{"astronaut", ev.astronaut_id}, {"asset", ev.asset_id}, {"distance", ev.distance},
                     {"checked", panel}});
      }
    }
    for (const auto& key : interacting_) {
      if (!active.count(key)) {
        log_.append(t, "percept", "InteractionEnded", {{"astronaut", key.first}, {"asset", key.second}});
      }
    }
    interacting_ = std::move(active);
    std::vector<supervise::InteractionVerdict> verdicts;
    const auto assignment_alerts = supervisor_.check_assignments(panel_events, assignments_, t, &verdicts);
    for (const auto& v : verdicts) {
      if (v.kind != supervise::InteractionVerdict::Violation) continue;
      log_.append(t, "supervise", "AssignmentViolation",
                  {{"astronaut", v.event.astronaut_id},
                   {"assigned", assignments_.at(v.event.astronaut_id)},
                   {"asset", v.event.asset_id}});
    }
    for (const auto& a : assignment_alerts) publish_alert(a, t);

    for (const auto& a : supervisor_.check_timeouts(t)) {
      log_.append(t, "supervise", "EmergencyCase", case_json(supervisor_.get(a.ref), a.reason));
      publish_alert(a, t);
    }
    update_emergency(t);
  }

  void update_emergency(Tick t) {
    bool open = false;
    for (const auto& c : supervisor_.cases()) open = open || !supervise::is_terminal(c.state);
    for (auto& a : agents_) {
      executive::TickOutput out;
      a->set_emergency(open, out);
      handle_output(a->id(), out, t);
    }
  }

  void publish_alert(const supervise::Alert& a, Tick t) {
    const std::string id = "a" + std::to_string(alerts_.size() + 1);
    alerts_.push_back({id, a, false});
    log_.append(t, "supervise", "Alert", alert_json(id, a));
    const std::string to = a.recipient == supervise::Recipient::MissionControl ? "mc" : a.astronaut_id;
    if (!relay_.registered(to)) return;
    relay_.send(relay_.make(MessageKind::Alert, "supervise", to,
                            {{"alert_id", id}, {"reason", a.reason}, {"ref", a.ref}, {"detail", a.detail}}, t),
                t);
  }

  static Json alert_json(const std::string& id, const supervise::Alert& a) {
    Json j{{"alert_id", id},
           {"recipient", supervise::to_string(a.recipient)},
           {"reason", a.reason},
           {"ref", a.ref}};
    if (!a.astronaut_id.empty()) j["astronaut"] = a.astronaut_id;
    j["detail"] = a.detail;
    return j;
  }

  static Json case_json(const supervise::EmergencyCase& c, const std::string& cause = {}) {
    Json j{{"case_id", c.case_id},
           {"astronaut", c.astronaut_id},
           {"track_id", c.astronaut_track},
           {"state", supervise::to_string(c.state)}};
    if (!cause.empty()) j["cause"] = cause;
    return j;
  }

  // -- fusion ----------------------------------------------------------------

  void fuse_maps(Tick t) {
    if (agents_.size() < 2) {
      if (!agents_.empty()) fused_ = agents_[0]->known_map();
      return;
    }
    const GridMap& a = agents_[0]->known_map();
    const GridMap& b = agents_[1]->known_map();
    const auto est = fusion::register_maps(a, b, cfg_.fusion);
    Json reg{{"found", est.has_value()}};
    if (est) {
      reg["rotation"] = est->transform.rotation;
      reg["translation"] = mas::vec_json(est->transform.translation);
      reg["inliers"] = est->inliers;
      reg["matches"] = est->matches;
    }
    log_.append(t, "fusion", "MapRegistration", std::move(reg));
    // Localization is ground truth, so both maps share a frame.
    fused_ = fusion::fuse(a, b, RigidTransform2D::identity());
    log_.append(t, "fusion", "MapFused",
                {{"known", fused_.known_count()}, {"a_known", a.known_count()}, {"b_known", b.known_count()}});
  }

  SimConfig cfg_;
  std::uint64_t seed_;
  world::World world_;
  supervise::Assignments assignments_;
  std::vector<GoalSpec> goal_specs_;
  std::vector<ScriptedCommand> scripted_commands_;
  EventLog log_;
  netsim::Network<MasMessage> net_;
  mas::Relay relay_;
  supervise::Supervisor supervisor_;
  percept::Tracker tracker_;
  Rng rng_;
  std::vector<std::unique_ptr<executive::Executive>> agents_;
  manip::ToolInventory tools_;
  GridMap fused_;

  bool started_ = false;
  std::uint64_t goal_counter_ = 0;
  std::vector<std::string> scripted_goal_ids_;
  std::vector<Pending> inbox_;
  std::vector<AlertEntry> alerts_;
  std::set<std::string> down_tracks_;
  std::set<std::pair<std::string, std::string>> interacting_;
};

inline void run_for(Simulation& sim, Tick ticks) {
  while (sim.now() < ticks) sim.step();
}

}  // namespace cisru
