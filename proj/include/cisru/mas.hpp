#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "cisru/geometry.hpp"
#include "cisru/netsim.hpp"

namespace cisru::mas {

using Json = nlohmann::ordered_json;
using Tick = std::uint64_t;

enum class AutonomyLevel { E1 = 1, E2 = 2, E3 = 3, E4 = 4 };

inline std::string_view to_string(AutonomyLevel l) {
  switch (l) {
    case AutonomyLevel::E1: return "E1";
    case AutonomyLevel::E2: return "E2";
    case AutonomyLevel::E3: return "E3";
    case AutonomyLevel::E4: return "E4";
  }
  return "?";
}

inline std::optional<AutonomyLevel> autonomy_level_from_string(std::string_view s) {
  if (s == "E1") return AutonomyLevel::E1;
  if (s == "E2") return AutonomyLevel::E2;
  if (s == "E3") return AutonomyLevel::E3;
  if (s == "E4") return AutonomyLevel::E4;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Goals

struct Rect {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  bool operator==(const Rect&) const = default;
};

struct InspectionPoint {
  std::string panel_id;
  std::optional<Vec2> at;  // standoff point; derived from the panel pose when absent
  bool operator==(const InspectionPoint&) const = default;
};

struct InspectPanelsParams {
  std::vector<InspectionPoint> points;
  bool operator==(const InspectPanelsParams&) const = default;
};
struct MapAndSampleParams {
  Rect area;
  std::vector<std::string> sample_points;
  bool operator==(const MapAndSampleParams&) const = default;
};
struct StoreSampleParams {
  std::string sample_id;
  Vec2 rendezvous;
  bool operator==(const StoreSampleParams&) const = default;
};
struct ReturnToBaseParams {
  std::string base_id;
  bool operator==(const ReturnToBaseParams&) const = default;
};
struct NavigateToParams {
  Vec2 target;
  bool operator==(const NavigateToParams&) const = default;
};
struct CollectSampleParams {
  std::string sample_id;
  bool operator==(const CollectSampleParams&) const = default;
};
struct SuperviseParams {
  bool operator==(const SuperviseParams&) const = default;
};

/// Alternative order defines GoalKind.
using GoalParams = std::variant<InspectPanelsParams, MapAndSampleParams, StoreSampleParams, ReturnToBaseParams,
                                NavigateToParams, CollectSampleParams, SuperviseParams>;

enum class GoalKind { InspectPanels, MapAndSample, StoreSample, ReturnToBase, NavigateTo, CollectSample, Supervise };

inline std::string_view to_string(GoalKind k) {
  switch (k) {
    case GoalKind::InspectPanels: return "InspectPanels";
    case GoalKind::MapAndSample: return "MapAndSample";
    case GoalKind::StoreSample: return "StoreSample";
    case GoalKind::ReturnToBase: return "ReturnToBase";
    case GoalKind::NavigateTo: return "NavigateTo";
    case GoalKind::CollectSample: return "CollectSample";
    case GoalKind::Supervise: return "Supervise";
  }
  return "?";
}

inline std::optional<GoalKind> goal_kind_from_string(std::string_view s) {
  for (int i = 0; i <= static_cast<int>(GoalKind::Supervise); ++i) {
    if (to_string(static_cast<GoalKind>(i)) == s) return static_cast<GoalKind>(i);
  }
  return std::nullopt;
}

enum class GoalStatus { Pending, Accepted, Rejected, Active, Achieved, Failed };

inline std::string_view to_string(GoalStatus s) {
  switch (s) {
    case GoalStatus::Pending: return "Pending";
    case GoalStatus::Accepted: return "Accepted";
    case GoalStatus::Rejected: return "Rejected";
    case GoalStatus::Active: return "Active";
    case GoalStatus::Achieved: return "Achieved";
    case GoalStatus::Failed: return "Failed";
  }
  return "?";
}

inline bool is_terminal(GoalStatus s) {
  return s == GoalStatus::Rejected || s == GoalStatus::Achieved || s == GoalStatus::Failed;
}

/// Pending->{Accepted,Rejected}; Accepted->Active; Active->{Achieved,Failed}.
inline bool legal_transition(GoalStatus from, GoalStatus to) {
  switch (from) {
    case GoalStatus::Pending: return to == GoalStatus::Accepted || to == GoalStatus::Rejected;
    case GoalStatus::Accepted: return to == GoalStatus::Active;
    case GoalStatus::Active: return to == GoalStatus::Achieved || to == GoalStatus::Failed;
    default: return false;
  }
}

struct Goal {
  std::string goal_id;
  AutonomyLevel required_level = AutonomyLevel::E4;
  GoalParams params = SuperviseParams{};
  GoalStatus status = GoalStatus::Pending;
  std::optional<std::string> failure_reason;
  std::string originator;
  std::string addressee;
  std::vector<GoalStatus> history{GoalStatus::Pending};

  GoalKind kind() const { return static_cast<GoalKind>(params.index()); }
};

class IllegalTransition : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// ---------------------------------------------------------------------------
// Messages

enum class MessageKind { GoalRequest, GoalStatus, Observation, Telecommand, Ack, Alert, Prompt, PromptResponse };

inline std::string_view to_string(MessageKind k) {
  switch (k) {
    case MessageKind::GoalRequest: return "GoalRequest";
    case MessageKind::GoalStatus: return "GoalStatus";
    case MessageKind::Observation: return "Observation";
    case MessageKind::Telecommand: return "Telecommand";
    case MessageKind::Ack: return "Ack";
    case MessageKind::Alert: return "Alert";
    case MessageKind::Prompt: return "Prompt";
    case MessageKind::PromptResponse: return "PromptResponse";
  }
  return "?";
}

struct MasMessage {
  MessageKind kind = MessageKind::Observation;
  std::string sender;
  std::string recipient;
  std::optional<std::string> goal_id;
  Json payload = Json::object();
  Tick sent_tick = 0;
  std::string msg_id;
};

// ---------------------------------------------------------------------------
// JSON forms (payload schemas used on the wire and in the event log)

inline Json vec_json(Vec2 v) { return Json::array({v.x, v.y}); }
inline Vec2 vec_from_json(const Json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

inline Json params_to_json(const GoalParams& p) {
  return std::visit(
      [](const auto& v) -> Json {
        using T = std::decay_t<decltype(v)>;
        Json j = Json::object();
        if constexpr (std::is_same_v<T, InspectPanelsParams>) {
          Json pts = Json::array();
          for (const auto& pt : v.points) {
            Json e;
            e["panel"] = pt.panel_id;
            if (pt.at) e["at"] = vec_json(*pt.at);
            pts.push_back(std::move(e));
          }
          j["points"] = std::move(pts);
        } else if constexpr (std::is_same_v<T, MapAndSampleParams>) {
          j["area"] = Json::array({v.area.x0, v.area.y0, v.area.x1, v.area.y1});
          j["sample_points"] = v.sample_points;
        } else if constexpr (std::is_same_v<T, StoreSampleParams>) {
          j["sample"] = v.sample_id;
          j["rendezvous"] = vec_json(v.rendezvous);
        } else if constexpr (std::is_same_v<T, ReturnToBaseParams>) {
          j["base"] = v.base_id;
        } else if constexpr (std::is_same_v<T, NavigateToParams>) {
          j["target"] = vec_json(v.target);
        } else if constexpr (std::is_same_v<T, CollectSampleParams>) {
          j["sample"] = v.sample_id;
        }
        return j;
      },
      p);
}

class GoalFormatError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline GoalParams params_from_json(GoalKind kind, const Json& j) {
  try {
    switch (kind) {
      case GoalKind::InspectPanels: {
        InspectPanelsParams p;
        for (const auto& e : j.at("points")) {
          InspectionPoint pt;
          if (e.is_string()) {
            pt.panel_id = e.get<std::string>();
          } else {
            pt.panel_id = e.at("panel").get<std::string>();
            if (e.contains("at")) pt.at = vec_from_json(e.at("at"));
          }
          p.points.push_back(std::move(pt));
        }
        return p;
      }
      case GoalKind::MapAndSample: {
        MapAndSampleParams p;
        const auto& a = j.at("area");
        p.area = {a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>(), a.at(3).get<double>()};
        if (j.contains("sample_points")) p.sample_points = j.at("sample_points").get<std::vector<std::string>>();
        return p;
      }
      case GoalKind::StoreSample:
        return StoreSampleParams{j.at("sample").get<std::string>(), vec_from_json(j.at("rendezvous"))};
      case GoalKind::ReturnToBase:
        return ReturnToBaseParams{j.value("base", std::string{})};
      case GoalKind::NavigateTo:
        return NavigateToParams{vec_from_json(j.at("target"))};
      case GoalKind::CollectSample:
        return CollectSampleParams{j.at("sample").get<std::string>()};
      case GoalKind::Supervise:
        return SuperviseParams{};
    }
  } catch (const nlohmann::json::exception& e) {
    throw GoalFormatError(std::string("params of ") + std::string(to_string(kind)) + ": " + e.what());
  }
  throw GoalFormatError("unknown goal kind");
}

inline Json goal_to_json(const Goal& g) {
  Json j;
  j["goal_id"] = g.goal_id;
  j["kind"] = to_string(g.kind());
  j["level"] = to_string(g.required_level);
  j["params"] = params_to_json(g.params);
  j["originator"] = g.originator;
  j["addressee"] = g.addressee;
  return j;
}

inline Goal goal_from_json(const Json& j) {
  Goal g;
  g.goal_id = j.at("goal_id").get<std::string>();
  const auto kind = goal_kind_from_string(j.at("kind").get<std::string>());
  if (!kind) throw GoalFormatError("unknown goal kind '" + j.at("kind").get<std::string>() + "'");
  const auto level = autonomy_level_from_string(j.value("level", std::string("E4")));
  if (!level) throw GoalFormatError("unknown autonomy level");
  g.required_level = *level;
  g.params = params_from_json(*kind, j.value("params", Json::object()));
  g.originator = j.value("originator", std::string{});
  g.addressee = j.value("addressee", std::string{});
  return g;
}

inline Json message_to_json(const MasMessage& m) {
  Json j;
  j["msg_id"] = m.msg_id;
  j["kind"] = to_string(m.kind);
  j["sender"] = m.sender;
  j["recipient"] = m.recipient;
  if (m.goal_id) j["goal_id"] = *m.goal_id;
  j["sent_tick"] = m.sent_tick;
  j["payload"] = m.payload;
  return j;
}

// ---------------------------------------------------------------------------
// Autonomy gate

enum class RejectReason { AutonomyLevelMismatch };

inline std::string_view to_string(RejectReason) { return "AutonomyLevelMismatch"; }

struct GateResult {
  bool accepted = true;
  bool bypassed = false;  // safety traffic (Alert/Prompt/PromptResponse)
  std::optional<RejectReason> reason;

  static GateResult accept(bool bypass = false) { return {true, bypass, std::nullopt}; }
  static GateResult reject() { return {false, false, RejectReason::AutonomyLevelMismatch}; }
};

/// E4 accepts only E4 goals and refuses raw telecommands; E1-E3 take
/// telecommands and refuse goals of another level. Safety traffic bypasses.
inline GateResult gate_message(AutonomyLevel agent_level, const MasMessage& m) {
  switch (m.kind) {
    case MessageKind::Alert:
    case MessageKind::Prompt:
    case MessageKind::PromptResponse:
      return GateResult::accept(true);
    case MessageKind::Ack:
    case MessageKind::Observation:
    case MessageKind::GoalStatus:
      return GateResult::accept();
    case MessageKind::Telecommand:
      return agent_level == AutonomyLevel::E4 ? GateResult::reject() : GateResult::accept();
    case MessageKind::GoalRequest: {
      const auto lvl = autonomy_level_from_string(m.payload.value("level", std::string("E4")));
      return lvl && *lvl == agent_level ? GateResult::accept() : GateResult::reject();
    }
  }
  return GateResult::reject();
}

/// Applies a transition and returns the GoalStatus message for the originator.
inline MasMessage update_goal_status(Goal& goal, GoalStatus next, std::optional<std::string> reason, Tick now,
                                     const std::string& sender) {
  if (!legal_transition(goal.status, next)) {
    throw IllegalTransition(goal.goal_id + ": " + std::string(to_string(goal.status)) + " -> " +
                            std::string(to_string(next)));
  }
  goal.status = next;
  goal.history.push_back(next);
  if (reason) goal.failure_reason = reason;
  MasMessage m;
  m.kind = MessageKind::GoalStatus;
  m.sender = sender;
  m.recipient = goal.originator;
  m.goal_id = goal.goal_id;
  m.sent_tick = now;
  m.payload["goal_id"] = goal.goal_id;
  m.payload["kind"] = to_string(goal.kind());
  m.payload["status"] = to_string(next);
  if (reason) m.payload["reason"] = *reason;
  return m;
}

// ---------------------------------------------------------------------------
// Reliable relay

class UnknownRecipient : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RelayObserver {
  std::function<void(const MasMessage&, netsim::SendOutcome, bool retransmit)> on_send;
  std::function<void(const MasMessage&)> on_duplicate;
};

/// At-least-once delivery (periodic retransmission until acked) with
/// receiver-side de-duplication by msg_id. Acks and raw telecommands are best
/// effort: a stale velocity command is worse than a lost one.
class Relay {
 public:
  static bool reliable(MessageKind k) { return k != MessageKind::Ack && k != MessageKind::Telecommand; }

  Relay(netsim::Network<MasMessage>& net, Tick retransmit_period)
      : net_(net), period_(retransmit_period == 0 ? 1 : retransmit_period) {}

  void register_endpoint(const std::string& id) { endpoints_.insert(id); }
  bool registered(const std::string& id) const { return endpoints_.count(id) != 0; }
  const std::set<std::string>& endpoints() const { return endpoints_; }

  void set_observer(RelayObserver obs) { observer_ = std::move(obs); }

  MasMessage make(MessageKind kind, std::string sender, std::string recipient, Json payload, Tick now,
                  std::optional<std::string> goal_id = std::nullopt) {
    MasMessage m;
    m.kind = kind;
    m.sender = std::move(sender);
    m.recipient = std::move(recipient);
    m.payload = std::move(payload);
    m.sent_tick = now;
    m.goal_id = std::move(goal_id);
    return m;
  }

  /// Assigns a msg_id if missing and hands the message to the network.
  std::string send(MasMessage m, Tick now) {
    if (!registered(m.recipient)) throw UnknownRecipient("unregistered recipient '" + m.recipient + "'");
    if (m.msg_id.empty()) m.msg_id = "m" + std::to_string(++counter_);
    m.sent_tick = now;
    if (reliable(m.kind)) pending_[m.msg_id] = Pending{m, now + period_};
    transmit(m, now, false);
    return m.msg_id;
  }

  void tick(Tick now) {
    for (auto& [id, p] : pending_) {
      if (p.next_tick > now) continue;
      transmit(p.msg, now, true);
      p.next_tick = now + period_;
    }
  }

  /// Handles transport-level traffic for a delivered message. Returns the
  /// message when it should reach the application, nullopt for Acks and
  /// duplicates.
  std::optional<MasMessage> receive(const MasMessage& m, Tick now) {
    if (m.kind == MessageKind::Ack) {
      pending_.erase(m.payload.value("ref", std::string{}));
      return std::nullopt;
    }
    if (reliable(m.kind)) {
      Json ack;
      ack["ref"] = m.msg_id;
      send(make(MessageKind::Ack, m.recipient, m.sender, std::move(ack), now, m.goal_id), now);
    }
    if (!seen_[m.recipient].insert(m.msg_id).second) {
      if (observer_.on_duplicate) observer_.on_duplicate(m);
      return std::nullopt;
    }
    return m;
  }

  std::size_t unacked() const { return pending_.size(); }

 private:
  struct Pending {
    MasMessage msg;
    Tick next_tick;
  };

  void transmit(const MasMessage& m, Tick now, bool retransmit) {
    const auto outcome = net_.send(m.sender, m.recipient, m, now);
    if (observer_.on_send) observer_.on_send(m, outcome, retransmit);
  }

  netsim::Network<MasMessage>& net_;
  Tick period_;
  std::set<std::string> endpoints_;
  std::map<std::string, Pending> pending_;
  std::map<std::string, std::set<std::string>> seen_;
  std::uint64_t counter_ = 0;
  RelayObserver observer_;
};

}  // namespace cisru::mas
