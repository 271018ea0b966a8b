#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cisru/percept.hpp"

namespace cisru::supervise {

using world::Tick;

struct SuperviseConfig {
  double t_ack = 30.0;  // seconds
  double dt = 1.0;
  Tick debounce = 50;   // ticks
};

enum class CaseState { Detected, Prompted, ClosedSafe, Escalated };

inline std::string_view to_string(CaseState s) {
  switch (s) {
    case CaseState::Detected: return "Detected";
    case CaseState::Prompted: return "Prompted";
    case CaseState::ClosedSafe: return "ClosedSafe";
    case CaseState::Escalated: return "Escalated";
  }
  return "?";
}

inline bool is_terminal(CaseState s) { return s == CaseState::ClosedSafe || s == CaseState::Escalated; }

struct EmergencyCase {
  std::string case_id;
  std::string astronaut_track;
  std::string astronaut_id;
  CaseState state = CaseState::Detected;
  Tick t_detect = 0;
  Tick t_prompt = 0;
  std::optional<Tick> t_closed;
};

enum class Recipient { Astronaut, MissionControl };

inline std::string_view to_string(Recipient r) { return r == Recipient::Astronaut ? "Astronaut" : "MissionControl"; }

struct Alert {
  Recipient recipient = Recipient::MissionControl;
  std::string reason;
  std::string ref;           // case id, violation key or error source
  std::string astronaut_id;  // addressee when recipient is Astronaut
  Tick tick = 0;
  std::string detail;
};

struct Prompt {
  std::string case_id;
  std::string astronaut_id;
  Tick tick = 0;
};

enum class PromptAnswer { Safe, Emergency };

inline std::optional<PromptAnswer> prompt_answer_from_string(std::string_view s) {
  if (s == "Safe") return PromptAnswer::Safe;
  if (s == "Emergency") return PromptAnswer::Emergency;
  return std::nullopt;
}

struct ErrorReport {
  std::string source;
  std::string code;
  std::string severity = "error";
  bool handled = false;
  std::string detail;
};

class DuplicateCase : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class StaleResponse : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnknownCase : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

using Assignments = std::map<std::string, std::string>;  // astronaut id -> asset id

/// Assignment check outcome for one interaction.
struct InteractionVerdict {
  percept::InteractionEvent event;
  enum Kind { Compliant, Unassigned, Violation, Debounced } kind;
};

class Supervisor {
 public:
  explicit Supervisor(SuperviseConfig cfg = {}) : cfg_(cfg) {
    if (!(cfg.dt > 0.0)) throw std::invalid_argument("dt must be positive");
  }

  const SuperviseConfig& config() const { return cfg_; }
  const std::vector<EmergencyCase>& cases() const { return cases_; }
  const std::vector<Alert>& alerts() const { return alerts_; }

  Tick deadline(const EmergencyCase& c) const {
    return c.t_prompt + static_cast<Tick>(std::ceil(cfg_.t_ack / cfg_.dt - 1e-9));
  }

  const EmergencyCase* open_case_for_track(const std::string& track) const {
    for (const auto& c : cases_) {
      if (c.astronaut_track == track && !is_terminal(c.state)) return &c;
    }
    return nullptr;
  }

  const EmergencyCase* open_case_for_astronaut(const std::string& astronaut) const {
    for (const auto& c : cases_) {
      if (c.astronaut_id == astronaut && !is_terminal(c.state)) return &c;
    }
    return nullptr;
  }

  const EmergencyCase& get(const std::string& case_id) const { return const_cast<Supervisor*>(this)->mut(case_id); }

  /// Opens a case and prompts the astronaut in the same tick.
  std::pair<EmergencyCase, Prompt> on_fall(const percept::FallEvent& fall, Tick now) {
    if (open_case_for_track(fall.track_id)) throw DuplicateCase("open case exists for track " + fall.track_id);
    EmergencyCase c;
    c.case_id = "e" + std::to_string(cases_.size() + 1);
    c.astronaut_track = fall.track_id;
    c.astronaut_id = fall.astronaut_id;
    c.t_detect = now;
    c.t_prompt = now;
    c.state = CaseState::Prompted;
    cases_.push_back(c);
    return {c, Prompt{c.case_id, c.astronaut_id, now}};
  }

  /// Safe closes the case quietly; Emergency escalates at once.
  std::vector<Alert> on_prompt_response(const std::string& case_id, PromptAnswer answer, Tick now) {
    EmergencyCase& c = mut(case_id);
    if (c.state != CaseState::Prompted) {
      throw StaleResponse(case_id + " is already " + std::string(to_string(c.state)));
    }
    if (answer == PromptAnswer::Safe) {
      c.state = CaseState::ClosedSafe;
      c.t_closed = now;
      return {};
    }
    return escalate(c, now, "AstronautReportedEmergency");
  }

  std::vector<Alert> on_timeout(const std::string& case_id, Tick now) {
    EmergencyCase& c = mut(case_id);
    if (c.state != CaseState::Prompted || now < deadline(c)) return {};
    return escalate(c, now, "NoPromptResponse");
  }

  /// Runs the timeout check for every open case, in case order.
  std::vector<Alert> check_timeouts(Tick now) {
    std::vector<Alert> out;
    for (auto& c : cases_) {
      auto a = on_timeout(c.case_id, now);
      out.insert(out.end(), a.begin(), a.end());
    }
    return out;
  }

  /// A violation alerts only when the same (astronaut, asset) pair was not
  /// seen violating within the last `debounce` ticks, so one sustained
  /// episode yields one pair of alerts.
  std::vector<Alert> check_assignments(const std::vector<percept::InteractionEvent>& events,
                                       const Assignments& assignments, Tick now,
                                       std::vector<InteractionVerdict>* verdicts = nullptr) {
    std::vector<Alert> out;
    for (const auto& ev : events) {
      auto it = assignments.find(ev.astronaut_id);
      InteractionVerdict::Kind kind;
      if (it == assignments.end()) {
        kind = InteractionVerdict::Unassigned;
      } else if (it->second == ev.asset_id) {
        kind = InteractionVerdict::Compliant;
      } else {
        const auto key = std::make_pair(ev.astronaut_id, ev.asset_id);
        auto last = last_violation_.find(key);
        const bool fresh = last == last_violation_.end() || now - last->second > cfg_.debounce;
        last_violation_[key] = now;
        kind = fresh ? InteractionVerdict::Violation : InteractionVerdict::Debounced;
        if (fresh) {
          const std::string ref = "assign:" + ev.astronaut_id + ":" + ev.asset_id + "@" + std::to_string(now);
          const std::string detail = ev.astronaut_id + " assigned " + it->second + " but working on " + ev.asset_id;
          push(out, Alert{Recipient::Astronaut, "AssignmentViolation", ref, ev.astronaut_id, now, detail});
          push(out, Alert{Recipient::MissionControl, "AssignmentViolation", ref, ev.astronaut_id, now, detail});
        }
      }
      if (verdicts) verdicts->push_back({ev, kind});
    }
    return out;
  }

  /// Unhandled errors go to Mission Control, once per (source, code) within
  /// the debounce window.
  std::optional<Alert> on_error(const ErrorReport& r, Tick now) {
    if (r.handled) return std::nullopt;
    const auto key = std::make_pair(r.source, r.code);
    auto last = last_error_.find(key);
    const bool fresh = last == last_error_.end() || now - last->second > cfg_.debounce;
    last_error_[key] = now;
    if (!fresh) return std::nullopt;
    std::vector<Alert> out;
    push(out, Alert{Recipient::MissionControl, r.code, "error:" + r.source + ":" + r.code + "@" + std::to_string(now),
                    {}, now, r.detail});
    if (out.empty()) return std::nullopt;
    return out.front();
  }

 private:
  EmergencyCase& mut(const std::string& case_id) {
    for (auto& c : cases_) {
      if (c.case_id == case_id) return c;
    }
    throw UnknownCase("unknown case '" + case_id + "'");
  }

  std::vector<Alert> escalate(EmergencyCase& c, Tick now, const std::string& reason) {
    c.state = CaseState::Escalated;
    c.t_closed = now;
    std::vector<Alert> out;
    push(out, Alert{Recipient::MissionControl, reason, c.case_id, c.astronaut_id, now, "fall of " + c.astronaut_id});
    return out;
  }

  void push(std::vector<Alert>& out, Alert a) {
    if (!sent_.insert({a.ref, a.recipient}).second) return;
    alerts_.push_back(a);
    out.push_back(std::move(a));
  }

  SuperviseConfig cfg_;
  std::vector<EmergencyCase> cases_;
  std::vector<Alert> alerts_;
  std::set<std::pair<std::string, Recipient>> sent_;
  std::map<std::pair<std::string, std::string>, Tick> last_violation_;
  std::map<std::pair<std::string, std::string>, Tick> last_error_;
};

}  // namespace cisru::supervise
