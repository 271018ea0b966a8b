#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "cisru/simulation.hpp"

namespace cisru {

struct ReplayReport {
  bool identical = false;
  std::size_t recorded = 0;  // lines in the log
  std::size_t replayed = 0;  // lines produced by the re-run
  std::size_t line = 0;      // 1-based line of the first divergence
  std::string expected;
  std::string actual;
  std::string message;

  std::string summary() const {
    if (identical) return "identical (" + std::to_string(recorded) + " records)";
    std::string s = "divergence at line " + std::to_string(line);
    if (!message.empty()) s += ": " + message;
    return s;
  }
};

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LogCorrupt("cannot open log '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

struct LogHeader {
  std::string scenario;
  std::uint64_t seed = 0;
  std::optional<Tick> ticks;
  Json config;
  std::string scenario_hash;
};

inline LogHeader parse_header(const std::string& line) {
  EventRecord r;
  try {
    r = parse_record(line);
  } catch (const LogCorrupt& e) {
    throw LogCorrupt(std::string("bad header: ") + e.what());
  }
  const Json& p = r.payload;
  if (r.tick != 0 || r.seq != 0 || r.type != "ScenarioLoaded" || !p.is_object()) {
    throw LogCorrupt("bad header: first record must be ScenarioLoaded at tick 0");
  }
  const bool ok = p.contains("scenario") && p["scenario"].is_string() && p.contains("seed") &&
                  p["seed"].is_number_unsigned() && p.contains("ticks") &&
                  (p["ticks"].is_null() || p["ticks"].is_number_unsigned()) && p.contains("config") &&
                  p["config"].is_object() && p.contains("scenario_hash") && p["scenario_hash"].is_string();
  if (!ok) throw LogCorrupt("bad header: missing or mistyped field");
  LogHeader h;
  h.scenario = p["scenario"].get<std::string>();
  h.seed = p["seed"].get<std::uint64_t>();
  if (!p["ticks"].is_null()) h.ticks = p["ticks"].get<Tick>();
  h.config = p["config"];
  h.scenario_hash = p["scenario_hash"].get<std::string>();
  return h;
}

/// Re-runs the scenario named in the header with the recorded seed and
/// config, feeding back recorded console commands, and compares every line.
inline ReplayReport replay_lines(const std::vector<std::string>& lines, const std::string& log_dir = {}) {
  if (lines.empty()) throw LogCorrupt("log is empty");
  const LogHeader h = parse_header(lines.front());

  namespace fs = std::filesystem;
  std::string path = h.scenario;
  if (!fs::exists(path) && !log_dir.empty() && fs::exists(fs::path(log_dir) / path)) {
    path = (fs::path(log_dir) / path).string();
  }
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    throw LogCorrupt(std::string("scenario named in header: ") + e.what());
  }

  ReplayReport rep;
  rep.recorded = lines.size();
  if (text_hash(text) != h.scenario_hash) {
    rep.line = 1;
    rep.message = "scenario file changed since the log was written";
    return rep;
  }

  // Console commands and, for served sessions, the length of the session.
  std::map<Tick, std::vector<Json>> console;
  std::optional<Tick> ticks = h.ticks;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    EventRecord r;
    try {
      r = parse_record(lines[i]);
    } catch (const LogCorrupt&) {
      continue;  // reported as a divergence by the comparison
    }
    if (r.type == "Command" && r.source == "console" && r.payload.contains("command")) {
      console[r.tick].push_back(r.payload["command"]);
    }
    if (!h.ticks && r.type == "SessionEnded" && r.payload.contains("ticks") && r.payload["ticks"].is_number_unsigned()) {
      ticks = r.payload["ticks"].get<Tick>();
    }
  }
  if (!ticks) throw LogCorrupt("served session log has no SessionEnded record");

  Scenario sc = load_scenario(text, h.config);
  sc.seed = h.seed;
  std::vector<std::string> out;
  SessionInfo info{h.scenario, text, h.ticks};
  Simulation sim(std::move(sc), info, [&](const EventRecord& r) { out.push_back(record_line(r)); }, false);
  while (sim.now() < *ticks) {
    if (auto it = console.find(sim.now()); it != console.end()) {
      for (const auto& c : it->second) sim.submit(c, "console");
    }
    sim.step();
  }
  if (!h.ticks) sim.end_session();

  rep.replayed = out.size();
  const std::size_t n = std::min(lines.size(), out.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (lines[i] == out[i]) continue;
    rep.line = i + 1;
    rep.expected = out[i];
    rep.actual = lines[i];
    rep.message = "record differs";
    return rep;
  }
  if (lines.size() != out.size()) {
    rep.line = n + 1;
    rep.message = lines.size() < out.size() ? "log ends early" : "log has extra records";
    if (n < out.size()) rep.expected = out[n];
    if (n < lines.size()) rep.actual = lines[n];
    return rep;
  }
  rep.identical = true;
  return rep;
}

inline ReplayReport replay_log(const std::string& log_path) {
  return replay_lines(read_lines(log_path), std::filesystem::path(log_path).parent_path().string());
}

}  // namespace cisru
