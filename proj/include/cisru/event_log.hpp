#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cisru/grid_io.hpp"
#include "cisru/world.hpp"

namespace cisru {

using world::Tick;

struct EventRecord {
  Tick tick = 0;
  std::uint64_t seq = 0;
  std::string source;
  std::string type;
  Json payload = Json::object();

  bool operator==(const EventRecord&) const = default;
};

class LogCorrupt : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline Json record_to_json(const EventRecord& r) {
  Json j;
  j["tick"] = r.tick;
  j["seq"] = r.seq;
  j["source"] = r.source;
  j["type"] = r.type;
  j["payload"] = r.payload;
  return j;
}

/// One log line without the trailing newline.
inline std::string record_line(const EventRecord& r) { return record_to_json(r).dump(); }

inline EventRecord parse_record(const std::string& line) {
  Json j;
  try {
    j = Json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw LogCorrupt(std::string("record is not JSON: ") + e.what());
  }
  static const char* kFields[] = {"tick", "seq", "source", "type", "payload"};
  if (!j.is_object() || j.size() != 5) throw LogCorrupt("record must have exactly tick, seq, source, type, payload");
  std::size_t i = 0;
  for (const auto& [key, _] : j.items()) {
    if (key != kFields[i++]) throw LogCorrupt("record fields out of order at '" + key + "'");
  }
  if (!j["tick"].is_number_unsigned() || !j["seq"].is_number_unsigned() || !j["source"].is_string() ||
      !j["type"].is_string()) {
    throw LogCorrupt("record field has the wrong type");
  }
  return {j["tick"].get<Tick>(), j["seq"].get<std::uint64_t>(), j["source"].get<std::string>(),
          j["type"].get<std::string>(), j["payload"]};
}

/// Append-only record sequence. seq restarts at 0 on every new tick, so
/// (tick, seq) is strictly increasing.
class EventLog {
 public:
  using Sink = std::function<void(const EventRecord&)>;

  explicit EventLog(Sink sink = {}, bool retain = true) : sink_(std::move(sink)), retain_(retain) {}

  void append(Tick tick, std::string source, std::string type, Json payload = Json::object()) {
    if (appended_ && tick < last_.tick) {
      throw std::logic_error("event log tick went backwards: " + std::to_string(tick));
    }
    const std::uint64_t seq = appended_ && last_.tick == tick ? last_.seq + 1 : 0;
    last_ = {tick, seq, std::move(source), std::move(type), std::move(payload)};
    appended_ = true;
    ++total_;
    if (sink_) sink_(last_);
    if (retain_) records_.push_back(last_);
  }

  /// Records appended so far, including any not retained.
  std::size_t total() const { return total_; }

  const std::vector<EventRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }

  std::size_t count(const std::string& type) const {
    std::size_t n = 0;
    for (const auto& r : records_) n += r.type == type;
    return n;
  }

  std::vector<const EventRecord*> of_type(const std::string& type) const {
    std::vector<const EventRecord*> out;
    for (const auto& r : records_) {
      if (r.type == type) out.push_back(&r);
    }
    return out;
  }

 private:
  Sink sink_;
  bool retain_;
  bool appended_ = false;
  EventRecord last_;
  std::size_t total_ = 0;
  std::vector<EventRecord> records_;
};

}  // namespace cisru
