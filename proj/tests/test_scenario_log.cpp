#include <gtest/gtest.h>

#include "cisru/event_log.hpp"
#include "cisru/scenario.hpp"
#include "sim_harness.hpp"

using namespace cisru;

namespace {

const char* kMinimal = R"({
  "name": "tiny",
  "seed": 3,
  "grid": {"resolution": 1.0, "rows": ["......", "......", "......"]},
  "entities": [
    {"id": "r", "kind": "Rover", "pose": [1.5, 1.5, 0.0], "radius": 0.4, "role": "Leader", "level": "E4"},
    {"id": "a", "kind": "Astronaut", "pose": [4.5, 1.5, 0.0], "radius": 0.3, "posture": "Upright"}
  ]
})";

std::string with(const std::string& needle, const std::string& replacement) {
  std::string s = kMinimal;
  const auto at = s.find(needle);
  EXPECT_NE(at, std::string::npos) << needle;
  return s.replace(at, needle.size(), replacement);
}

ParseError parse_error(const std::string& text) {
  try {
    load_scenario(text);
  } catch (const ParseError& e) {
    return e;
  }
  ADD_FAILURE() << "no ParseError";
  return ParseError("", 0, "");
}

}  // namespace

TEST(Scenario, LoadsMinimalDocument) {
  const Scenario sc = load_scenario(kMinimal);
  EXPECT_EQ(sc.name, "tiny");
  EXPECT_EQ(sc.seed, 3u);
  ASSERT_EQ(sc.agents.size(), 1u);
  EXPECT_EQ(sc.agents[0].id, "r");
  EXPECT_EQ(sc.world.terrain().width(), 6);
  EXPECT_EQ(sc.world.get("a").posture, world::Posture::Upright);
}

TEST(Scenario, ErrorNamesLineAndField) {
  const auto e = parse_error(with(R"("radius": 0.3, "posture": "Upright")", R"("radius": 0.3, "posture": "Sideways")"));
  EXPECT_EQ(e.line(), 7u);
  EXPECT_EQ(e.field(), "/entities/1/posture");
  EXPECT_NE(std::string(e.what()).find("line 7"), std::string::npos);
}

TEST(Scenario, RejectsBadDocuments) {
  EXPECT_EQ(parse_error(with(R"("name": "tiny",)", R"("nmae": "tiny",)")).line(), 2u);
  EXPECT_EQ(parse_error(with(R"("seed": 3,)", R"("seed": 3,,)")).line(), 3u);
  EXPECT_EQ(parse_error(with(R"(["......", "......", "......"])", R"(["......", "..?...", "......"])")).field(),
            "/grid/rows/1");
  EXPECT_EQ(parse_error(with(R"("kind": "Rover")", R"("kind": "Tank")")).field(), "/entities/0/kind");
  const auto dup = parse_error(with(R"("id": "a")", R"("id": "r")"));
  EXPECT_EQ(dup.field(), "/entities/1");
}

TEST(Scenario, ConfigOverridesAndUnknownKeys) {
  const std::string doc = with(R"("seed": 3,)", R"("seed": 3, "config": {"percept": {"range": 9.5}},)");
  EXPECT_DOUBLE_EQ(load_scenario(doc).config.percept.range, 9.5);
  EXPECT_DOUBLE_EQ(load_scenario(doc, Json{{"percept", {{"range", 4.0}}}}).config.percept.range, 4.0);
  const auto e = parse_error(with(R"("seed": 3,)", R"("seed": 3, "config": {"percept": {"rnage": 1}},)"));
  EXPECT_EQ(e.field(), "/config");
  EXPECT_THROW(load_scenario(kMinimal, Json{{"dt", -1.0}}), ParseError);
}

TEST(Config, RoundTripsThroughJson) {
  SimConfig c;
  apply_config(c, Json{{"dt", 0.5}, {"exec", {{"max_retries", 7}}}, {"manip", {{"mount_offset", {0.1, 0.2, 0.3}}}}});
  EXPECT_DOUBLE_EQ(c.nav.dt, 0.5);
  EXPECT_DOUBLE_EQ(c.supervise.dt, 0.5);
  SimConfig d;
  apply_config(d, config_to_json(c));
  EXPECT_EQ(config_to_json(d), config_to_json(c));
  EXPECT_THROW(apply_config(d, Json{{"exec", {{"max_retries", -2}}}}), ConfigError);
  EXPECT_THROW(apply_config(d, Json{{"drop_probability", 2.0}}), ConfigError);
  EXPECT_THROW(apply_config(d, Json{{"bogus", 1}}), ConfigError);
}

TEST(Scenario, AllFixturesLoad) {
  for (const char* name : {"uc1_inspect_panels.json", "uc2_map_and_sample.json", "emergency_no_response.json",
                           "emergency_safe.json", "assignment_violation.json", "assignment_ok.json",
                           "replan_unreachable.json", "lossy_goals.json", "autonomy_gate.json"}) {
    EXPECT_NO_THROW(load_scenario(read_file(harness::scenario_path(name)))) << name;
  }
}

TEST(EventLog, SeqRestartsPerTickAndTickIsMonotone) {
  std::vector<std::string> lines;
  EventLog log([&](const EventRecord& r) { lines.push_back(record_line(r)); });
  log.append(0, "a", "X");
  log.append(0, "a", "Y", {{"k", 1}});
  log.append(3, "b", "X");
  EXPECT_EQ(log.records()[1].seq, 1u);
  EXPECT_EQ(log.records()[2].seq, 0u);
  EXPECT_EQ(log.count("X"), 2u);
  EXPECT_THROW(log.append(2, "a", "Z"), std::logic_error);
  EXPECT_EQ(lines[1], R"({"tick":0,"seq":1,"source":"a","type":"Y","payload":{"k":1}})");
}

TEST(EventLog, ParseRecordStrict) {
  const EventRecord r = parse_record(R"({"tick":4,"seq":2,"source":"s","type":"T","payload":{"x":[1,2]}})");
  EXPECT_EQ(r.tick, 4u);
  EXPECT_EQ(record_line(r), R"({"tick":4,"seq":2,"source":"s","type":"T","payload":{"x":[1,2]}})");
  EXPECT_THROW(parse_record("not json"), LogCorrupt);
  EXPECT_THROW(parse_record(R"({"seq":2,"tick":4,"source":"s","type":"T","payload":{}})"), LogCorrupt);
  EXPECT_THROW(parse_record(R"({"tick":-1,"seq":2,"source":"s","type":"T","payload":{}})"), LogCorrupt);
  EXPECT_THROW(parse_record(R"({"tick":4,"seq":2,"source":"s","type":"T"})"), LogCorrupt);
}

TEST(EventLog, NonRetainingStillCounts) {
  int seen = 0;
  EventLog log([&](const EventRecord&) { ++seen; }, false);
  for (int i = 0; i < 5; ++i) log.append(i, "a", "X");
  EXPECT_EQ(seen, 5);
  EXPECT_EQ(log.total(), 5u);
  EXPECT_EQ(log.size(), 0u);
}
