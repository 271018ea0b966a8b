#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <sys/time.h>
#include <unistd.h>

#include "cisru/replay.hpp"
#include "cisru/server.hpp"
#include "cisru/wire.hpp"
#include "sim_harness.hpp"

using namespace cisru;
namespace fs = std::filesystem;

TEST(Wire, EncodeDecodeAcrossChunks) {
  const std::string a = wire::encode_frame(Json{{"type", "Hello"}});
  const std::string b = wire::encode_frame(std::string(70000, 'x'));
  EXPECT_EQ(static_cast<unsigned char>(a[3]), a.size() - 4);
  EXPECT_EQ(static_cast<unsigned char>(b[1]), 0x01);  // 70000 = 0x011170
  const std::string stream = a + b;
  wire::FrameDecoder dec;
  std::vector<std::string> got;
  for (std::size_t i = 0; i < stream.size(); i += 7) {
    dec.feed(stream.substr(i, 7));
    while (auto f = dec.next()) got.push_back(*f);
  }
  ASSERT_EQ(got.size(), 2u);
  EXPECT_EQ(Json::parse(got[0])["type"], "Hello");
  EXPECT_EQ(got[1].size(), 70000u);
  EXPECT_EQ(dec.buffered(), 0u);
}

TEST(Wire, OversizedLengthRejected) {
  wire::FrameDecoder dec;
  dec.feed(std::string("\x7f\xff\xff\xff", 4));
  EXPECT_THROW(dec.next(), wire::FrameError);
  EXPECT_EQ(wire::encode_frame(std::string()).size(), 4u);
}

TEST(Wire, FrameShapes) {
  EXPECT_EQ(wire::hello("s", 3)["protocol"], 1);
  EXPECT_EQ(wire::ack_frame(5, {{"x", 1}})["id"], 5);
  const Json e = wire::error_frame("c1", "BadCommand", "nope");
  EXPECT_EQ(e["type"], "Error");
  EXPECT_EQ(e["code"], "BadCommand");
  const Json ev = wire::event_frame({1, 2, "src", "T", {{"k", 1}}});
  EXPECT_EQ(ev["record"]["seq"], 2);
}

namespace {

class Client {
 public:
  explicit Client(int port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in a{};
    a.sin_family = AF_INET;
    a.sin_port = htons(static_cast<std::uint16_t>(port));
    a.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    timeval tv{5, 0};
    ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
    connected_ = ::connect(fd_, reinterpret_cast<sockaddr*>(&a), sizeof a) == 0;
  }
  ~Client() { ::close(fd_); }

  bool connected() const { return connected_; }
  void send_raw(const std::string& body) { wire::write_all(fd_, wire::encode_frame(body)); }
  void send(const Json& j) { send_raw(j.dump()); }

  std::optional<Json> next() {
    auto body = wire::read_frame(fd_);
    if (!body) return std::nullopt;
    return Json::parse(*body);
  }

  // Skips Event and Snapshot frames until one of the wanted type arrives.
  std::optional<Json> next_of(const std::string& type) {
    for (int i = 0; i < 100000; ++i) {
      auto f = next();
      if (!f) return std::nullopt;
      if ((*f)["type"] == type) return f;
    }
    return std::nullopt;
  }

 private:
  int fd_ = -1;
  bool connected_ = false;
};

std::unique_ptr<Server> start_server(const std::string& fixture, ServeOptions opts, EventLog::Sink sink = {}) {
  const std::string text = read_file(harness::scenario_path(fixture));
  auto srv = std::make_unique<Server>(load_scenario(text), SessionInfo{fixture, text, std::nullopt}, opts, sink);
  srv->start();
  return srv;
}

}  // namespace

TEST(Server, HelloSnapshotThenEvents) {
  ServeOptions o;
  o.rate = 200.0;
  auto srv = start_server("uc1_inspect_panels.json", o);
  ASSERT_GT(srv->port(), 0);
  Client c(srv->port());
  ASSERT_TRUE(c.connected());
  const auto hello = c.next();
  ASSERT_TRUE(hello);
  EXPECT_EQ((*hello)["type"], "Hello");
  EXPECT_EQ((*hello)["protocol"], 1);
  EXPECT_EQ((*hello)["scenario"], "uc1-inspect-panels");
  const auto snap = c.next();
  ASSERT_TRUE(snap);
  EXPECT_EQ((*snap)["type"], "Snapshot");
  EXPECT_EQ((*snap)["snapshot"]["tick"], (*hello)["tick"]);
  const auto ev = c.next_of("Event");
  ASSERT_TRUE(ev);
  EXPECT_GE((*ev)["record"]["tick"].get<Tick>(), (*hello)["tick"].get<Tick>());
  srv->stop();
}

TEST(Server, MalformedFrameKeepsConnection) {
  ServeOptions o;
  o.rate = 100.0;
  auto srv = start_server("autonomy_gate.json", o);
  Client c(srv->port());
  ASSERT_TRUE(c.connected());
  c.send_raw("{not json");
  auto err = c.next_of("Error");
  ASSERT_TRUE(err);
  EXPECT_EQ((*err)["code"], "MalformedFrame");
  c.send({{"type", "Hello"}, {"id", 9}});
  err = c.next_of("Error");
  ASSERT_TRUE(err);
  EXPECT_EQ((*err)["code"], "UnexpectedFrame");
  EXPECT_EQ((*err)["id"], 9);

  c.send({{"type", "Command"}, {"id", "c1"}, {"command", {{"name", "Telecommand"}, {"agent", "r1"}, {"v", 0.1}}}});
  const auto ack = c.next_of("Ack");
  ASSERT_TRUE(ack);
  EXPECT_EQ((*ack)["id"], "c1");
  EXPECT_TRUE((*ack)["result"].contains("msg_id"));

  c.send({{"type", "Command"}, {"id", "c2"}, {"command", {{"name", "Telecommand"}, {"agent", "r4"}}}});
  err = c.next_of("Error");
  ASSERT_TRUE(err);
  EXPECT_EQ((*err)["id"], "c2");
  EXPECT_EQ((*err)["code"], "AutonomyLevelMismatch");
  srv->stop();
}

TEST(Server, PortInUseIsBindError) {
  auto a = start_server("autonomy_gate.json", {});
  ServeOptions o;
  o.port = a->port();
  const std::string text = read_file(harness::scenario_path("autonomy_gate.json"));
  Server b(load_scenario(text), SessionInfo{"autonomy_gate.json", text, std::nullopt}, o);
  EXPECT_THROW(b.start(), BindError);
}

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("cisru_test_" + name + "_" + std::to_string(::getpid()));
  fs::create_directories(d);
  return d;
}

// Writes a headless run log that names the fixture by absolute path.
fs::path write_run_log(const fs::path& dir, const std::string& fixture, Tick ticks) {
  const std::string path = harness::scenario_path(fixture);
  const std::string text = read_file(path);
  const fs::path log = dir / (fixture + ".log");
  std::ofstream out(log, std::ios::binary);
  Simulation sim(load_scenario(text), {path, text, ticks},
                 [&](const EventRecord& r) { out << record_line(r) << '\n'; }, false);
  run_for(sim, ticks);
  return log;
}

}  // namespace

TEST(Replay, IdenticalRunVerifies) {
  const auto dir = temp_dir("replay_ok");
  const auto log = write_run_log(dir, "emergency_safe.json", 150);
  const auto rep = replay_log(log.string());
  EXPECT_TRUE(rep.identical) << rep.summary();
  EXPECT_EQ(rep.recorded, rep.replayed);
  fs::remove_all(dir);
}

TEST(Replay, EditedRecordReportsFirstDivergence) {
  const auto dir = temp_dir("replay_edit");
  const auto log = write_run_log(dir, "uc1_inspect_panels.json", 100);
  auto lines = read_lines(log.string());
  ASSERT_GT(lines.size(), 10u);
  const std::size_t victim = 7;
  const auto pos = lines[victim].find("\"tick\":");
  lines[victim][pos + 7] = lines[victim][pos + 7] == '9' ? '8' : '9';
  const auto rep = replay_lines(lines);
  EXPECT_FALSE(rep.identical);
  EXPECT_EQ(rep.line, victim + 1);
  EXPECT_NE(rep.summary().find("line 8"), std::string::npos);
  lines.pop_back();
  EXPECT_EQ(replay_lines(lines).line, victim + 1);
  fs::remove_all(dir);
}

TEST(Replay, TruncatedLogEndsEarly) {
  const auto dir = temp_dir("replay_trunc");
  const auto log = write_run_log(dir, "autonomy_gate.json", 30);
  auto lines = read_lines(log.string());
  lines.resize(lines.size() - 3);
  const auto rep = replay_lines(lines);
  EXPECT_FALSE(rep.identical);
  EXPECT_EQ(rep.line, lines.size() + 1);
  EXPECT_EQ(rep.message, "log ends early");
  fs::remove_all(dir);
}

TEST(Replay, CorruptHeader) {
  EXPECT_THROW(replay_lines({}), LogCorrupt);
  EXPECT_THROW(replay_lines({R"({"tick":0,"seq":0,"source":"gateway","type":"ScenarioLoad)"}), LogCorrupt);
  EXPECT_THROW(replay_lines({R"({"tick":0,"seq":0,"source":"gateway","type":"Other","payload":{}})"}), LogCorrupt);
  EXPECT_THROW(replay_log("/nonexistent/file.log"), LogCorrupt);
}

TEST(Replay, ChangedScenarioIsDivergenceAtHeader) {
  const auto dir = temp_dir("replay_hash");
  const fs::path copy = dir / "scenario.json";
  fs::copy_file(harness::scenario_path("autonomy_gate.json"), copy);
  const std::string text = read_file(copy.string());
  {
    std::ofstream out(dir / "run.log", std::ios::binary);
    Simulation sim(load_scenario(text), {copy.string(), text, Tick{20}},
                   [&](const EventRecord& r) { out << record_line(r) << '\n'; }, false);
    run_for(sim, 20);
  }
  EXPECT_TRUE(replay_log((dir / "run.log").string()).identical);
  std::ofstream(copy, std::ios::app) << "\n";
  const auto rep = replay_log((dir / "run.log").string());
  EXPECT_FALSE(rep.identical);
  EXPECT_EQ(rep.line, 1u);
  fs::remove_all(dir);
}

TEST(Replay, ServedSessionWithConsoleCommands) {
  const auto dir = temp_dir("replay_serve");
  const std::string path = harness::scenario_path("autonomy_gate.json");
  const fs::path log = dir / "serve.log";
  {
    std::ofstream out(log, std::ios::binary);
    const std::string text = read_file(path);
    ServeOptions o;
    o.rate = 100.0;
    o.max_ticks = 40;
    Server srv(load_scenario(text), SessionInfo{path, text, std::nullopt}, o,
               [&](const EventRecord& r) { out << record_line(r) << '\n'; });
    srv.start();
    {
      Client c(srv.port());
      ASSERT_TRUE(c.connected());
      c.send({{"type", "Command"}, {"id", 1}, {"command", {{"name", "SetAutonomyLevel"}, {"agent", "r4"}, {"level", "E1"}}}});
      ASSERT_TRUE(c.next_of("Ack"));
      c.send({{"type", "Command"}, {"id", 2}, {"command", {{"name", "Telecommand"}, {"agent", "r4"}, {"v", 0.3}, {"duration", 4}}}});
      ASSERT_TRUE(c.next_of("Ack"));
    }
    while (!srv.finished()) std::this_thread::sleep_for(std::chrono::milliseconds(10));
    srv.stop();
  }
  const auto lines = read_lines(log.string());
  EXPECT_NE(lines.back().find("SessionEnded"), std::string::npos);
  const auto rep = replay_log(log.string());
  EXPECT_TRUE(rep.identical) << rep.summary() << "\n" << rep.expected << "\n" << rep.actual;
  fs::remove_all(dir);
}
