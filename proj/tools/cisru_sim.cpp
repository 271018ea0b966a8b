#include <csignal>
#include <fstream>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "cisru/replay.hpp"
#include "cisru/server.hpp"

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

cisru::Scenario load(const std::string& path, std::string& text) {
  text = cisru::read_file(path);
  return cisru::load_scenario(text, cisru::env_config_overrides());
}

int run(const std::string& scenario_path, std::optional<std::uint64_t> seed, cisru::Tick ticks,
        const std::string& log_path) {
  std::string text;
  cisru::Scenario sc = load(scenario_path, text);
  if (seed) sc.seed = *seed;
  std::ofstream log(log_path, std::ios::binary | std::ios::trunc);
  if (!log) {
    std::cerr << "error: cannot write log '" << log_path << "'\n";
    return 2;
  }
  cisru::Simulation sim(
      std::move(sc), {scenario_path, text, ticks},
      [&](const cisru::EventRecord& r) { log << cisru::record_line(r) << '\n'; }, false);
  cisru::run_for(sim, ticks);
  log.flush();

  std::size_t terminal = 0;
  const auto& ids = sim.scripted_goal_ids();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const cisru::mas::Goal* g = nullptr;
    for (std::size_t a = 0; a < sim.agent_count() && !g; ++a) g = sim.agent(a).goal(ids[i]);
    const char* status = g ? cisru::mas::to_string(g->status).data() : "NotReceived";
    std::cerr << (ids[i].empty() ? "(not issued)" : ids[i]) << ": " << status << '\n';
    terminal += g && cisru::mas::is_terminal(g->status);
  }
  std::cerr << "ran " << sim.now() << " ticks, " << sim.log().total() << " records, " << terminal << "/"
            << ids.size() << " scripted goals terminal\n";
  return sim.scripted_goals_terminal() ? 0 : 1;
}

int serve(const std::string& scenario_path, int port, double rate, std::optional<cisru::Tick> ticks,
          const std::string& log_path) {
  std::string text;
  cisru::Scenario sc = load(scenario_path, text);
  std::ofstream log;
  cisru::EventLog::Sink sink;
  if (!log_path.empty()) {
    log.open(log_path, std::ios::binary | std::ios::trunc);
    if (!log) {
      std::cerr << "error: cannot write log '" << log_path << "'\n";
      return 2;
    }
    sink = [&](const cisru::EventRecord& r) { log << cisru::record_line(r) << '\n' << std::flush; };
  }
  cisru::ServeOptions opts;
  opts.port = port;
  opts.rate = rate;
  opts.max_ticks = ticks;
  cisru::Server server(std::move(sc), {scenario_path, text, std::nullopt}, opts, sink);
  server.start();
  std::cout << "listening on 127.0.0.1:" << server.port() << std::endl;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_stop && !server.finished()) std::this_thread::sleep_for(std::chrono::milliseconds(50));
  server.stop();
  return 0;
}

int replay(const std::string& log_path) {
  const auto rep = cisru::replay_log(log_path);
  std::cout << rep.summary() << '\n';
  if (!rep.identical && !rep.expected.empty()) std::cout << "expected: " << rep.expected << '\n';
  if (!rep.identical && !rep.actual.empty()) std::cout << "actual:   " << rep.actual << '\n';
  return rep.identical ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deterministic multi-rover ISRU simulation"};
  app.require_subcommand(1);

  std::string scenario, log_path;
  std::uint64_t seed = 0;
  cisru::Tick ticks = 1000;
  int port = 0;
  double rate = 10.0;

  auto* run_cmd = app.add_subcommand("run", "Run a scenario headless and write its event log");
  run_cmd->add_option("--scenario", scenario, "Scenario JSON file")->required();
  auto* seed_opt = run_cmd->add_option("--seed", seed, "Seed (defaults to the scenario's)");
  run_cmd->add_option("--ticks", ticks, "Ticks to simulate")->capture_default_str();
  run_cmd->add_option("--log", log_path, "Event log output path")->required();

  auto* serve_cmd = app.add_subcommand("serve", "Run a scenario in real time for console clients");
  serve_cmd->add_option("--scenario", scenario, "Scenario JSON file")->required();
  serve_cmd->add_option("--port", port, "TCP port on 127.0.0.1 (0 picks one)")->required();
  serve_cmd->add_option("--rate", rate, "Ticks per second")->capture_default_str();
  auto* serve_ticks = serve_cmd->add_option("--ticks", ticks, "Stop after this many ticks");
  serve_cmd->add_option("--log", log_path, "Event log output path");

  auto* replay_cmd = app.add_subcommand("replay", "Re-run a logged session and compare");
  replay_cmd->add_option("--log", log_path, "Event log to verify")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) {
      return run(scenario, seed_opt->count() ? std::optional(seed) : std::nullopt, ticks, log_path);
    }
    if (serve_cmd->parsed()) {
      return serve(scenario, port, rate, serve_ticks->count() ? std::optional(ticks) : std::nullopt, log_path);
    }
    return replay(log_path);
  } catch (const cisru::ParseError& e) {
    std::cerr << "error: " << scenario << ": " << e.what() << '\n';
  } catch (const cisru::LogCorrupt& e) {
    std::cerr << "error: log corrupt: " << e.what() << '\n';
  } catch (const cisru::BindError& e) {
    std::cerr << "error: " << e.what() << '\n';
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
  }
  return 2;
}
