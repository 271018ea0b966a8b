#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <list>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include "cisru/simulation.hpp"
#include "cisru/wire.hpp"

namespace cisru {

class BindError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ServeOptions {
  int port = 0;               // 0 picks a free port
  double rate = 10.0;         // ticks per second
  Tick snapshot_every = 10;   // ticks between periodic Snapshot frames
  std::optional<Tick> max_ticks;
};

/// Runs the kernel in real time on its own thread and speaks the wire
/// protocol to any number of clients. Connection handlers never touch the
/// simulation: they read cached snapshot text and push commands onto a queue
/// the kernel drains at the tick boundary.
class Server {
 public:
  Server(Scenario sc, SessionInfo info, ServeOptions opts, EventLog::Sink log_sink = {})
      : opts_(opts), scenario_name_(sc.name), log_sink_(std::move(log_sink)) {
    if (!(opts_.rate > 0.0)) throw std::invalid_argument("rate must be positive");
    info.ticks.reset();
    sim_ = std::make_unique<Simulation>(
        std::move(sc), info, [this](const EventRecord& r) { on_record(r); }, false);
  }

  ~Server() { stop(); }

  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds to 127.0.0.1 and starts the kernel and accept threads.
  void start() {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw BindError(std::string("socket: ") + std::strerror(errno));
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(static_cast<std::uint16_t>(opts_.port));
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0 || ::listen(listen_fd_, 16) < 0) {
      const std::string why = std::strerror(errno);
      ::close(listen_fd_);
      listen_fd_ = -1;
      throw BindError("cannot bind port " + std::to_string(opts_.port) + ": " + why);
    }
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    {
      std::lock_guard lk(state_mu_);
      snapshot_text_ = std::make_shared<const std::string>(wire::encode_frame(wire::snapshot_frame(sim_->snapshot())));
      hello_tick_ = sim_->now();
    }
    running_ = true;
    kernel_ = std::thread([this] { kernel_loop(); });
    acceptor_ = std::thread([this] { accept_loop(); });
  }

  /// Stops every thread and closes the session with a SessionEnded record.
  void stop() {
    if (!running_.exchange(false)) return;
    if (listen_fd_ >= 0) {
      ::shutdown(listen_fd_, SHUT_RDWR);
      ::close(listen_fd_);
      listen_fd_ = -1;
    }
    cv_.notify_all();
    if (kernel_.joinable()) kernel_.join();
    if (acceptor_.joinable()) acceptor_.join();
    std::vector<std::thread> readers;
    {
      std::lock_guard lk(clients_mu_);
      for (auto& c : clients_) {
        ::shutdown(c->fd, SHUT_RDWR);
        c->open = false;
      }
      for (auto& c : clients_) readers.push_back(std::move(c->reader));
    }
    for (auto& t : readers) {
      if (t.joinable()) t.join();
    }
    {
      std::lock_guard lk(clients_mu_);
      for (auto& c : clients_) ::close(c->fd);
      clients_.clear();
    }
    std::lock_guard lk(state_mu_);
    sim_->end_session();
  }

  int port() const { return port_; }
  bool running() const { return running_; }

  /// True once the kernel reached max_ticks.
  bool finished() const { return finished_; }

  Tick tick() const {
    std::lock_guard lk(state_mu_);
    return sim_->now();
  }

 private:
  struct Client {
    int fd = -1;
    std::uint64_t id = 0;
    std::mutex write_mu;
    std::atomic<bool> open{true};
    std::thread reader;

    void send(const std::string& frame) {
      std::lock_guard lk(write_mu);
      if (open && !wire::write_all(fd, frame)) open = false;
    }
  };

  struct Inbound {
    std::shared_ptr<Client> client;
    Json id;
    Json command;
  };

  void on_record(const EventRecord& r) {
    if (log_sink_) log_sink_(r);
    pending_events_.push_back(wire::encode_frame(wire::event_frame(r)));
  }

  void broadcast(const std::string& frame) {
    std::lock_guard lk(clients_mu_);
    for (auto& c : clients_) c->send(frame);
  }

  void kernel_loop() {
    using clock = std::chrono::steady_clock;
    const auto period = std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(1.0 / opts_.rate));
    auto next = clock::now() + period;
    while (running_) {
      {
        std::unique_lock lk(inbox_mu_);
        cv_.wait_until(lk, next, [this] { return !running_; });
        if (!running_) break;
      }
      next += period;
      if (opts_.max_ticks && tick() >= *opts_.max_ticks) {
        finished_ = true;
        continue;
      }
      std::deque<Inbound> inbox;
      {
        std::lock_guard lk(inbox_mu_);
        inbox.swap(inbox_);
      }
      std::lock_guard state(state_mu_);
      for (auto& in : inbox) {
        auto client = in.client;
        auto id = in.id;
        sim_->submit(in.command, "console", [client, id](const CommandReply& r) {
          client->send(wire::encode_frame(r.ok ? wire::ack_frame(id, r.result)
                                               : wire::error_frame(id, r.code, r.message)));
        });
      }
      sim_->step();
      auto events = std::move(pending_events_);
      pending_events_.clear();
      for (const auto& e : events) broadcast(e);
      snapshot_text_ = std::make_shared<const std::string>(wire::encode_frame(wire::snapshot_frame(sim_->snapshot())));
      hello_tick_ = sim_->now();
      if (opts_.snapshot_every > 0 && sim_->now() % opts_.snapshot_every == 0) broadcast(*snapshot_text_);
    }
  }

  void accept_loop() {
    while (running_) {
      const int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) {
        if (errno == EINTR) continue;
        return;
      }
      auto c = std::make_shared<Client>();
      c->fd = fd;
      {
        // Holding the state lock keeps events from slipping between the
        // snapshot and the first Event frame.
        std::lock_guard state(state_mu_);
        c->id = ++client_counter_;
        c->send(wire::encode_frame(wire::hello(scenario_name_, hello_tick_)));
        c->send(*snapshot_text_);
        std::lock_guard lk(clients_mu_);
        c->reader = std::thread([this, c] { read_loop(c); });
        clients_.push_back(c);
      }
    }
  }

  void read_loop(std::shared_ptr<Client> c) {
    while (running_ && c->open) {
      std::optional<std::string> body;
      try {
        body = wire::read_frame(c->fd);
      } catch (const wire::FrameError& e) {
        c->send(wire::encode_frame(wire::error_frame(nullptr, "BadFrame", e.what())));
        c->open = false;
        break;
      }
      if (!body) break;
      Json j;
      try {
        j = Json::parse(*body);
      } catch (const nlohmann::json::exception& e) {
        c->send(wire::encode_frame(wire::error_frame(nullptr, "MalformedFrame", e.what())));
        continue;
      }
      const Json id = j.is_object() && j.contains("id") ? j.at("id") : Json();
      if (!j.is_object() || j.value("type", std::string{}) != "Command") {
        c->send(wire::encode_frame(wire::error_frame(id, "UnexpectedFrame", "clients may only send Command frames")));
        continue;
      }
      if (!j.contains("command")) {
        c->send(wire::encode_frame(wire::error_frame(id, "BadCommand", "Command frame needs a 'command' object")));
        continue;
      }
      std::lock_guard lk(inbox_mu_);
      inbox_.push_back({c, id, j.at("command")});
    }
    c->open = false;
  }

  ServeOptions opts_;
  std::string scenario_name_;
  EventLog::Sink log_sink_;
  std::unique_ptr<Simulation> sim_;
  std::vector<std::string> pending_events_;

  int listen_fd_ = -1;
  int port_ = 0;
  std::atomic<bool> running_{false};
  std::atomic<bool> finished_{false};
  std::thread kernel_;
  std::thread acceptor_;

  mutable std::mutex state_mu_;
  std::shared_ptr<const std::string> snapshot_text_;
  Tick hello_tick_ = 0;

  std::mutex clients_mu_;
  std::list<std::shared_ptr<Client>> clients_;
  std::uint64_t client_counter_ = 0;

  std::mutex inbox_mu_;
  std::condition_variable cv_;
  std::deque<Inbound> inbox_;
};

}  // namespace cisru
