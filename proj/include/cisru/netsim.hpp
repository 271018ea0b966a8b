#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cisru/rng.hpp"

namespace cisru::netsim {

using Tick = std::uint64_t;

class UnknownChannel : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

using EndpointPair = std::pair<std::string, std::string>;

/// Channels are undirected; the key is the sorted pair.
inline EndpointPair channel_key(const std::string& a, const std::string& b) {
  return a < b ? EndpointPair{a, b} : EndpointPair{b, a};
}

struct ChannelParams {
  Tick latency_ticks = 0;
  double drop_probability = 0.0;
};

enum class SendOutcome { Enqueued, Dropped, Partitioned };

/// One lossy FIFO link. Message is any copyable payload type.
template <typename Message>
class Channel {
 public:
  Channel(EndpointPair endpoints, ChannelParams params, std::uint64_t seed)
      : endpoints_(std::move(endpoints)), params_(params), rng_(seed) {
    if (params.drop_probability < 0.0 || params.drop_probability > 1.0) {
      throw std::invalid_argument("drop_probability outside [0,1]");
    }
  }

  SendOutcome send(Message msg, Tick now) {
    if (partitioned_) return SendOutcome::Partitioned;
    // One draw per send keeps the drop pattern a pure function of the seed and send count.
    const double u = rng_.uniform();
    if (u < params_.drop_probability) return SendOutcome::Dropped;
    in_flight_.push_back({now + params_.latency_ticks, std::move(msg)});
    return SendOutcome::Enqueued;
  }

  /// Removes and returns every message due at or before `now`, in send order.
  std::vector<Message> deliver_due(Tick now) {
    std::vector<Message> out;
    while (!in_flight_.empty() && in_flight_.front().first <= now) {
      out.push_back(std::move(in_flight_.front().second));
      in_flight_.pop_front();
    }
    return out;
  }

  void set_partitioned(bool flag) { partitioned_ = flag; }
  bool partitioned() const { return partitioned_; }
  const EndpointPair& endpoints() const { return endpoints_; }
  const ChannelParams& params() const { return params_; }
  std::size_t in_flight() const { return in_flight_.size(); }

 private:
  EndpointPair endpoints_;
  ChannelParams params_;
  Rng rng_;
  bool partitioned_ = false;
  // Constant latency keeps deliver ticks non-decreasing, so a deque is already sorted.
  std::deque<std::pair<Tick, Message>> in_flight_;
};

/// All channels of a run, each with its own generator derived from the run seed
/// and the endpoint names.
template <typename Message>
class Network {
 public:
  explicit Network(std::uint64_t seed = 0, ChannelParams defaults = {}) : seed_(seed), defaults_(defaults) {}

  Channel<Message>& add_channel(const std::string& a, const std::string& b) { return add_channel(a, b, defaults_); }

  Channel<Message>& add_channel(const std::string& a, const std::string& b, ChannelParams params) {
    auto key = channel_key(a, b);
    const std::uint64_t s = splitmix64(seed_ ^ fnv1a(key.first + "|" + key.second));
    auto [it, inserted] = channels_.try_emplace(key, key, params, s);
    if (!inserted) it->second = Channel<Message>(key, params, s);
    return it->second;
  }

  bool has_channel(const std::string& a, const std::string& b) const {
    return channels_.count(channel_key(a, b)) != 0;
  }

  Channel<Message>& channel(const std::string& a, const std::string& b) {
    auto it = channels_.find(channel_key(a, b));
    if (it == channels_.end()) throw UnknownChannel("no channel between '" + a + "' and '" + b + "'");
    return it->second;
  }

  Channel<Message>& ensure_channel(const std::string& a, const std::string& b) {
    auto it = channels_.find(channel_key(a, b));
    if (it != channels_.end()) return it->second;
    return add_channel(a, b);
  }

  SendOutcome send(const std::string& from, const std::string& to, Message msg, Tick now) {
    return ensure_channel(from, to).send(std::move(msg), now);
  }

  void set_partition(const std::string& a, const std::string& b, bool flag) { channel(a, b).set_partitioned(flag); }

  /// Due messages from every channel, channels visited in key order.
  std::vector<Message> deliver_due(Tick now) {
    std::vector<Message> out;
    for (auto& [key, ch] : channels_) {
      auto batch = ch.deliver_due(now);
      for (auto& m : batch) out.push_back(std::move(m));
    }
    return out;
  }

  const std::map<EndpointPair, Channel<Message>>& channels() const { return channels_; }
  void set_defaults(ChannelParams p) { defaults_ = p; }

 private:
  std::uint64_t seed_;
  ChannelParams defaults_;
  std::map<EndpointPair, Channel<Message>> channels_;
};

}  // namespace cisru::netsim
