#pragma once

#include <cerrno>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

#include <sys/socket.h>
#include <unistd.h>

#include "cisru/event_log.hpp"

namespace cisru::wire {

inline constexpr int kProtocolVersion = 1;
inline constexpr std::uint32_t kMaxFrame = 16u << 20;

class FrameError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 4-byte big-endian length, then the UTF-8 JSON text.
inline std::string encode_frame(const std::string& body) {
  if (body.size() > kMaxFrame) throw FrameError("frame too large");
  const auto n = static_cast<std::uint32_t>(body.size());
  std::string out;
  out.reserve(4 + body.size());
  out.push_back(static_cast<char>((n >> 24) & 0xFF));
  out.push_back(static_cast<char>((n >> 16) & 0xFF));
  out.push_back(static_cast<char>((n >> 8) & 0xFF));
  out.push_back(static_cast<char>(n & 0xFF));
  out += body;
  return out;
}

inline std::string encode_frame(const Json& j) { return encode_frame(j.dump()); }

/// Incremental decoder for a byte stream.
class FrameDecoder {
 public:
  void feed(const char* data, std::size_t n) { buf_.append(data, n); }
  void feed(const std::string& s) { buf_ += s; }

  /// Next complete frame body, if one is buffered.
  std::optional<std::string> next() {
    if (buf_.size() < 4) return std::nullopt;
    const auto b = [&](int i) { return static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[i])); };
    const std::uint32_t n = b(0) << 24 | b(1) << 16 | b(2) << 8 | b(3);
    if (n > kMaxFrame) throw FrameError("announced frame length " + std::to_string(n) + " exceeds limit");
    if (buf_.size() < 4 + static_cast<std::size_t>(n)) return std::nullopt;
    std::string body = buf_.substr(4, n);
    buf_.erase(0, 4 + static_cast<std::size_t>(n));
    return body;
  }

  std::size_t buffered() const { return buf_.size(); }

 private:
  std::string buf_;
};

inline bool write_all(int fd, const std::string& data) {
  std::size_t off = 0;
  while (off < data.size()) {
    const ssize_t n = ::send(fd, data.data() + off, data.size() - off, MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return false;
    off += static_cast<std::size_t>(n);
  }
  return true;
}

inline bool read_exact(int fd, char* buf, std::size_t n) {
  std::size_t off = 0;
  while (off < n) {
    const ssize_t r = ::recv(fd, buf + off, n - off, 0);
    if (r < 0 && errno == EINTR) continue;
    if (r <= 0) return false;
    off += static_cast<std::size_t>(r);
  }
  return true;
}

/// Blocking read of one frame body; nullopt on EOF or a socket error.
inline std::optional<std::string> read_frame(int fd) {
  char hdr[4];
  if (!read_exact(fd, hdr, 4)) return std::nullopt;
  const auto b = [&](int i) { return static_cast<std::uint32_t>(static_cast<unsigned char>(hdr[i])); };
  const std::uint32_t n = b(0) << 24 | b(1) << 16 | b(2) << 8 | b(3);
  if (n > kMaxFrame) throw FrameError("announced frame length " + std::to_string(n) + " exceeds limit");
  std::string body(n, '\0');
  if (n > 0 && !read_exact(fd, body.data(), n)) return std::nullopt;
  return body;
}

inline Json hello(const std::string& scenario_name, Tick tick) {
  return {{"type", "Hello"}, {"protocol", kProtocolVersion}, {"server", "cisru-sim"}, {"scenario", scenario_name},
          {"tick", tick}};
}

inline Json snapshot_frame(Json snapshot) { return {{"type", "Snapshot"}, {"snapshot", std::move(snapshot)}}; }

inline Json event_frame(const EventRecord& r) { return {{"type", "Event"}, {"record", record_to_json(r)}}; }

inline Json ack_frame(const Json& id, Json result) { return {{"type", "Ack"}, {"id", id}, {"result", std::move(result)}}; }

inline Json error_frame(const Json& id, const std::string& code, const std::string& message) {
  return {{"type", "Error"}, {"id", id}, {"code", code}, {"message", message}};
}

}  // namespace cisru::wire
