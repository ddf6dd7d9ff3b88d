#pragma once

// WebSocket transport for live sessions. Connection handlers run on a
// background I/O thread and only enqueue parsed events; the sequencer drains
// them through poll() on its own thread. Plain HTTP GETs are answered from a
// static asset directory so the browser client can be served from the same
// port. A "?role=observer" query on the upgrade request selects the
// observer role.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "mglab/session.hpp"

namespace mglab {

class WsServer : public Transport {
 public:
  struct Options {
    std::string host = "127.0.0.1";
    /// 0 picks an ephemeral port.
    std::uint16_t port = 0;
    /// Empty disables static file serving.
    std::filesystem::path assets_dir;
  };

  /// Binds and starts accepting. Throws std::runtime_error naming the
  /// address when the port is unavailable.
  explicit WsServer(Options opts);
  ~WsServer() override;
  WsServer(const WsServer&) = delete;
  WsServer& operator=(const WsServer&) = delete;

  std::uint16_t port() const;

  /// Unix epoch milliseconds.
  std::int64_t now_ms() override;
  std::optional<Inbound> poll(std::int64_t until_ms) override;
  void send(ConnId conn, const nlohmann::json& msg) override;

  /// Waits up to `drain` for queued writes, closes every connection and
  /// stops the I/O thread. Idempotent.
  void shutdown(std::chrono::milliseconds drain = std::chrono::milliseconds(2000));

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace mglab
