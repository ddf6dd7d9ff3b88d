#pragma once

// In-process transport on a virtual clock for headless sessions and tests.
// Time only advances when the sequencer polls, so a 60 x 15 s session runs
// in milliseconds and every timestamp is reproducible.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "mglab/session.hpp"

namespace mglab {

class SimulatedTransport : public Transport {
 public:
  /// Called for every server message addressed to the connection.
  using Handler = std::function<void(SimulatedTransport&, ConnId, const nlohmann::json&)>;

  explicit SimulatedTransport(std::int64_t start_ms = 1'000'000);

  ConnId connect(Role role, Handler on_message = {}, std::int64_t delay_ms = 0);
  /// Schedules a client message to arrive `delay_ms` from now.
  void deliver(ConnId conn, nlohmann::json body, std::int64_t delay_ms = 0);
  /// Unparseable text, as a socket would hand it over.
  void deliver_raw(ConnId conn, std::string text, std::int64_t delay_ms = 0);
  void disconnect(ConnId conn, std::int64_t delay_ms = 0);

  /// Everything the server sent to `conn`, in order.
  const std::vector<nlohmann::json>& received(ConnId conn) const;

  std::int64_t now_ms() override { return now_; }
  std::optional<Inbound> poll(std::int64_t until_ms) override;
  void send(ConnId conn, const nlohmann::json& msg) override;

 private:
  struct Scheduled {
    std::int64_t ts;
    std::uint64_t seq;
    Inbound event;
    bool operator>(const Scheduled& o) const { return ts != o.ts ? ts > o.ts : seq > o.seq; }
  };
  struct Client {
    Role role;
    Handler handler;
    bool open = true;
    std::vector<nlohmann::json> inbox;
  };

  void schedule(Inbound event, std::int64_t delay_ms);

  std::int64_t now_;
  std::uint64_t seq_ = 0;
  ConnId next_conn_ = 1;
  std::priority_queue<Scheduled, std::vector<Scheduled>, std::greater<>> queue_;
  std::map<ConnId, Client> clients_;
};

/// Order policy of a scripted participant: the action for a period, or
/// nullopt to stay silent.
using TraderPolicy = std::function<std::optional<Order>(int period)>;

/// Connects a participant that joins as `name` and answers every
/// period_open with `policy(period)` after `delay_ms`.
ConnId add_scripted_trader(SimulatedTransport& net, const std::string& name, TraderPolicy policy,
                           std::int64_t delay_ms = 100);

}  // namespace mglab
