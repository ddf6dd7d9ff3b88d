#include "mglab/sim_transport.hpp"

#include <algorithm>
#include <limits>

#include "mglab/error.hpp"

namespace mglab {

SimulatedTransport::SimulatedTransport(std::int64_t start_ms) : now_(start_ms) {}

void SimulatedTransport::schedule(Inbound event, std::int64_t delay_ms) {
  if (delay_ms < 0) throw InvalidInput("delay must be non-negative");
  event.ts_ms = now_ + delay_ms;
  queue_.push({event.ts_ms, seq_++, std::move(event)});
}

ConnId SimulatedTransport::connect(Role role, Handler on_message, std::int64_t delay_ms) {
  const ConnId id = next_conn_++;
  clients_[id] = Client{role, std::move(on_message), true, {}};
  Inbound ev;
  ev.kind = Inbound::Kind::connected;
  ev.conn = id;
  ev.role = role;
  schedule(std::move(ev), delay_ms);
  return id;
}

void SimulatedTransport::deliver(ConnId conn, nlohmann::json body, std::int64_t delay_ms) {
  const auto& c = clients_.at(conn);
  Inbound ev;
  ev.conn = conn;
  ev.role = c.role;
  ev.body = std::move(body);
  schedule(std::move(ev), delay_ms);
}

void SimulatedTransport::deliver_raw(ConnId conn, std::string text, std::int64_t delay_ms) {
  deliver(conn, nlohmann::json(std::move(text)), delay_ms);
}

void SimulatedTransport::disconnect(ConnId conn, std::int64_t delay_ms) {
  Inbound ev;
  ev.kind = Inbound::Kind::disconnected;
  ev.conn = conn;
  ev.role = clients_.at(conn).role;
  schedule(std::move(ev), delay_ms);
}

const std::vector<nlohmann::json>& SimulatedTransport::received(ConnId conn) const {
  return clients_.at(conn).inbox;
}

std::optional<Inbound> SimulatedTransport::poll(std::int64_t until_ms) {
  if (!queue_.empty() && queue_.top().ts <= until_ms) {
    auto next = queue_.top();
    queue_.pop();
    now_ = std::max(now_, next.ts);
    if (next.event.kind == Inbound::Kind::disconnected) clients_.at(next.event.conn).open = false;
    return std::move(next.event);
  }
  if (until_ms != std::numeric_limits<std::int64_t>::max()) now_ = std::max(now_, until_ms);
  return std::nullopt;
}

void SimulatedTransport::send(ConnId conn, const nlohmann::json& msg) {
  auto it = clients_.find(conn);
  if (it == clients_.end() || !it->second.open) return;
  it->second.inbox.push_back(msg);
  if (it->second.handler) it->second.handler(*this, conn, msg);
}

ConnId add_scripted_trader(SimulatedTransport& net, const std::string& name, TraderPolicy policy,
                           std::int64_t delay_ms) {
  auto handler = [policy = std::move(policy), delay_ms](SimulatedTransport& t, ConnId self,
                                                         const nlohmann::json& msg) {
    if (msg.value("type", "") != "period_open") return;
    const int period = msg["period"].get<int>();
    if (auto order = policy(period))
      t.deliver(self, {{"type", "order"}, {"period", period}, {"action", to_string(*order)}}, delay_ms);
  };
  const ConnId id = net.connect(Role::participant, std::move(handler));
  net.deliver(id, {{"type", "join"}, {"name", name}});
  return id;
}

}  // namespace mglab
