#include "mglab/session.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <limits>
#include <set>
#include <stdexcept>

#include "mglab/error.hpp"

namespace mglab {

using nlohmann::json;

// ---------------------------------------------------------------------------
// News

namespace {

Sentiment parse_sentiment(const std::string& tag) {
  if (tag == "neutral") return Sentiment::neutral;
  if (tag == "positive") return Sentiment::positive;
  if (tag == "negative") return Sentiment::negative;
  throw LoadError("unknown news tag '" + tag + "'");
}

json news_message(const NewsItem& item) {
  return {{"period", item.period}, {"headline", item.headline}, {"body", item.body}};
}

}  // namespace

std::vector<NewsItem> parse_news(const json& doc, int periods) {
  if (!doc.is_array()) throw LoadError("news file must be a JSON array");
  std::vector<NewsItem> items;
  for (const auto& row : doc) {
    const auto where = "news item " + std::to_string(items.size() + 1);
    if (!row.is_object()) throw LoadError(where + ": expected an object");
    for (const char* key : {"period", "headline", "body", "tag"})
      if (!row.contains(key)) throw LoadError(where + ": missing \"" + key + "\"");
    if (!row["period"].is_number_integer() || !row["headline"].is_string() ||
        !row["body"].is_string() || !row["tag"].is_string())
      throw LoadError(where + ": wrong field type");
    NewsItem item;
    item.period = row["period"].get<int>();
    item.headline = row["headline"].get<std::string>();
    item.body = row["body"].get<std::string>();
    item.tag = parse_sentiment(row["tag"].get<std::string>());
    if (item.period != static_cast<int>(items.size()) + 1)
      throw LoadError(where + ": period " + std::to_string(item.period) + " out of sequence");
    items.push_back(std::move(item));
  }
  if (static_cast<int>(items.size()) < periods)
    throw LoadError("news has " + std::to_string(items.size()) + " items for " +
                    std::to_string(periods) + " periods");
  return items;
}

std::vector<NewsItem> load_news(const std::filesystem::path& path, int periods) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open news file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw LoadError("news file " + path.string() + ": " + e.what());
  }
  return parse_news(doc, periods);
}

NewsBalance news_balance(std::span<const NewsItem> items) {
  NewsBalance b;
  for (const auto& item : items) {
    switch (item.tag) {
      case Sentiment::neutral: ++b.neutral; break;
      case Sentiment::positive: ++b.positive; break;
      case Sentiment::negative: ++b.negative; break;
    }
  }
  return b;
}

// ---------------------------------------------------------------------------
// Config

void SessionConfig::validate() const {
  if (n_participants < 1) throw InvalidInput("session needs at least one participant");
  if (period_seconds < 1) throw InvalidInput("period_seconds must be >= 1");
  if (periods < 1) throw InvalidInput("periods must be >= 1");
  market.validate();
  if (static_cast<int>(news.size()) < periods)
    throw InvalidInput("news has " + std::to_string(news.size()) + " items for " +
                       std::to_string(periods) + " periods");
  if (pool < Money{}) throw InvalidInput("pool must be non-negative");
  if (live_delta_d) {
    live_delta_d->ensemble.validate();
    if (!(live_delta_d->threshold > 0)) throw InvalidInput("observer threshold must be positive");
  }
}

SessionConfig SessionConfig::from_json(const json& doc, const std::filesystem::path& base_dir) {
  if (!doc.is_object()) throw LoadError("session config must be a JSON object");
  SessionConfig cfg;
  try {
    cfg.n_participants = doc.value("participants", 10);
    cfg.period_seconds = doc.value("period_seconds", 15);
    cfg.periods = doc.value("periods", 60);
    cfg.market = MarketParams::for_participants(cfg.n_participants);
    cfg.market.periods = cfg.periods;
    cfg.market.initial_price = doc.value("initial_price", 5.0);
    if (doc.contains("liquidity")) cfg.market.liquidity = doc["liquidity"].get<double>();
    if (doc.contains("pool")) cfg.pool = Money::parse(doc["pool"].get<std::string>());
    if (doc.contains("initial_cash"))
      cfg.initial_cash = Money::parse(doc["initial_cash"].get<std::string>());
    if (!doc.contains("news")) throw LoadError("session config has no \"news\"");
    if (doc["news"].is_string()) {
      auto path = std::filesystem::path(doc["news"].get<std::string>());
      if (path.is_relative()) path = base_dir / path;
      cfg.news = load_news(path, cfg.periods);
    } else {
      cfg.news = parse_news(doc["news"], cfg.periods);
    }
    if (doc.contains("observer")) {
      const auto& o = doc["observer"];
      ObserverSettings obs;
      obs.ensemble.n_agents = o.value("agents", cfg.n_participants);
      obs.ensemble.s_max = o.value("s_max", 10);
      obs.ensemble.m_max = o.value("m_max", 6);
      obs.ensemble.runs = o.value("runs", 1000);
      obs.ensemble.q = o.value("q", 1);
      obs.ensemble.seed = o.value("seed", std::uint64_t{0});
      obs.threshold = o.value("threshold", 0.2);
      cfg.live_delta_d = obs;
    }
  } catch (const json::exception& e) {
    throw LoadError(std::string("session config: ") + e.what());
  } catch (const InvalidInput& e) {
    throw LoadError(std::string("session config: ") + e.what());
  }
  try {
    cfg.validate();
  } catch (const InvalidInput& e) {
    throw LoadError(std::string("session config: ") + e.what());
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Log

void SessionLog::append(json event, std::int64_t ts_ms) {
  last_ts_ = std::max(last_ts_, ts_ms);
  event["ts"] = last_ts_;
  if (mirror_) *mirror_ << event.dump() << '\n' << std::flush;
  events_.push_back(std::move(event));
}

void SessionLog::write(std::ostream& out) const {
  for (const auto& e : events_) out << e.dump() << '\n';
}

SessionLog SessionLog::read(std::istream& in) {
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) lines.push_back(line);
  SessionLog log;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    json e;
    try {
      e = json::parse(lines[i]);
    } catch (const json::parse_error&) {
      if (i + 1 == lines.size()) break;
      throw ReplayError("log line " + std::to_string(i + 1) + " is not valid JSON");
    }
    if (!e.is_object() || !e.contains("event") || !e.contains("ts"))
      throw ReplayError("log line " + std::to_string(i + 1) + " is not an event");
    log.last_ts_ = std::max(log.last_ts_, e["ts"].get<std::int64_t>());
    log.events_.push_back(std::move(e));
  }
  return log;
}

SessionLog SessionLog::read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ReplayError("cannot open log " + path.string());
  return read(in);
}

// ---------------------------------------------------------------------------
// Replay

namespace {

int imbalance_of(const std::vector<std::optional<Order>>& orders) {
  int a = 0;
  for (const auto& o : orders) {
    if (o == Order::buy) ++a;
    if (o == Order::sell) --a;
  }
  return a;
}

void close_accounts(SessionState& state, const std::vector<std::optional<Order>>& orders,
                    Money exec, Money initial_cash) {
  for (std::size_t i = 0; i < state.accounts.size(); ++i) {
    auto& acct = state.accounts[i];
    acct = apply_order(acct, orders[i].value_or(Order::hold), exec);
    acct.pnl = mark_to_market(acct, exec, initial_cash);
  }
}

std::vector<Money> final_pnls(const SessionState& state) {
  std::vector<Money> pnls;
  for (const auto& a : state.accounts) pnls.push_back(a.pnl);
  return pnls;
}

json money_array(std::span<const Money> values) {
  json arr = json::array();
  for (auto v : values) arr.push_back(v.to_string());
  return arr;
}

}  // namespace

SessionState replay_state(const SessionLog& log) {
  const auto& events = log.events();
  auto find = [&](const char* name) -> const json* {
    for (const auto& e : events)
      if (e["event"] == name) return &e;
    return nullptr;
  };
  const json* start = find("session_start");
  if (!start) throw ReplayError("log truncated: missing session_start");
  const json* begin = find("session_begin");
  if (!begin) throw ReplayError("log truncated: missing session_begin");

  const auto& c = (*start)["config"];
  const int periods = c.at("periods").get<int>();
  const double liquidity = c.at("liquidity").get<double>();
  const Money initial_cash = Money::parse(c.at("initial_cash").get<std::string>());
  const Money pool = Money::parse(c.at("pool").get<std::string>());

  SessionState state;
  state.current_price = c.at("initial_price").get<double>();
  state.price_path.push_back(state.current_price);
  state.names = (*begin)["participants"].get<std::vector<std::string>>();
  const auto n = state.names.size();
  state.accounts.assign(n, ParticipantAccount{0, initial_cash, Money{}});
  state.orders.assign(static_cast<std::size_t>(periods), std::vector<std::optional<Order>>(n));

  int closed = 0;
  bool settled = false;
  for (const auto& e : events) {
    const auto kind = e["event"].get<std::string>();
    if (kind == "order") {
      const int t = e.at("period").get<int>();
      const auto who = e.at("participant").get<std::size_t>();
      if (t < 1 || t > periods || who >= n) throw ReplayError("order outside the session");
      if (t <= closed) throw ReplayError("order for period " + std::to_string(t) + " after its close");
      auto& slot = state.orders[static_cast<std::size_t>(t - 1)][who];
      if (slot) throw ReplayError("second order for participant " + std::to_string(who) +
                                  " in period " + std::to_string(t));
      slot = parse_order(e.at("action").get<std::string>());
    } else if (kind == "period_close") {
      const int t = e.at("period").get<int>();
      if (t != closed + 1)
        throw ReplayError("log truncated: missing period_close for period " + std::to_string(closed + 1));
      const auto& orders = state.orders[static_cast<std::size_t>(t - 1)];
      const int a = imbalance_of(orders);
      if (a != e.at("imbalance").get<int>())
        throw ReplayError("period " + std::to_string(t) + ": logged imbalance disagrees with orders");
      const double price = update_price(state.current_price, a, liquidity);
      if (price != e.at("price").get<double>())
        throw ReplayError("period " + std::to_string(t) + ": logged price disagrees with recomputation");
      state.current_price = price;
      state.price_path.push_back(price);
      close_accounts(state, orders, Money::from_double(price), initial_cash);
      state.period = t;
      closed = t;
    } else if (kind == "settlement") {
      if (closed != periods)
        throw ReplayError("log truncated: missing period_close for period " + std::to_string(closed + 1));
      state.payouts = settle_payout(final_pnls(state), pool);
      if (money_array(state.payouts) != e.at("payouts"))
        throw ReplayError("logged payouts disagree with recomputation");
      settled = true;
    }
  }
  if (closed != periods)
    throw ReplayError("log truncated: missing period_close for period " + std::to_string(closed + 1));
  if (!settled) throw ReplayError("log truncated: missing settlement");
  state.phase = Phase::closed;
  return state;
}

PriceSeries replay(const SessionLog& log) {
  return PriceSeries::from_prices(replay_state(log).price_path);
}

// ---------------------------------------------------------------------------
// Observer feed

ObserverFeed::ObserverFeed(ObserverSettings settings, double initial_price)
    : settings_(std::move(settings)) {
  settings_.ensemble.validate();
  runs_.reserve(static_cast<std::size_t>(settings_.ensemble.runs));
  for (int i = 0; i < settings_.ensemble.runs; ++i) {
    runs_.emplace_back(run_population(settings_.ensemble, i), settings_.ensemble);
    runs_.back().push_price(initial_price);
  }
  if (settings_.async) worker_ = std::jthread([this](std::stop_token st) { worker_loop(st); });
}

ObserverFeed::~ObserverFeed() {
  if (worker_.joinable()) {
    worker_.request_stop();
    cv_.notify_all();
  }
}

void ObserverFeed::compute(int period, double price) {
  std::vector<DecouplingSnapshot> snaps;
  for (auto& run : runs_)
    if (auto s = run.push_price(price)) snaps.push_back(*s);
  if (snaps.empty()) return;  // still warming up
  const auto mean = mean_snapshot(snaps);
  json msg = {{"type", "delta_d"},
              {"period", period},
              {"d_plus", mean.d_plus},
              {"d_minus", mean.d_minus},
              {"delta_d", mean.delta_d},
              {"prediction", nullptr}};
  if (mean.delta_d > settings_.threshold) msg["prediction"] = mean.d_plus > mean.d_minus ? "up" : "down";
  std::lock_guard lock(mutex_);
  ready_.push_back(std::move(msg));
}

void ObserverFeed::worker_loop(std::stop_token stop) {
  while (true) {
    std::pair<int, double> job;
    {
      std::unique_lock lock(mutex_);
      if (!cv_.wait(lock, stop, [&] { return !queue_.empty(); })) return;
      job = queue_.front();
      queue_.pop_front();
      ++busy_;
    }
    compute(job.first, job.second);
    {
      std::lock_guard lock(mutex_);
      --busy_;
    }
    cv_.notify_all();
  }
}

void ObserverFeed::on_close(int period, double price) {
  if (!settings_.async) {
    compute(period, price);
    return;
  }
  {
    std::lock_guard lock(mutex_);
    queue_.emplace_back(period, price);
  }
  cv_.notify_all();
}

std::vector<json> ObserverFeed::drain() {
  std::lock_guard lock(mutex_);
  return std::exchange(ready_, {});
}

bool ObserverFeed::pending() {
  std::lock_guard lock(mutex_);
  return !queue_.empty() || busy_ > 0;
}

void ObserverFeed::finish() {
  if (!settings_.async) return;
  std::unique_lock lock(mutex_);
  cv_.wait(lock, [&] { return queue_.empty() && busy_ == 0; });
}

// ---------------------------------------------------------------------------
// Sequencer

namespace {

json error_message(const std::string& code, const std::string& message) {
  return {{"type", "error"}, {"code", code}, {"message", message}};
}

class Sequencer {
 public:
  Sequencer(const SessionConfig& cfg, Transport& transport, SessionLog& log)
      : cfg_(cfg), transport_(transport), log_(log) {
    if (cfg_.live_delta_d) feed_.emplace(*cfg_.live_delta_d, cfg_.market.initial_price);
  }

  SessionState run() {
    log_.append({{"event", "session_start"},
                 {"config",
                  {{"participants", cfg_.n_participants},
                   {"periods", cfg_.periods},
                   {"period_seconds", cfg_.period_seconds},
                   {"initial_price", cfg_.market.initial_price},
                   {"liquidity", cfg_.market.liquidity},
                   {"pool", cfg_.pool.to_string()},
                   {"initial_cash", cfg_.initial_cash.to_string()}}}},
                transport_.now_ms());
    state_.current_price = cfg_.market.initial_price;
    state_.price_path.push_back(state_.current_price);

    while (static_cast<int>(lobby_.size()) < cfg_.n_participants) {
      auto in = transport_.poll(kForever);
      if (!in) throw std::runtime_error("transport closed before the lobby filled");
      handle(*in);
    }
    begin();
    for (int t = 1; t <= cfg_.periods; ++t) run_period(t);
    settle();
    return state_;
  }

 private:
  static constexpr std::int64_t kForever = std::numeric_limits<std::int64_t>::max();

  void begin() {
    for (const auto& [conn, name] : lobby_) {
      participant_of_[conn] = static_cast<int>(state_.names.size());
      conns_.push_back(conn);
      state_.names.push_back(name);
    }
    state_.accounts.assign(state_.names.size(), ParticipantAccount{0, cfg_.initial_cash, Money{}});
    state_.orders.assign(static_cast<std::size_t>(cfg_.periods),
                         std::vector<std::optional<Order>>(state_.names.size()));
    log_.append({{"event", "session_begin"}, {"participants", state_.names}}, transport_.now_ms());
  }

  void run_period(int t) {
    state_.phase = Phase::in_period;
    state_.period = t;
    deadline_ = transport_.now_ms() + std::int64_t{1000} * cfg_.period_seconds;
    const auto& news = cfg_.news[static_cast<std::size_t>(t - 1)];
    const json open = {{"type", "period_open"},
                       {"period", t},
                       {"deadline_ms", deadline_},
                       {"price", Money::from_double(state_.current_price).to_string()},
                       {"news", news_message(news)}};
    log_.append({{"event", "period_open"}, {"period", t}, {"deadline_ms", deadline_}, {"news_period", news.period}},
                transport_.now_ms());
    broadcast(open);

    while (true) {
      std::int64_t wake = deadline_;
      if (feed_ && feed_->pending()) wake = std::min(deadline_, transport_.now_ms() + 50);
      auto in = transport_.poll(wake);
      flush_feed();
      if (in) {
        handle(*in);
      } else if (transport_.now_ms() >= deadline_) {
        break;
      }
    }
    close_period(t);
  }

  void close_period(int t) {
    state_.phase = Phase::settling;
    const auto& orders = state_.orders[static_cast<std::size_t>(t - 1)];
    const int a = imbalance_of(orders);
    const double price = update_price(state_.current_price, a, cfg_.market.liquidity);
    const Money exec = Money::from_double(price);
    state_.current_price = price;
    state_.price_path.push_back(price);
    close_accounts(state_, orders, exec, cfg_.initial_cash);
    log_.append({{"event", "period_close"},
                 {"period", t},
                 {"imbalance", a},
                 {"price", price},
                 {"exec_price", exec.to_string()}},
                transport_.now_ms());

    json msg = {{"type", "period_close"}, {"period", t}, {"imbalance", a}, {"price", exec.to_string()}};
    for (std::size_t i = 0; i < conns_.size(); ++i) {
      if (disconnected_.contains(conns_[i])) continue;
      const auto& acct = state_.accounts[i];
      msg["account"] = {{"shares", acct.shares}, {"cash", acct.cash.to_string()}, {"pnl", acct.pnl.to_string()}};
      transport_.send(conns_[i], msg);
    }
    msg.erase("account");
    send_observers(msg);
    if (feed_) {
      feed_->on_close(t, price);
      flush_feed();
    }
  }

  void settle() {
    if (feed_) {
      feed_->finish();
      flush_feed();
    }
    state_.payouts = settle_payout(final_pnls(state_), cfg_.pool);
    log_.append({{"event", "settlement"},
                 {"pnls", money_array(final_pnls(state_))},
                 {"payouts", money_array(state_.payouts)}},
                transport_.now_ms());
    for (std::size_t i = 0; i < conns_.size(); ++i)
      if (!disconnected_.contains(conns_[i]))
        transport_.send(conns_[i], {{"type", "settlement"}, {"payout", state_.payouts[i].to_string()}});
    send_observers({{"type", "settlement"}, {"payouts", money_array(state_.payouts)}});
    state_.phase = Phase::closed;
    log_.append({{"event", "session_end"}}, transport_.now_ms());
  }

  void flush_feed() {
    if (!feed_) return;
    for (auto& msg : feed_->drain()) {
      json event = msg;
      event.erase("type");
      event["event"] = "delta_d";
      log_.append(std::move(event), transport_.now_ms());
      send_observers(msg);
    }
  }

  void broadcast(const json& msg) {
    for (auto conn : conns_)
      if (!disconnected_.contains(conn)) transport_.send(conn, msg);
    send_observers(msg);
  }

  void send_observers(const json& msg) {
    for (auto conn : observers_) transport_.send(conn, msg);
  }

  void reject(const Inbound& in, const std::string& code, const std::string& message) {
    transport_.send(in.conn, error_message(code, message));
  }

  void handle(const Inbound& in) {
    switch (in.kind) {
      case Inbound::Kind::connected:
        if (in.role == Role::observer) observers_.insert(in.conn);
        return;
      case Inbound::Kind::disconnected:
        on_disconnect(in);
        return;
      case Inbound::Kind::message:
        break;
    }
    if (!in.body.is_object() || !in.body.contains("type") || !in.body["type"].is_string())
      return reject(in, "bad_message", "expected a JSON object with a \"type\"");
    if (in.role == Role::observer || observers_.contains(in.conn))
      return reject(in, "observer_read_only", "observer connections cannot send commands");
    const auto type = in.body["type"].get<std::string>();
    if (type == "join") return on_join(in);
    if (type == "order") return on_order(in);
    reject(in, "bad_message", "unknown message type '" + type + "'");
  }

  void on_disconnect(const Inbound& in) {
    observers_.erase(in.conn);
    auto it = std::find_if(lobby_.begin(), lobby_.end(), [&](const auto& p) { return p.first == in.conn; });
    if (it != lobby_.end() && state_.names.empty()) {
      log_.append({{"event", "leave"}, {"name", it->second}}, in.ts_ms);
      lobby_.erase(it);
      broadcast_lobby();
      return;
    }
    if (auto p = participant_of_.find(in.conn); p != participant_of_.end()) {
      disconnected_.insert(in.conn);
      log_.append({{"event", "disconnect"}, {"participant", p->second}, {"period", state_.period}}, in.ts_ms);
    }
  }

  void on_join(const Inbound& in) {
    if (!state_.names.empty()) return reject(in, "session_started", "the session has already started");
    const auto& name_field = in.body.value("name", json());
    if (!name_field.is_string() || name_field.get<std::string>().empty())
      return reject(in, "bad_name", "join needs a non-empty name");
    const auto name = name_field.get<std::string>();
    for (const auto& [conn, existing] : lobby_) {
      if (conn == in.conn) return reject(in, "already_joined", "this connection has already joined");
      if (existing == name) return reject(in, "duplicate_name", "name '" + name + "' is taken");
    }
    if (static_cast<int>(lobby_.size()) >= cfg_.n_participants)
      return reject(in, "session_full", "all seats are taken");
    lobby_.emplace_back(in.conn, name);
    log_.append({{"event", "join"}, {"name", name}}, in.ts_ms);
    broadcast_lobby();
  }

  void broadcast_lobby() {
    const json msg = {{"type", "lobby"}, {"joined", lobby_.size()}, {"capacity", cfg_.n_participants}};
    for (const auto& [conn, name] : lobby_) transport_.send(conn, msg);
    send_observers(msg);
  }

  void on_order(const Inbound& in) {
    const auto p = participant_of_.find(in.conn);
    if (p == participant_of_.end()) return reject(in, "not_joined", "join before ordering");
    const auto& period_field = in.body.value("period", json());
    const auto& action_field = in.body.value("action", json());
    if (!period_field.is_number_integer() || !action_field.is_string())
      return reject(in, "bad_message", "order needs integer period and string action");
    const int period = period_field.get<int>();
    Order order;
    try {
      order = parse_order(action_field.get<std::string>());
    } catch (const InvalidInput&) {
      return reject(in, "bad_action", "action must be buy, sell or hold");
    }
    const auto log_rejection = [&](const std::string& code) {
      log_.append({{"event", "order_rejected"},
                   {"participant", p->second},
                   {"period", period},
                   {"action", to_string(order)},
                   {"code", code},
                   {"received_ms", in.ts_ms}},
                  in.ts_ms);
    };
    if (state_.phase != Phase::in_period || period < state_.period ||
        (period == state_.period && in.ts_ms > deadline_)) {
      log_rejection("period_closed");
      return reject(in, "period_closed", "period " + std::to_string(period) + " is closed");
    }
    if (period != state_.period) {
      log_rejection("wrong_period");
      return reject(in, "wrong_period", "period " + std::to_string(period) + " is not open");
    }
    auto& slot = state_.orders[static_cast<std::size_t>(period - 1)][static_cast<std::size_t>(p->second)];
    if (slot) {
      log_rejection("duplicate_order");
      return reject(in, "duplicate_order", "one order per period; the first stands");
    }
    slot = order;
    log_.append({{"event", "order"},
                 {"participant", p->second},
                 {"period", period},
                 {"action", to_string(order)},
                 {"received_ms", in.ts_ms}},
                in.ts_ms);
    transport_.send(in.conn, {{"type", "order_ack"}, {"period", period}, {"action", to_string(order)}});
  }

  const SessionConfig& cfg_;
  Transport& transport_;
  SessionLog& log_;
  std::optional<ObserverFeed> feed_;
  SessionState state_;
  std::vector<std::pair<ConnId, std::string>> lobby_;
  std::map<ConnId, int> participant_of_;
  std::vector<ConnId> conns_;
  std::set<ConnId> observers_;
  std::set<ConnId> disconnected_;
  std::int64_t deadline_ = 0;
};

}  // namespace

SessionState run_session(const SessionConfig& cfg, Transport& transport, SessionLog& log) {
  cfg.validate();
  return Sequencer(cfg, transport, log).run();
}

}  // namespace mglab
