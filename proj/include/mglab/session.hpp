#pragma once

// Live experiment sessions: timed periods, news, sealed one-share orders,
// price updates from the period imbalance, settlement, an append-only event
// log that replays to the same state, and an observer-only decoupling feed.

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <iosfwd>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "mglab/market.hpp"
#include "mglab/series.hpp"
#include "mglab/slaved.hpp"

namespace mglab {

// ---------------------------------------------------------------------------
// News

enum class Sentiment { neutral, positive, negative };

struct NewsItem {
  int period = 0;
  std::string headline;
  std::string body;
  Sentiment tag = Sentiment::neutral;
};

/// JSON array of {"period", "headline", "body", "tag"} with periods 1, 2, ...
/// Throws LoadError when malformed or shorter than `periods`.
std::vector<NewsItem> parse_news(const nlohmann::json& doc, int periods);
std::vector<NewsItem> load_news(const std::filesystem::path& path, int periods);

struct NewsBalance {
  int neutral = 0;
  int positive = 0;
  int negative = 0;

  bool balanced() const { return positive == negative; }
};

NewsBalance news_balance(std::span<const NewsItem> items);

// ---------------------------------------------------------------------------
// Configuration and state

struct ObserverSettings {
  EnsembleConfig ensemble;
  double threshold = 0.2;
  /// Compute on a worker thread so the period barrier never waits on it.
  bool async = true;
};

struct SessionConfig {
  int n_participants = 10;
  int period_seconds = 15;
  int periods = 60;
  MarketParams market = MarketParams::for_participants(10);
  std::vector<NewsItem> news;
  Money pool = Money::from_units(200 * Money::kScale);
  Money initial_cash;
  std::optional<ObserverSettings> live_delta_d;

  void validate() const;
  /// Keys: participants, period_seconds, periods, initial_price, liquidity
  /// (default 10 N), pool, initial_cash, news (path relative to base_dir or
  /// inline array), observer {runs, s_max, m_max, q, seed, threshold}.
  static SessionConfig from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir);
};

enum class Phase { lobby, in_period, settling, closed };

struct SessionState {
  Phase phase = Phase::lobby;
  /// Current (or last closed) period; 0 before the first opens.
  int period = 0;
  double current_price = 0.0;
  std::vector<std::string> names;
  std::vector<ParticipantAccount> accounts;
  /// orders[t - 1][participant]; absent means hold.
  std::vector<std::vector<std::optional<Order>>> orders;
  /// P(0), P(1), ...
  std::vector<double> price_path;
  std::vector<Money> payouts;

  friend bool operator==(const SessionState&, const SessionState&) = default;
};

// ---------------------------------------------------------------------------
// Log

/// Append-only newline-delimited JSON events with monotone "ts".
class SessionLog {
 public:
  /// Stamps the event with max(ts, previous ts) and appends it.
  void append(nlohmann::json event, std::int64_t ts_ms);
  /// Every later append is also written and flushed to `out`.
  void mirror_to(std::ostream* out) { mirror_ = out; }

  const std::vector<nlohmann::json>& events() const { return events_; }
  void write(std::ostream& out) const;

  /// A final line that does not parse is treated as a truncated write and
  /// dropped; any other bad line is a ReplayError.
  static SessionLog read(std::istream& in);
  static SessionLog read_file(const std::filesystem::path& path);

 private:
  std::vector<nlohmann::json> events_;
  std::int64_t last_ts_ = 0;
  std::ostream* mirror_ = nullptr;
};

/// Rebuilds the final state from the log, recomputing every price from the
/// recorded orders and checking it against the logged one bit for bit.
SessionState replay_state(const SessionLog& log);
/// The session's price path as a series for slaved analysis.
PriceSeries replay(const SessionLog& log);

// ---------------------------------------------------------------------------
// Transport

using ConnId = std::uint64_t;

enum class Role { participant, observer };

struct Inbound {
  enum class Kind { connected, message, disconnected };

  Kind kind = Kind::message;
  ConnId conn = 0;
  Role role = Role::participant;
  /// Parsed message; a JSON string holding the raw text when it did not parse.
  nlohmann::json body;
  /// Server receive time.
  std::int64_t ts_ms = 0;
};

/// Message channel between the session sequencer and its clients.
class Transport {
 public:
  virtual ~Transport() = default;

  virtual std::int64_t now_ms() = 0;
  /// Next queued event stamped at or before `until_ms`, waiting for one to
  /// arrive while the clock is before `until_ms`. Later events stay queued.
  virtual std::optional<Inbound> poll(std::int64_t until_ms) = 0;
  virtual void send(ConnId conn, const nlohmann::json& msg) = 0;
};

// ---------------------------------------------------------------------------
// Observer feed

/// Incremental slaved ensemble over the live price path. Populations match
/// ensemble_mean under the same config, so the feed equals offline analysis
/// of the replayed series.
class ObserverFeed {
 public:
  ObserverFeed(ObserverSettings settings, double initial_price);
  ~ObserverFeed();
  ObserverFeed(const ObserverFeed&) = delete;
  ObserverFeed& operator=(const ObserverFeed&) = delete;

  /// Queues (async) or computes (sync) the snapshot after `period` closed.
  void on_close(int period, double price);
  /// Ready "delta_d" messages, oldest first.
  std::vector<nlohmann::json> drain();
  bool pending();
  /// Blocks until every queued period has been computed.
  void finish();

 private:
  void compute(int period, double price);
  void worker_loop(std::stop_token stop);

  ObserverSettings settings_;
  std::vector<SlavedRun> runs_;
  std::mutex mutex_;
  std::condition_variable_any cv_;
  std::deque<std::pair<int, double>> queue_;
  std::vector<nlohmann::json> ready_;
  int busy_ = 0;
  std::jthread worker_;
};

// ---------------------------------------------------------------------------
// Session

/// Runs one session to completion: lobby until n participants join, then
/// `periods` timed periods, then settlement. Returns the final state.
SessionState run_session(const SessionConfig& cfg, Transport& transport, SessionLog& log);

}  // namespace mglab
