#include "mglab/game.hpp"

#include <algorithm>
#include <string>

#include "mglab/error.hpp"

namespace mglab {

namespace {

void check_memory(int memory) {
  if (memory < 1 || memory > kMaxMemory)
    throw InvalidInput("memory must be in [1, " + std::to_string(kMaxMemory) + "], got " +
                       std::to_string(memory));
}

constexpr std::uint64_t low_mask(int bits) {
  return bits >= 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << bits) - 1;
}

}  // namespace

Strategy::Strategy(int memory, std::vector<std::int8_t> table)
    : memory_(memory), table_(std::move(table)) {
  check_memory(memory);
  if (table_.size() != (std::size_t{1} << memory))
    throw InvalidInput("strategy table must have 2^M entries");
  for (auto a : table_)
    if (a != 1 && a != -1) throw InvalidInput("strategy actions must be -1 or +1");
}

Strategy Strategy::constant(int memory, int action) {
  check_memory(memory);
  return Strategy(memory, std::vector<std::int8_t>(std::size_t{1} << memory,
                                                   static_cast<std::int8_t>(action)));
}

Strategy Strategy::random(int memory, Rng& rng) {
  check_memory(memory);
  std::vector<std::int8_t> table(std::size_t{1} << memory);
  for (auto& a : table) a = rng.bit() ? 1 : -1;
  return Strategy(memory, std::move(table));
}

Strategy Strategy::from_code(int memory, std::uint64_t code) {
  if (memory < 1 || memory > 6) throw InvalidInput("from_code supports memory 1..6");
  std::vector<std::int8_t> table(std::size_t{1} << memory);
  for (std::size_t h = 0; h < table.size(); ++h) table[h] = (code >> h) & 1 ? 1 : -1;
  return Strategy(memory, std::move(table));
}

std::size_t encode_history(std::span<const std::uint8_t> bits, int memory) {
  check_memory(memory);
  if (bits.size() != static_cast<std::size_t>(memory))
    throw InvalidInput("history has " + std::to_string(bits.size()) + " bits, expected " +
                       std::to_string(memory));
  std::size_t h = 0;
  for (auto b : bits) {
    if (b > 1) throw InvalidInput("history bits must be 0 or 1");
    h = (h << 1) | b;
  }
  return h;
}

HistoryWindow::HistoryWindow(int capacity) : capacity_(capacity) { check_memory(capacity); }

void HistoryWindow::push(int bit) {
  if (bit != 0 && bit != 1) throw InvalidInput("direction bit must be 0 or 1");
  code_ = ((code_ << 1) | static_cast<std::uint64_t>(bit)) & low_mask(capacity_);
  size_ = std::min(size_ + 1, capacity_);
}

int HistoryWindow::last() const {
  if (size_ == 0) throw NotWarmedUp("history window is empty");
  return static_cast<int>(code_ & 1);
}

std::size_t HistoryWindow::index(int memory) const {
  if (memory > size_)
    throw NotWarmedUp("window holds " + std::to_string(size_) + " bits, agent reads " +
                      std::to_string(memory));
  return static_cast<std::size_t>(code_ & low_mask(memory));
}

std::vector<std::uint8_t> HistoryWindow::bits() const {
  std::vector<std::uint8_t> out(static_cast<std::size_t>(size_));
  for (int j = 0; j < size_; ++j) out[static_cast<std::size_t>(size_ - 1 - j)] = (code_ >> j) & 1;
  return out;
}

AgentState::AgentState(std::vector<Strategy> strategies_)
    : AgentState(std::move(strategies_), {}) {}

AgentState::AgentState(std::vector<Strategy> strategies_, std::vector<double> scores_)
    : strategies(std::move(strategies_)), scores(std::move(scores_)) {
  if (strategies.empty()) throw InvalidInput("agent needs at least one strategy");
  if (scores.empty()) scores.assign(strategies.size(), 0.0);
  if (scores.size() != strategies.size()) throw InvalidInput("one score per strategy");
  for (const auto& s : strategies)
    if (s.memory() != strategies.front().memory())
      throw InvalidInput("all strategies of an agent share its memory");
}

int Population::max_memory() const {
  int m = 0;
  for (const auto& a : agents) m = std::max(m, a.memory());
  return m;
}

double mg_payoff(int action, int imbalance) { return -static_cast<double>(action) * imbalance; }

double dollar_payoff(int prev_action, double ret) { return prev_action * ret; }

std::size_t select_best_strategy(std::span<const double> scores) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < scores.size(); ++j)
    if (scores[j] > scores[best]) best = j;
  return best;
}

std::size_t select_best_strategy(const AgentState& agent) {
  return select_best_strategy(agent.scores);
}

int current_action(const AgentState& agent, const HistoryWindow& window) {
  return agent.strategies[select_best_strategy(agent)].action(window.index(agent.memory()));
}

StepOutcome step_aggregate(const Population& pop, const HistoryWindow& window) {
  int a = 0;
  for (const auto& agent : pop.agents) a += current_action(agent, window);
  if (a > 0) return {a, 1, false};
  if (a < 0) return {a, 0, false};
  return {0, window.last(), true};
}

void add_payoff(Population& pop, const HistoryWindow& window, double factor) {
  for (auto& agent : pop.agents) {
    const auto h = window.index(agent.memory());
    for (std::size_t j = 0; j < agent.strategies.size(); ++j)
      agent.scores[j] += agent.strategies[j].action(h) * factor;
  }
}

void update_scores(Population& pop, const HistoryWindow& prev_window, double realized_return,
                   Payoff mode, int imbalance) {
  add_payoff(pop, prev_window,
             mode == Payoff::dollar ? realized_return : -static_cast<double>(imbalance));
}

std::uint64_t count_minority_nash(int n) {
  if (n < 1 || n % 2 == 0) throw InvalidInput("minority game needs an odd N >= 1");
  const int k = (n - 1) / 2;
  // C(n, k) built incrementally; each partial product is itself a binomial.
  std::uint64_t c = 1;
  for (int i = 1; i <= k; ++i) {
    const auto num = static_cast<unsigned __int128>(c) * static_cast<unsigned>(n - k + i);
    if (num / static_cast<unsigned>(i) > ~std::uint64_t{0})
      throw InvalidInput("Nash count overflows 64 bits");
    c = static_cast<std::uint64_t>(num / static_cast<unsigned>(i));
  }
  return c;
}

AbsorbingCertificate verify_constant_profile_absorbing(int memory, int periods, int direction,
                                                       std::uint64_t seed) {
  if (memory < 1 || memory > 4) throw InvalidInput("exhaustive check needs 1 <= M <= 4");
  if (periods < 1) throw InvalidInput("path length must be positive");
  if (direction != 1 && direction != -1) throw InvalidInput("direction must be +1 or -1");

  std::vector<double> returns(static_cast<std::size_t>(periods), 0.1);
  if (seed != 0) {
    Rng rng(seed);
    for (auto& r : returns) r = 0.1 * (1.0 - rng.uniform01());  // (0, 0.1]
  }
  for (auto& r : returns) r *= direction;

  const std::uint64_t n_strategies = std::uint64_t{1} << (std::size_t{1} << memory);
  const int trend_bit = direction > 0 ? 1 : 0;

  // The path is same-direction all the way back, so every visited window is
  // the same history.
  HistoryWindow window(memory);
  for (int i = 0; i < memory; ++i) window.push(trend_bit);

  std::vector<double> scores(n_strategies, 0.0);
  std::vector<bool> followed(n_strategies, true);
  for (int t = 0; t < periods; ++t) {
    const auto h = window.index(memory);
    for (std::uint64_t code = 0; code < n_strategies; ++code) {
      const int a = (code >> h) & 1 ? 1 : -1;
      if (a != direction) followed[code] = false;
      scores[code] += dollar_payoff(a, returns[static_cast<std::size_t>(t)]);
    }
    window.push(trend_bit);
  }

  const std::uint64_t constant_code = direction > 0 ? n_strategies - 1 : 0;
  AbsorbingCertificate cert;
  cert.strategies_checked = n_strategies;
  cert.constant_score = scores[constant_code];
  cert.best_score = *std::max_element(scores.begin(), scores.end());
  cert.maximizers_follow_trend = true;
  for (std::uint64_t code = 0; code < n_strategies; ++code) {
    if (scores[code] == cert.best_score) {
      ++cert.maximizers;
      if (!followed[code]) cert.maximizers_follow_trend = false;
    }
  }
  cert.holds = cert.constant_score >= cert.best_score && cert.maximizers_follow_trend;
  return cert;
}

}  // namespace mglab
