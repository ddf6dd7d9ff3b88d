#pragma once

// Agent engine shared by the minority game and the $-game.
//
// Indexing convention, used by every module: a HistoryWindow holds the
// direction bits realized strictly before the decision being made. A strategy
// acting on window W (last bit = period t) is scored by the return realized at
// period t + 1, after which that period's bit is pushed onto W.

#include <cstdint>
#include <span>
#include <vector>

#include "mglab/rng.hpp"

namespace mglab {

inline constexpr int kMaxMemory = 16;

enum class Payoff { dollar, minority };

/// Maps every M-bit history to a buy (+1) or sell (-1) action.
class Strategy {
 public:
  Strategy(int memory, std::vector<std::int8_t> table);

  static Strategy constant(int memory, int action);
  static Strategy random(int memory, Rng& rng);
  /// Strategy whose table entry h is +1 iff bit h of `code` is set. M <= 6.
  static Strategy from_code(int memory, std::uint64_t code);

  int memory() const { return memory_; }
  std::size_t size() const { return table_.size(); }
  int action(std::size_t history) const { return table_[history]; }
  std::span<const std::int8_t> table() const { return table_; }

  friend bool operator==(const Strategy&, const Strategy&) = default;

 private:
  int memory_;
  std::vector<std::int8_t> table_;
};

/// Encodes bits (oldest first) so that the most recent bit has weight 1.
std::size_t encode_history(std::span<const std::uint8_t> bits, int memory);

/// The last `capacity` realized direction bits, packed most-recent-lowest.
class HistoryWindow {
 public:
  explicit HistoryWindow(int capacity);

  void push(int bit);

  int capacity() const { return capacity_; }
  int size() const { return size_; }
  bool full() const { return size_ == capacity_; }
  /// Most recent bit. Window must be non-empty.
  int last() const;
  /// encode_history of the most recent `memory` bits.
  std::size_t index(int memory) const;
  /// Oldest first.
  std::vector<std::uint8_t> bits() const;

 private:
  int capacity_;
  int size_ = 0;
  std::uint64_t code_ = 0;
};

struct AgentState {
  AgentState(std::vector<Strategy> strategies);
  AgentState(std::vector<Strategy> strategies, std::vector<double> scores);

  int memory() const { return strategies.front().memory(); }

  std::vector<Strategy> strategies;
  std::vector<double> scores;
};

struct Population {
  std::vector<AgentState> agents;

  int size() const { return static_cast<int>(agents.size()); }
  int max_memory() const;
};

double mg_payoff(int action, int imbalance);
double dollar_payoff(int prev_action, double ret);

/// Index of the highest score, lowest index on ties.
std::size_t select_best_strategy(std::span<const double> scores);
std::size_t select_best_strategy(const AgentState& agent);

/// Action of the agent's current best strategy on the window.
int current_action(const AgentState& agent, const HistoryWindow& window);

struct StepOutcome {
  int imbalance;
  int bit;
  /// A == 0: the previous bit was carried.
  bool tie;
};

/// Aggregate order imbalance of the population and the resulting direction
/// bit. Throws NotWarmedUp when the window is shorter than some agent's memory.
StepOutcome step_aggregate(const Population& pop, const HistoryWindow& window);

/// score_j += a_j(window) * factor for every strategy of every agent.
void add_payoff(Population& pop, const HistoryWindow& window, double factor);

/// $G: score_j += a_j * realized_return; MG: score_j += -a_j * imbalance.
void update_scores(Population& pop, const HistoryWindow& prev_window, double realized_return,
                   Payoff mode, int imbalance);

/// N! / (((N+1)/2)! ((N-1)/2)!) for odd N.
std::uint64_t count_minority_nash(int n);

struct AbsorbingCertificate {
  bool holds = false;
  double constant_score = 0.0;
  double best_score = 0.0;
  std::uint64_t strategies_checked = 0;
  /// Strategies tied with the constant one at the end of the path.
  std::uint64_t maximizers = 0;
  /// Every maximizer, at every step, acted in the trend direction.
  bool maximizers_follow_trend = false;
};

/// Exhaustive check over all 2^(2^M) strategies that the constant strategy
/// in the trend direction maximizes the cumulative $G score along a path of
/// `periods` same-direction moves. `direction` is +1 (up) or -1 (down);
/// return magnitudes are drawn from `seed` (0 gives a constant 0.1).
AbsorbingCertificate verify_constant_profile_absorbing(int memory, int periods, int direction,
                                                       std::uint64_t seed = 0);

}  // namespace mglab
