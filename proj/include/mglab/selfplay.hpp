#pragma once

// Self-coupled game: the population trades against its own aggregate and
// the resulting prices move by the market's imbalance rule.

#include <optional>

#include "mglab/market.hpp"
#include "mglab/slaved.hpp"

namespace mglab {

struct SelfPlayConfig {
  /// n_agents, s_max, m_max, mode, q, seed, returns and census are used;
  /// runs and threads are ignored.
  EnsembleConfig agents;
  MarketParams market = MarketParams::for_participants(10);
  /// Replace every agent's strategies with one constant table of this action.
  std::optional<int> force_constant;
};

struct SelfPlayResult {
  PriceSeries series;
  /// Random history preceding period 1, oldest first.
  std::vector<std::uint8_t> warmup_bits;
  /// A(t) for t = 1..periods.
  std::vector<int> imbalances;
  /// Periods where A = 0 and the previous bit was carried.
  int ties = 0;
  /// Snapshot before each decision; periods[i] = t means the window ends at t.
  DecouplingTrajectory trajectory;
};

/// Population of run 0 under agents.seed, so an ensemble of one run with the
/// same seed slaves exactly this population.
SelfPlayResult simulate_self_play(const SelfPlayConfig& cfg);

}  // namespace mglab
