#pragma once

// Q-step decoupling: a strategy (or agent) is decoupled over q unrealized
// periods when its action after those periods is the same for every possible
// path of q intermediate bits. q = 1 is "the action two periods ahead does not
// depend on the next move".

#include <optional>

#include "mglab/game.hpp"

namespace mglab {

struct DecoupledVerdict {
  /// Present iff decoupled; the common action otherwise.
  std::optional<int> action;

  bool decoupled() const { return action.has_value(); }
};

struct ImbalanceSplit {
  int coupled = 0;
  int decoupled = 0;
  bool certain = false;

  int total() const { return coupled + decoupled; }
};

struct DecouplingSnapshot {
  double d_plus = 0.0;
  double d_minus = 0.0;
  double delta_d = 0.0;

  friend bool operator==(const DecouplingSnapshot&, const DecouplingSnapshot&) = default;
};

/// Whether d+/d- count agents (their played strategy) or every held strategy.
enum class Census { agents, strategies };

DecoupledVerdict strategy_decoupled(const Strategy& s, const HistoryWindow& window, int q);

/// Enumerates the 2^q branches; along each the agent's scores are moved by a
/// hypothetical return of `branch_magnitude` with the sign of the branch bit,
/// the best strategy is re-selected and its action on the final window read.
DecoupledVerdict agent_decoupled(const AgentState& agent, const HistoryWindow& window, int q,
                                 Payoff mode, double branch_magnitude = 1.0);

/// Decoupled part: the common actions of decoupled agents. Coupled part: the
/// other agents' actions on the current window, or, given a realized branch
/// of q future bits (oldest first), their actions after that branch. With a
/// branch the total is the imbalance at the target period exactly.
ImbalanceSplit split_imbalance(const Population& pop, const HistoryWindow& window, int q,
                               Payoff mode, double branch_magnitude = 1.0,
                               std::span<const std::uint8_t> branch = {});

DecouplingSnapshot snapshot(const Population& pop, const HistoryWindow& window, int q, Payoff mode,
                            double branch_magnitude = 1.0, Census census = Census::agents);

}  // namespace mglab
