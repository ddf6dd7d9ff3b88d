#include "mglab/decoupling.hpp"

#include <cmath>
#include <cstdlib>

#include "mglab/error.hpp"

namespace mglab {

namespace {

void check_q(int q) {
  if (q < 1 || q > 20) throw InvalidInput("decoupling horizon q must be in [1, 20]");
}

}  // namespace

DecoupledVerdict strategy_decoupled(const Strategy& s, const HistoryWindow& window, int q) {
  check_q(q);
  const int m = s.memory();
  const std::size_t n = s.size();
  // After q pushes the low min(q, M) bits are free and the rest are the
  // current history shifted up: the reachable entries form one aligned block.
  std::size_t base = 0;
  std::size_t block = n;
  if (q < m) {
    base = (window.index(m) << q) & (n - 1);
    block = std::size_t{1} << q;
  } else {
    window.index(m);  // warm-up precondition
  }
  const int first = s.action(base);
  for (std::size_t h = base + 1; h < base + block; ++h)
    if (s.action(h) != first) return {};
  return {first};
}

namespace {

// Action of the agent after a hypothetical future, bits oldest first.
int branch_action(const AgentState& agent, const HistoryWindow& window,
                  std::span<const std::uint8_t> branch, Payoff mode, double magnitude,
                  std::vector<double>& scores) {
  const int m = agent.memory();
  scores = agent.scores;
  HistoryWindow w = window;
  for (const auto bit : branch) {
    const double signed_move = bit ? magnitude : -magnitude;
    const double factor = mode == Payoff::dollar ? signed_move : -signed_move;
    const auto h = w.index(m);
    for (std::size_t j = 0; j < scores.size(); ++j) scores[j] += agent.strategies[j].action(h) * factor;
    w.push(bit);
  }
  return agent.strategies[select_best_strategy(scores)].action(w.index(m));
}

}  // namespace

DecoupledVerdict agent_decoupled(const AgentState& agent, const HistoryWindow& window, int q,
                                 Payoff mode, double branch_magnitude) {
  check_q(q);
  window.index(agent.memory());
  if (agent.strategies.size() == 1) return strategy_decoupled(agent.strategies.front(), window, q);

  std::optional<int> common;
  std::vector<double> scores;
  std::vector<std::uint8_t> branch(static_cast<std::size_t>(q));
  for (std::uint32_t path = 0; path < (std::uint32_t{1} << q); ++path) {
    for (int k = 0; k < q; ++k) branch[static_cast<std::size_t>(k)] = (path >> (q - 1 - k)) & 1;
    const int a = branch_action(agent, window, branch, mode, branch_magnitude, scores);
    if (!common) {
      common = a;
    } else if (*common != a) {
      return {};
    }
  }
  return {common};
}

ImbalanceSplit split_imbalance(const Population& pop, const HistoryWindow& window, int q,
                               Payoff mode, double branch_magnitude,
                               std::span<const std::uint8_t> branch) {
  if (!branch.empty() && branch.size() != static_cast<std::size_t>(q))
    throw InvalidInput("branch must hold exactly q bits");
  ImbalanceSplit split;
  std::vector<double> scores;
  for (const auto& agent : pop.agents) {
    const auto v = agent_decoupled(agent, window, q, mode, branch_magnitude);
    if (v.decoupled())
      split.decoupled += *v.action;
    else
      split.coupled += branch.empty() ? current_action(agent, window)
                                      : branch_action(agent, window, branch, mode, branch_magnitude, scores);
  }
  split.certain = 2 * std::abs(split.decoupled) > pop.size();
  return split;
}

DecouplingSnapshot snapshot(const Population& pop, const HistoryWindow& window, int q, Payoff mode,
                            double branch_magnitude, Census census) {
  int plus = 0;
  int minus = 0;
  int total = 0;
  for (const auto& agent : pop.agents) {
    if (census == Census::agents) {
      const auto v = agent_decoupled(agent, window, q, mode, branch_magnitude);
      ++total;
      if (v.decoupled()) (*v.action > 0 ? plus : minus) += 1;
    } else {
      for (const auto& s : agent.strategies) {
        const auto v = strategy_decoupled(s, window, q);
        ++total;
        if (v.decoupled()) (*v.action > 0 ? plus : minus) += 1;
      }
    }
  }
  DecouplingSnapshot snap;
  if (total > 0) {
    snap.d_plus = static_cast<double>(plus) / total;
    snap.d_minus = static_cast<double>(minus) / total;
  }
  snap.delta_d = std::abs(snap.d_plus - snap.d_minus);
  return snap;
}

}  // namespace mglab
