#include "mglab/selfplay.hpp"

#include "mglab/error.hpp"

namespace mglab {

SelfPlayResult simulate_self_play(const SelfPlayConfig& cfg) {
  cfg.agents.validate();
  cfg.market.validate();
  if (cfg.force_constant && *cfg.force_constant != 1 && *cfg.force_constant != -1)
    throw InvalidInput("forced constant action must be +1 or -1");

  Rng rng(derive_seed(cfg.agents.seed, 0));
  Population pop = sample_population(cfg.agents, rng);
  if (cfg.force_constant) {
    for (auto& agent : pop.agents)
      agent = AgentState({Strategy::constant(agent.memory(), *cfg.force_constant)});
  }

  SelfPlayResult out;
  for (int i = 0; i < cfg.agents.m_max; ++i) out.warmup_bits.push_back(static_cast<std::uint8_t>(rng.bit()));

  SlavedRun run(std::move(pop), cfg.agents, out.warmup_bits);
  std::vector<double> prices{cfg.market.initial_price};
  auto record = [&](const std::optional<DecouplingSnapshot>& snap) {
    out.trajectory.periods.push_back(run.period());
    out.trajectory.snapshots.push_back(snap.value());
  };
  record(run.push_price(prices.back()));
  for (int t = 1; t <= cfg.market.periods; ++t) {
    const StepOutcome step = step_aggregate(run.population(), run.window());
    out.imbalances.push_back(step.imbalance);
    if (step.tie) ++out.ties;
    prices.push_back(update_price(prices.back(), step.imbalance, cfg.market.liquidity));
    record(run.push_price(prices.back()));
  }
  out.series = PriceSeries::from_prices(std::move(prices));
  return out;
}

}  // namespace mglab
