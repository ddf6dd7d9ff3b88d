#include "mglab/slaved.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mglab/error.hpp"
#include "parallel.hpp"

namespace mglab {

void EnsembleConfig::validate() const {
  if (n_agents < 1) throw InvalidInput("n_agents must be >= 1");
  if (s_max < 1) throw InvalidInput("s_max must be >= 1");
  if (m_max < 1 || m_max > kMaxMemory)
    throw InvalidInput("m_max must be in [1, " + std::to_string(kMaxMemory) + "]");
  if (runs < 1) throw InvalidInput("runs must be >= 1");
  if (q < 1 || q > 20) throw InvalidInput("q must be in [1, 20]");
  if (threads < 0) throw InvalidInput("threads must be >= 0");
}

Population sample_population(const EnsembleConfig& cfg, Rng& rng) {
  cfg.validate();
  Population pop;
  pop.agents.reserve(static_cast<std::size_t>(cfg.n_agents));
  for (int i = 0; i < cfg.n_agents; ++i) {
    const int m = static_cast<int>(rng.uniform_int(1, cfg.m_max));
    const int s = static_cast<int>(rng.uniform_int(1, cfg.s_max));
    std::vector<Strategy> strategies;
    strategies.reserve(static_cast<std::size_t>(s));
    for (int j = 0; j < s; ++j) strategies.push_back(Strategy::random(m, rng));
    pop.agents.emplace_back(std::move(strategies));
  }
  return pop;
}

Population run_population(const EnsembleConfig& cfg, int run) {
  Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(run)));
  return sample_population(cfg, rng);
}

SlavedRun::SlavedRun(Population pop, const EnsembleConfig& cfg,
                     std::span<const std::uint8_t> prefix)
    : pop_(std::move(pop)),
      mode_(cfg.mode),
      q_(cfg.q),
      returns_(cfg.returns),
      census_(cfg.census),
      window_(cfg.m_max) {
  cfg.validate();
  if (pop_.max_memory() > cfg.m_max) throw InvalidInput("agent memory exceeds m_max");
  if (!prefix.empty() && prefix.size() != static_cast<std::size_t>(cfg.m_max))
    throw InvalidInput("warm-up prefix must hold exactly m_max bits");
  for (auto b : prefix) window_.push(b);
  if (!prefix.empty()) last_bit_ = window_.last();
}

double SlavedRun::branch_magnitude() const {
  if (n_returns_ == 0 || abs_sum_ == 0.0) return 1.0;
  return abs_sum_ / n_returns_;
}

DecouplingSnapshot SlavedRun::take_snapshot() const {
  return snapshot(pop_, window_, q_, mode_, branch_magnitude(), census_);
}

std::optional<DecouplingSnapshot> SlavedRun::push_price(double price) {
  if (!(price > 0) || !std::isfinite(price)) throw InvalidInput("prices must be positive");
  if (period_ < 0) {
    period_ = 0;
    last_price_ = price;
    if (window_.full()) return take_snapshot();
    return std::nullopt;
  }
  const double r = std::log(price / last_price_);
  last_price_ = price;
  return push_return(r);
}

std::optional<DecouplingSnapshot> SlavedRun::push_return(double r) {
  if (period_ < 0) throw InvalidInput("push the initial price before any return");
  double effective = r;
  if (returns_ == ReturnMode::sign) effective = r > 0 ? 1.0 : (r < 0 ? -1.0 : 0.0);

  // Strategies acting on the current window are paid by the return that
  // followed it; the minority payoff uses the return as imbalance proxy.
  if (window_.full()) add_payoff(pop_, window_, mode_ == Payoff::dollar ? effective : -effective);
  abs_sum_ += std::abs(effective);
  ++n_returns_;

  last_bit_ = direction_bit(r, last_bit_);
  window_.push(last_bit_);
  ++period_;
  if (window_.full()) return take_snapshot();
  return std::nullopt;
}

DecouplingTrajectory run_slaved(Population pop, const PriceSeries& series,
                                const EnsembleConfig& cfg, std::span<const std::uint8_t> prefix) {
  if (prefix.empty() && series.bits.size() < static_cast<std::size_t>(cfg.m_max))
    throw InvalidInput("series has " + std::to_string(series.bits.size()) +
                       " moves, warm-up needs " + std::to_string(cfg.m_max));
  SlavedRun run(std::move(pop), cfg, prefix);
  DecouplingTrajectory traj;
  auto record = [&](const std::optional<DecouplingSnapshot>& snap) {
    if (!snap) return;
    traj.periods.push_back(run.period());
    traj.snapshots.push_back(*snap);
  };
  record(run.push_price(series.prices.front()));
  for (double r : series.returns) record(run.push_return(r));
  return traj;
}

std::vector<DecouplingTrajectory> ensemble_runs(const EnsembleConfig& cfg,
                                                const PriceSeries& series,
                                                std::span<const std::uint8_t> prefix) {
  cfg.validate();
  std::vector<DecouplingTrajectory> out(static_cast<std::size_t>(cfg.runs));
  detail::parallel_for(cfg.runs, cfg.threads, [&](int i) {
    out[static_cast<std::size_t>(i)] = run_slaved(run_population(cfg, i), series, cfg, prefix);
  });
  return out;
}

DecouplingSnapshot mean_snapshot(std::span<const DecouplingSnapshot> snaps) {
  if (snaps.empty()) throw InvalidInput("no snapshots to average");
  DecouplingSnapshot mean;
  for (const auto& s : snaps) {
    mean.d_plus += s.d_plus;
    mean.d_minus += s.d_minus;
  }
  const double n = static_cast<double>(snaps.size());
  mean.d_plus /= n;
  mean.d_minus /= n;
  mean.delta_d = std::abs(mean.d_plus - mean.d_minus);
  return mean;
}

DecouplingTrajectory mean_trajectory(std::span<const DecouplingTrajectory> runs) {
  if (runs.empty()) throw InvalidInput("no trajectories to average");
  DecouplingTrajectory mean;
  mean.periods = runs.front().periods;
  mean.provenance = DecouplingTrajectory::Provenance::ensemble_mean;
  mean.runs = static_cast<int>(runs.size());
  for (const auto& r : runs)
    if (r.periods != mean.periods) throw InvalidInput("trajectories are not aligned");
  std::vector<DecouplingSnapshot> column(runs.size());
  for (std::size_t t = 0; t < mean.periods.size(); ++t) {
    for (std::size_t i = 0; i < runs.size(); ++i) column[i] = runs[i].snapshots[t];
    mean.snapshots.push_back(mean_snapshot(column));
  }
  return mean;
}

DecouplingTrajectory ensemble_mean(const EnsembleConfig& cfg, const PriceSeries& series,
                                   std::span<const std::uint8_t> prefix) {
  const auto runs = ensemble_runs(cfg, series, prefix);
  return mean_trajectory(runs);
}

std::vector<Prediction> predict(const DecouplingTrajectory& traj, double threshold,
                                int target_offset) {
  if (!(threshold > 0)) throw InvalidInput("threshold must be positive");
  if (target_offset < 1) throw InvalidInput("target offset must be >= 1");
  std::vector<Prediction> out;
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const auto& s = traj.snapshots[i];
    if (s.delta_d > threshold)
      out.push_back({traj.periods[i] + target_offset, s.d_plus > s.d_minus ? 1 : 0});
  }
  return out;
}

std::vector<double> threshold_grid(double start, double step, double end) {
  if (!(start > 0) || !(step > 0) || !(end >= start))
    throw InvalidInput("threshold grid needs start > 0, step > 0, end >= start");
  const auto n = static_cast<int>(std::floor((end - start) / step + 1e-9)) + 1;
  std::vector<double> grid;
  for (int k = 0; k < n; ++k) grid.push_back(std::round((start + k * step) * 1e9) / 1e9);
  return grid;
}

std::vector<double> default_thresholds() { return threshold_grid(0.20, 0.02, 0.40); }

SuccessTable success_table(const DecouplingTrajectory& traj, const PriceSeries& series,
                           std::span<const double> thresholds, int target_offset) {
  for (std::size_t i = 1; i < thresholds.size(); ++i)
    if (!(thresholds[i] > thresholds[i - 1]))
      throw InvalidInput("thresholds must be strictly increasing");
  SuccessTable table;
  for (double theta : thresholds) {
    int events = 0;
    int hits = 0;
    for (const auto& p : predict(traj, theta, target_offset)) {
      if (p.period < 1 || p.period > series.last_period()) continue;
      ++events;
      if (p.bit == series.bit_at(p.period)) ++hits;
    }
    SuccessRow row{theta, std::nullopt, events};
    if (events > 0) row.success_rate = static_cast<double>(hits) / events;
    table.rows.push_back(row);
  }
  return table;
}

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw InvalidInput("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = p * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  if (values[lo] == values[hi]) return values[lo];
  return values[lo] + frac * (values[hi] - values[lo]);
}

BootstrapBands bootstrap_bands(const EnsembleConfig& cfg, const PriceSeries& series, int outer,
                               int inner) {
  if (outer < 2) throw InvalidInput("bootstrap needs outer >= 2");
  if (inner < 10) throw InvalidInput("bootstrap needs inner >= 10");
  BootstrapBands bands;
  bands.outer = outer;
  bands.inner = inner;
  for (int o = 0; o < outer; ++o) {
    EnsembleConfig c = cfg;
    c.seed = derive_seed(cfg.seed, 0xB0, o);
    BandRealization real;
    real.trajectory = ensemble_mean(c, series);

    std::vector<DecouplingTrajectory> replicas;
    for (int r = 0; r < inner; ++r) {
      c.seed = derive_seed(cfg.seed, 0xB1, o, r);
      replicas.push_back(ensemble_mean(c, series));
    }
    const std::size_t n = real.trajectory.size();
    std::vector<double> plus(static_cast<std::size_t>(inner)), minus(static_cast<std::size_t>(inner));
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t r = 0; r < replicas.size(); ++r) {
        plus[r] = replicas[r].snapshots[t].d_plus;
        minus[r] = replicas[r].snapshots[t].d_minus;
      }
      real.plus_low10.push_back(quantile(plus, 0.10));
      real.plus_high90.push_back(quantile(plus, 0.90));
      real.minus_low10.push_back(quantile(minus, 0.10));
      real.minus_high90.push_back(quantile(minus, 0.90));
    }
    bands.realizations.push_back(std::move(real));
  }
  return bands;
}

}  // namespace mglab
