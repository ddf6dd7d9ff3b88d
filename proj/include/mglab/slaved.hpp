#pragma once

// Slaved Monte Carlo: agent populations whose scores are driven by a recorded
// price series, the ensemble-mean decoupling trajectory, threshold predictions
// and their success tables, and bootstrap bands.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mglab/decoupling.hpp"
#include "mglab/game.hpp"
#include "mglab/series.hpp"

namespace mglab {

/// How a realized return enters the virtual scores.
enum class ReturnMode { log, sign };

struct EnsembleConfig {
  int n_agents = 10;
  int s_max = 10;
  int m_max = 6;
  int runs = 1000;
  Payoff mode = Payoff::dollar;
  int q = 1;
  std::uint64_t seed = 0;
  ReturnMode returns = ReturnMode::log;
  Census census = Census::agents;
  /// Worker threads for ensembles; 0 picks the hardware concurrency.
  int threads = 0;

  void validate() const;
};

/// n_agents agents with M ~ U[1, m_max], S ~ U[1, s_max], random tables.
Population sample_population(const EnsembleConfig& cfg, Rng& rng);

/// Population used by run `run` of an ensemble under cfg.seed.
Population run_population(const EnsembleConfig& cfg, int run);

struct DecouplingTrajectory {
  enum class Provenance { single_run, ensemble_mean };

  /// periods[i] is the last realized period of the window behind snapshots[i].
  std::vector<int> periods;
  std::vector<DecouplingSnapshot> snapshots;
  Provenance provenance = Provenance::single_run;
  int runs = 1;

  std::size_t size() const { return snapshots.size(); }
};

/// One slaved population fed a price path one price at a time.
///
/// Once the window holds m_max bits, every new price first scores the
/// strategies on the window they acted on, then pushes the new bit and
/// reports the snapshot for the new period. With a full warm-up prefix the
/// first snapshot is reported for period 0.
class SlavedRun {
 public:
  SlavedRun(Population pop, const EnsembleConfig& cfg, std::span<const std::uint8_t> prefix = {});

  std::optional<DecouplingSnapshot> push_price(double price);
  /// Advances by a realized log return. The first price must come first.
  std::optional<DecouplingSnapshot> push_return(double r);

  const Population& population() const { return pop_; }
  const HistoryWindow& window() const { return window_; }
  /// Period of the last pushed price.
  int period() const { return period_; }
  /// Magnitude used for hypothetical branch returns.
  double branch_magnitude() const;

 private:
  DecouplingSnapshot take_snapshot() const;

  Population pop_;
  Payoff mode_;
  int q_;
  ReturnMode returns_;
  Census census_;
  HistoryWindow window_;
  int period_ = -1;
  double last_price_ = 0.0;
  int last_bit_ = 0;
  double abs_sum_ = 0.0;
  int n_returns_ = 0;
};

DecouplingTrajectory run_slaved(Population pop, const PriceSeries& series,
                                const EnsembleConfig& cfg,
                                std::span<const std::uint8_t> prefix = {});

/// Every run of the ensemble, in run order.
std::vector<DecouplingTrajectory> ensemble_runs(const EnsembleConfig& cfg, const PriceSeries& series,
                                                std::span<const std::uint8_t> prefix = {});

/// Mean over runs in the given order; delta_d = |mean d+ - mean d-|.
DecouplingSnapshot mean_snapshot(std::span<const DecouplingSnapshot> snaps);

/// Mean of the runs in index order. delta_d = |mean d+ - mean d-|.
DecouplingTrajectory mean_trajectory(std::span<const DecouplingTrajectory> runs);

DecouplingTrajectory ensemble_mean(const EnsembleConfig& cfg, const PriceSeries& series,
                                   std::span<const std::uint8_t> prefix = {});

struct Prediction {
  int period;
  int bit;

  friend bool operator==(const Prediction&, const Prediction&) = default;
};

/// For every snapshot with delta_d strictly above the threshold, predicts the
/// bit of period + target_offset: 1 if d+ > d-, else 0.
std::vector<Prediction> predict(const DecouplingTrajectory& traj, double threshold,
                                int target_offset = 1);

struct SuccessRow {
  double threshold;
  /// Absent iff n_events == 0.
  std::optional<double> success_rate;
  int n_events;

  friend bool operator==(const SuccessRow&, const SuccessRow&) = default;
};

struct SuccessTable {
  std::vector<SuccessRow> rows;
};

/// start, start + step, ... up to end inclusive, rounded to 1e-9.
std::vector<double> threshold_grid(double start, double step, double end);
/// 0.20 to 0.40 step 0.02.
std::vector<double> default_thresholds();

/// Predictions whose target period lies beyond the series are not counted.
SuccessTable success_table(const DecouplingTrajectory& traj, const PriceSeries& series,
                           std::span<const double> thresholds, int target_offset = 1);

/// Empirical quantile with linear interpolation between order statistics.
double quantile(std::vector<double> values, double p);

struct BandRealization {
  DecouplingTrajectory trajectory;
  std::vector<double> plus_low10, plus_high90;
  std::vector<double> minus_low10, minus_high90;
};

struct BootstrapBands {
  std::vector<BandRealization> realizations;
  int outer = 0;
  int inner = 0;
};

/// `outer` ensemble-mean realizations under fresh seeds, each bracketed by the
/// 10th/90th percentiles of `inner` replica ensembles.
BootstrapBands bootstrap_bands(const EnsembleConfig& cfg, const PriceSeries& series, int outer,
                               int inner);

}  // namespace mglab
