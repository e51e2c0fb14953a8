#pragma once

// Stochastic dual coordinate ascent over clique marginals.
//
// Each update samples a sequence i, calls the marginalization oracle once at
// the current weights to get nu_i = p(.|x_i; w), moves mu_i towards nu_i by
// an exactly line-searched step and applies the matching sparse change to w.
// The KL between mu_i and nu_i, measured before the move, is kept as the
// block's gap estimate; their mean drives adaptive sampling and stopping.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sdcacrf/dataset.hpp"
#include "sdcacrf/inference.hpp"
#include "sdcacrf/line_search.hpp"
#include "sdcacrf/metrics.hpp"
#include "sdcacrf/model.hpp"
#include "sdcacrf/objective.hpp"
#include "sdcacrf/sampling.hpp"

namespace sdcacrf {

inline constexpr double kInitialGapEstimate = 100.0;

/// mu_i = eps * uniform + (1 - eps) * point mass on the gold labeling, for
/// node and edge tables alike, and w = w(mu).
inline DualState init_dual(const Dataset& ds, double lambda, double epsilon) {
  if (!(epsilon > 0.0 && epsilon <= 1.0))
    throw std::invalid_argument("initialization epsilon must lie in (0, 1]");
  check_lambda(lambda);
  const std::size_t K = ds.num_labels();
  DualState st;
  st.lambda = lambda;
  st.marginals.reserve(ds.size());
  for (const auto& seq : ds.sequences) {
    const MarginalSet uni = uniform_marginals(seq.length(), K);
    const MarginalSet point = point_marginals(seq.gold(), K);
    st.marginals.push_back(MarginalSet::interpolate(point, uni, epsilon));
  }
  st.weights = conjugate_weights(ds, st.marginals, lambda);
  st.gap_estimates.assign(ds.size(), kInitialGapEstimate);
  return st;
}

struct AscentDirection {
  MarginalSet nu;      // oracle marginals at the current weights
  CliqueTables delta;  // nu - mu_i
  double gap = 0.0;    // KL(mu_i || nu)
};

/// One oracle call at the current weights; records the block gap estimate.
inline AscentDirection ascent_direction(const Dataset& ds, DualState& st, std::size_t i) {
  const ScoreTables s = score_tables(st.weights.values(), ds.sequences.at(i), ds.indexer());
  AscentDirection dir;
  dir.nu = marginal_oracle(s).marginals;
  ++st.oracle_calls;
  dir.delta = difference(dir.nu.prob, st.marginals[i].prob);
  dir.gap = block_gap(st.marginals[i], dir.nu);
  st.gap_estimates[i] = dir.gap;
  return dir;
}

struct PrimalDirection {
  SparseFeature v;
  double dot_wv = 0.0;
  double sq_norm = 0.0;
};

/// v_i = 1/(lambda n) B_i delta_i = -1/(lambda n) E_delta[F(x_i, .)]; the gold
/// term drops out because every slice of delta sums to zero.
inline PrimalDirection primal_direction(const Dataset& ds, std::size_t i,
                                        const CliqueTables& delta, const WeightVector& w,
                                        double lambda) {
  PrimalDirection d;
  const double scale = -1.0 / (lambda * static_cast<double>(ds.size()));
  d.v = expected_features(ds.sequences.at(i), delta, ds.indexer(), scale);
  d.dot_wv = d.v.dot(w.values());
  d.sq_norm = d.v.squared_norm();
  return d;
}

/// Safe constant step 1 / (1 + R / (lambda n)).
inline double fixed_step(double max_radius, double lambda, std::size_t n) {
  return 1.0 / (1.0 + max_radius / (lambda * static_cast<double>(n)));
}

inline double default_lambda(const Dataset& ds) { return 1.0 / static_cast<double>(ds.size()); }

struct TrainConfig {
  double lambda = 0.0;  // <= 0 selects 1/n
  double epsilon = 1e-2;
  LineSearchConfig line_search;
  SamplerConfig sampler;
  double stop_gap = 1e-6;
  double max_epochs = 100.0;
  std::uint64_t seed = 0;
  std::size_t refresh_every_epochs = 5;
};

struct StepRecord {
  std::size_t index = 0;
  double step = 0.0;
  double dual_gain = 0.0;  // D after - D before
  double block_gap = 0.0;  // KL(mu_i || nu_i) before the step
  std::uint64_t oracle_calls = 0;
  std::size_t newton_iterations = 0;
  double dual_after = 0.0;
};

class Trainer {
 public:
  Trainer(const Dataset& ds, TrainConfig cfg)
      : ds_(ds), cfg_(std::move(cfg)), rng_(cfg_.seed) {
    ds_.validate();
    if (cfg_.lambda <= 0.0) cfg_.lambda = default_lambda(ds_);
    cfg_.line_search.validate();
    cfg_.sampler.validate();
    if (!(cfg_.stop_gap >= 0.0)) throw std::invalid_argument("stop gap must be nonnegative");
    if (cfg_.refresh_every_epochs == 0) throw std::invalid_argument("refresh cadence must be >= 1");

    state_ = init_dual(ds_, cfg_.lambda, cfg_.epsilon);
    radii_ = RadiusTable::build(ds_, cfg_.lambda);
    if (cfg_.line_search.mode == LineSearchMode::fixed_step) {
      const double safe = fixed_step(radii_.max, cfg_.lambda, ds_.size());
      if (cfg_.line_search.fixed_step <= 0.0) cfg_.line_search.fixed_step = safe;
      check_ascent_ = cfg_.line_search.fixed_step <= safe;
    }

    entropies_.reserve(ds_.size());
    for (const auto& m : state_.marginals) entropies_.push_back(entropy_marginals(m));
    resum();
    sampler_.emplace(state_.gap_estimates,
                     detail::needs_smoothness(cfg_.sampler.scheme) ? radii_.smoothness
                                                                   : std::vector<double>{},
                     cfg_.sampler);
  }

  const TrainConfig& config() const { return cfg_; }
  const DualState& state() const { return state_; }
  const RadiusTable& radii() const { return radii_; }
  const Dataset& dataset() const { return ds_; }
  std::uint64_t updates() const { return state_.updates; }
  double epochs() const {
    return static_cast<double>(state_.updates) / static_cast<double>(ds_.size());
  }

  /// D(mu) from the cached block entropies and |w|^2.
  double dual() const {
    return -0.5 * cfg_.lambda * state_.weights.squared_norm() +
           entropy_sum_ / static_cast<double>(ds_.size());
  }

  /// Mean of the stored block gap estimates.
  double gap_estimate() const { return gap_sum_ / static_cast<double>(ds_.size()); }

  /// Largest relative gap between incremental and recomputed weights seen at
  /// a refresh.
  double max_weight_drift() const { return max_drift_; }

  StepRecord step() {
    const std::size_t n = ds_.size();
    const double lambda_n = cfg_.lambda * static_cast<double>(n);
    StepRecord rec;
    rec.index = sampler_->draw(rng_);
    const std::size_t i = rec.index;
    const std::uint64_t calls_before = state_.oracle_calls;

    const double old_gap = state_.gap_estimates[i];
    AscentDirection dir = ascent_direction(ds_, state_, i);
    gap_sum_ += dir.gap - old_gap;
    sampler_->update(i, dir.gap);
    rec.block_gap = dir.gap;

    const PrimalDirection pd = primal_direction(ds_, i, dir.delta, state_.weights, cfg_.lambda);
    const MarginalSet& mu = state_.marginals[i];
    LineSearchResult ls;
    if (cfg_.line_search.mode == LineSearchMode::fixed_step) {
      ls = {cfg_.line_search.fixed_step, 0};
    } else if (is_zero(dir.delta)) {
      ls = {0.0, 0};
    } else {
      ls = line_search(LineObjective(mu, dir.nu, pd.dot_wv, pd.sq_norm, lambda_n),
                       cfg_.line_search);
    }
    rec.step = ls.step;
    rec.newton_iterations = ls.iterations;

    const double dual_before = dual();
    MarginalSet next = MarginalSet::interpolate(mu, dir.nu, ls.step);
    const double h_new = entropy_marginals(next);
    const double h_old = entropies_[i];
    const double n_gain =
        (h_new - h_old) - lambda_n * (ls.step * pd.dot_wv + 0.5 * ls.step * ls.step * pd.sq_norm);
    rec.dual_gain = n_gain / static_cast<double>(n);

    const double slack = 1e-12 * std::abs(dual_before) +
                         64.0 * std::numeric_limits<double>::epsilon() *
                             (std::abs(h_new) + std::abs(h_old)) / static_cast<double>(n);
    if (check_ascent_ && rec.dual_gain < -slack) {
      std::ostringstream msg;
      msg << "dual objective decreased by " << -rec.dual_gain << " at update " << state_.updates
          << " (block " << i << ", step " << ls.step << ", dual " << dual_before << ")";
      throw std::runtime_error(msg.str());
    }

    state_.marginals[i] = std::move(next);
    state_.weights.add_scaled(pd.v, ls.step, pd.dot_wv, pd.sq_norm);
    entropy_sum_ += h_new - h_old;
    entropies_[i] = h_new;
    ++state_.updates;
    rec.oracle_calls = state_.oracle_calls - calls_before;
    rec.dual_after = dual();

    if (state_.updates % (cfg_.refresh_every_epochs * n) == 0) refresh_weights();
    return rec;
  }

  /// Recomputes w = w(mu) from scratch and re-sums the cached quantities.
  void refresh_weights() {
    WeightVector fresh = conjugate_weights(ds_, state_.marginals, cfg_.lambda);
    double diff = 0.0;
    for (std::size_t j = 0; j < fresh.size(); ++j) {
      const double e = fresh[j] - state_.weights[j];
      diff += e * e;
    }
    const double ref = fresh.squared_norm();
    if (ref > 0.0) max_drift_ = std::max(max_drift_, std::sqrt(diff / ref));
    state_.weights = std::move(fresh);
    resum();
  }

  /// Full pass of oracle calls (counted apart from training calls) that
  /// replaces every gap estimate by its true value. Returns the true gap.
  double confirm_gap() {
    refresh_weights();
    OracleCounter calls{0};
    const std::vector<double> gaps = batch_block_gaps(ds_, state_, &calls);
    state_.eval_oracle_calls += calls.load();
    for (std::size_t i = 0; i < gaps.size(); ++i) {
      state_.gap_estimates[i] = gaps[i];
      sampler_->update(i, gaps[i]);
    }
    resum();
    return gap_estimate();
  }

  /// P(w) at the current weights; oracle calls go to the evaluation tally.
  double primal() {
    OracleCounter calls{0};
    const double p = primal_objective(state_.weights.values(), ds_, cfg_.lambda, &calls);
    state_.eval_oracle_calls += calls.load();
    return p;
  }

 private:
  static bool is_zero(const CliqueTables& t) {
    for (double v : t.unary)
      if (v != 0.0) return false;
    for (double v : t.pairwise)
      if (v != 0.0) return false;
    return true;
  }

  void resum() {
    entropy_sum_ = 0.0;
    for (double h : entropies_) entropy_sum_ += h;
    gap_sum_ = 0.0;
    for (double g : state_.gap_estimates) gap_sum_ += g;
  }

  const Dataset& ds_;
  TrainConfig cfg_;
  Rng rng_;
  DualState state_;
  RadiusTable radii_;
  std::vector<double> entropies_;
  double entropy_sum_ = 0.0;
  double gap_sum_ = 0.0;
  double max_drift_ = 0.0;
  bool check_ascent_ = true;
  std::optional<BlockSampler> sampler_;
};

struct TelemetryConfig {
  std::uint64_t metrics_every = 0;  // updates between rows; 0 means once per epoch
  double true_gap_every_epochs = 5.0;  // <= 0 disables periodic batch rows
  const Dataset* test = nullptr;
  bool record_time = true;
};

struct TrainCallbacks {
  std::function<void(const StepRecord&, const Trainer&)> on_step;
  std::function<void(const MetricsRecord&)> on_metrics;
};

struct TrainResult {
  bool converged = false;
  std::uint64_t updates = 0;
  std::optional<double> true_gap;  // last confirmed gap
  double dual = 0.0;
  DualState state;
};

/// Runs SDCA until a batch check confirms gap <= stop_gap or the epoch
/// budget is spent. The batch check is only run when the mean gap estimate
/// has fallen below the threshold.
inline TrainResult sdca_train(const Dataset& ds, const TrainConfig& cfg,
                              const TelemetryConfig& telemetry = {},
                              const TrainCallbacks& callbacks = {}) {
  using Clock = std::chrono::steady_clock;
  if (!(cfg.max_epochs > 0.0)) throw std::invalid_argument("epoch budget must be positive");
  const auto start = Clock::now();
  Trainer tr(ds, cfg);
  const std::uint64_t n = ds.size();
  const auto max_updates =
      static_cast<std::uint64_t>(std::ceil(cfg.max_epochs * static_cast<double>(n)));
  const std::uint64_t every = telemetry.metrics_every ? telemetry.metrics_every : n;
  const std::uint64_t batch_every =
      telemetry.true_gap_every_epochs > 0.0
          ? std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::llround(
                                           telemetry.true_gap_every_epochs * static_cast<double>(n))))
          : 0;

  auto row = [&](std::optional<double> true_gap_value, bool batch) {
    if (!callbacks.on_metrics) return;
    MetricsRecord r;
    r.update_count = tr.updates();
    r.oracle_calls = tr.state().oracle_calls;
    r.epoch_equivalent = tr.epochs();
    r.dual = tr.dual();
    r.gap_estimate = tr.gap_estimate();
    if (batch) {
      const double p = tr.primal();
      r.primal = p;
      r.true_gap = true_gap_value ? *true_gap_value : p - r.dual;
      if (telemetry.test) r.test_error = token_error_rate(tr.state().weights.values(), *telemetry.test);
    }
    if (telemetry.record_time)
      r.elapsed_s = std::chrono::duration<double>(Clock::now() - start).count();
    callbacks.on_metrics(r);
  };

  TrainResult result;
  row(std::nullopt, true);
  while (tr.updates() < max_updates) {
    const StepRecord rec = tr.step();
    if (callbacks.on_step) callbacks.on_step(rec, tr);
    const std::uint64_t u = tr.updates();

    if (tr.gap_estimate() <= cfg.stop_gap) {
      const double g = tr.confirm_gap();
      result.true_gap = g;
      row(g, true);
      if (g <= cfg.stop_gap) {
        result.converged = true;
        break;
      }
      continue;
    }
    if ((batch_every && u % batch_every == 0) || u == max_updates) {
      row(std::nullopt, true);
    } else if (u % every == 0) {
      row(std::nullopt, false);
    }
  }
  result.updates = tr.updates();
  result.dual = tr.dual();
  result.state = tr.state();
  return result;
}

}  // namespace sdcacrf
