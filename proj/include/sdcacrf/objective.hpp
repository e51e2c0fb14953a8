#pragma once

// Primal and dual objectives of l2-regularized CRF training and the maps
// between them.
//
//   P(w)  = lambda/2 |w|^2 + 1/n sum_i ( log Z_i(w) - <w, F(x_i, y_i)> )
//   D(mu) = -lambda/2 |w(mu)|^2 + 1/n sum_i H(mu_i)
//   w(mu) = 1/(lambda n) sum_i ( F(x_i, y_i) - E_{mu_i} F(x_i, .) )
//
// At w = w(mu), P - D equals the mean over blocks of KL(mu_i || p(.|x_i; w)).

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sdcacrf/dataset.hpp"
#include "sdcacrf/inference.hpp"
#include "sdcacrf/model.hpp"

namespace sdcacrf {

/// Dense weights with a cached squared norm that follows sparse updates.
class WeightVector {
 public:
  WeightVector() = default;
  explicit WeightVector(std::vector<double> values) : values_(std::move(values)) {
    refresh_norm();
  }

  std::size_t size() const { return values_.size(); }
  std::span<const double> values() const { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  double squared_norm() const { return sq_norm_; }

  double recomputed_squared_norm() const {
    double s = 0.0;
    for (double v : values_) s += v * v;
    return s;
  }
  void refresh_norm() { sq_norm_ = recomputed_squared_norm(); }

  /// w += gamma * v, given <w, v> and |v|^2 from before the update.
  void add_scaled(const SparseFeature& v, double gamma, double dot_wv, double v_sq_norm) {
    v.add_to(values_, gamma);
    sq_norm_ += 2.0 * gamma * dot_wv + gamma * gamma * v_sq_norm;
  }

  void add_scaled(const SparseFeature& v, double gamma) {
    add_scaled(v, gamma, v.dot(values_), v.squared_norm());
  }

 private:
  std::vector<double> values_;
  double sq_norm_ = 0.0;
};

/// dense += scale * E_tables[F(x, .)], using node tables for emission and
/// bias features and edge tables for transitions. `tables` may be signed.
inline void accumulate_expected_features(const Sequence& seq, const CliqueTables& tables,
                                         const FeatureIndexer& idx, double scale,
                                         std::span<double> dense) {
  const std::size_t T = seq.length();
  const std::size_t K = idx.num_labels();
  if (tables.length != T || tables.num_labels != K)
    throw std::invalid_argument("marginal tables do not match the sequence");
  for (std::size_t t = 0; t < T; ++t) {
    for (AttributeId a : seq.tokens[t].attributes) {
      double* wa = &dense[idx.emission(a, 0)];
      for (Label k = 0; k < K; ++k) wa[k] += scale * tables.node(t, k);
    }
    for (Label k = 0; k < K; ++k) dense[idx.bias(BiasSlot::total, k)] += scale * tables.node(t, k);
  }
  for (Label k = 0; k < K; ++k) {
    dense[idx.bias(BiasSlot::first, k)] += scale * tables.node(0, k);
    dense[idx.bias(BiasSlot::last, k)] += scale * tables.node(T - 1, k);
  }
  for (std::size_t t = 0; t + 1 < T; ++t)
    for (Label k = 0; k < K; ++k)
      for (Label k2 = 0; k2 < K; ++k2)
        dense[idx.transition(k, k2)] += scale * tables.edge(t, k, k2);
}

/// Sparse form of scale * E_tables[F(x, .)].
inline SparseFeature expected_features(const Sequence& seq, const CliqueTables& tables,
                                       const FeatureIndexer& idx, double scale = 1.0) {
  const std::size_t T = seq.length();
  const std::size_t K = idx.num_labels();
  if (tables.length != T || tables.num_labels != K)
    throw std::invalid_argument("marginal tables do not match the sequence");
  std::vector<std::pair<std::size_t, double>> raw;
  for (std::size_t t = 0; t < T; ++t) {
    for (AttributeId a : seq.tokens[t].attributes)
      for (Label k = 0; k < K; ++k) raw.emplace_back(idx.emission(a, k), scale * tables.node(t, k));
    for (Label k = 0; k < K; ++k)
      raw.emplace_back(idx.bias(BiasSlot::total, k), scale * tables.node(t, k));
  }
  for (Label k = 0; k < K; ++k) {
    raw.emplace_back(idx.bias(BiasSlot::first, k), scale * tables.node(0, k));
    raw.emplace_back(idx.bias(BiasSlot::last, k), scale * tables.node(T - 1, k));
  }
  for (std::size_t t = 0; t + 1 < T; ++t)
    for (Label k = 0; k < K; ++k)
      for (Label k2 = 0; k2 < K; ++k2)
        raw.emplace_back(idx.transition(k, k2), scale * tables.edge(t, k, k2));
  return SparseFeature::from_unsorted(std::move(raw));
}

/// sum_i F(x_i, y_i) as a dense vector.
inline std::vector<double> gold_feature_sum(const Dataset& ds) {
  const FeatureIndexer idx = ds.indexer();
  std::vector<double> sum(idx.dimension(), 0.0);
  for (const auto& seq : ds.sequences) extract_features(seq, seq.gold(), idx).add_to(sum);
  return sum;
}

inline void check_lambda(double lambda) {
  if (!(lambda > 0.0) || !std::isfinite(lambda))
    throw std::invalid_argument("regularization lambda must be positive and finite");
}

/// w(mu) = 1/(lambda n) sum_i (F(x_i, y_i) - E_{mu_i} F(x_i, .)).
inline WeightVector conjugate_weights(const Dataset& ds, std::span<const MarginalSet> marginals,
                                      double lambda) {
  check_lambda(lambda);
  if (marginals.size() != ds.size())
    throw std::invalid_argument("got " + std::to_string(marginals.size()) +
                                " marginal sets for " + std::to_string(ds.size()) + " sequences");
  const FeatureIndexer idx = ds.indexer();
  std::vector<double> w = gold_feature_sum(ds);
  for (std::size_t i = 0; i < ds.size(); ++i)
    accumulate_expected_features(ds.sequences[i], marginals[i].prob, idx, -1.0, w);
  const double scale = 1.0 / (lambda * static_cast<double>(ds.size()));
  for (double& v : w) v *= scale;
  return WeightVector(std::move(w));
}

/// Oracle marginals p(.|x_i; w) of every sequence and the primal value.
struct PrimalEvaluation {
  double value = 0.0;
  std::vector<OracleResult> oracle;
};

inline PrimalEvaluation evaluate_primal(std::span<const double> w, const Dataset& ds,
                                        double lambda, OracleCounter* counter = nullptr) {
  check_lambda(lambda);
  const FeatureIndexer idx = ds.indexer();
  PrimalEvaluation out;
  out.oracle.reserve(ds.size());
  double loss = 0.0, sq = 0.0;
  for (double v : w) sq += v * v;
  for (const auto& seq : ds.sequences) {
    const ScoreTables s = score_tables(w, seq, idx);
    out.oracle.push_back(marginal_oracle(s, counter));
    loss += out.oracle.back().log_partition - s.score(seq.gold());
  }
  out.value = 0.5 * lambda * sq + loss / static_cast<double>(ds.size());
  return out;
}

inline double primal_objective(std::span<const double> w, const Dataset& ds, double lambda,
                               OracleCounter* counter = nullptr) {
  return evaluate_primal(w, ds, lambda, counter).value;
}

/// D(mu) evaluated from scratch.
inline double dual_objective(const Dataset& ds, std::span<const MarginalSet> marginals,
                             double lambda) {
  const WeightVector w = conjugate_weights(ds, marginals, lambda);
  double h = 0.0;
  for (const auto& m : marginals) h += entropy_marginals(m);
  return -0.5 * lambda * w.squared_norm() + h / static_cast<double>(ds.size());
}

/// grad P(w) = lambda (w - w(p(.|x; w))).
inline std::vector<double> primal_gradient(std::span<const double> w, const Dataset& ds,
                                           double lambda, OracleCounter* counter = nullptr) {
  const PrimalEvaluation ev = evaluate_primal(w, ds, lambda, counter);
  std::vector<MarginalSet> conj;
  conj.reserve(ev.oracle.size());
  for (const auto& r : ev.oracle) conj.push_back(r.marginals);
  const WeightVector back = conjugate_weights(ds, conj, lambda);
  std::vector<double> g(w.size());
  for (std::size_t j = 0; j < w.size(); ++j) g[j] = lambda * (w[j] - back[j]);
  return g;
}

/// Per-block Fenchel gap: KL between the stored marginals and the oracle's.
inline double block_gap(const MarginalSet& mu, const MarginalSet& nu) {
  const double g = kl_marginals(mu, nu);
  // Rounding can push an exact zero slightly negative.
  return g < 0.0 && g > -1e-12 ? 0.0 : g;
}

/// Returns (P(w) - D(p(.|x; w)), |grad P(w)|^2 / (2 lambda)); the two agree.
inline std::pair<double, double> gradient_gap_identity_check(std::span<const double> w,
                                                             const Dataset& ds, double lambda) {
  const PrimalEvaluation ev = evaluate_primal(w, ds, lambda);
  std::vector<MarginalSet> conj;
  conj.reserve(ev.oracle.size());
  for (const auto& r : ev.oracle) conj.push_back(r.marginals);
  const double gap = ev.value - dual_objective(ds, conj, lambda);

  const WeightVector back = conjugate_weights(ds, conj, lambda);
  double gsq = 0.0;
  for (std::size_t j = 0; j < w.size(); ++j) {
    const double g = lambda * (w[j] - back[j]);
    gsq += g * g;
  }
  return {gap, gsq / (2.0 * lambda)};
}

/// Dual iterate of SDCA: marginals, their conjugate weights, stored gap
/// estimates and bookkeeping counters.
struct DualState {
  std::vector<MarginalSet> marginals;
  WeightVector weights;
  double lambda = 1.0;
  std::vector<double> gap_estimates;
  std::uint64_t updates = 0;
  std::uint64_t oracle_calls = 0;       // one per parameter update
  std::uint64_t eval_oracle_calls = 0;  // batch checks and telemetry
};

inline double dual_objective(const Dataset& ds, const DualState& state) {
  return dual_objective(ds, state.marginals, state.lambda);
}

/// True block gaps KL(mu_i || p(.|x_i; w)) at the state's current weights.
inline std::vector<double> batch_block_gaps(const Dataset& ds, const DualState& state,
                                            OracleCounter* counter = nullptr) {
  const FeatureIndexer idx = ds.indexer();
  std::vector<double> gaps(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const ScoreTables s = score_tables(state.weights.values(), ds.sequences[i], idx);
    gaps[i] = block_gap(state.marginals[i], marginal_oracle(s, counter).marginals);
  }
  return gaps;
}

}  // namespace sdcacrf
