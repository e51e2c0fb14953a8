#pragma once

// Exact inference on the label chain: sum-product in log space, Viterbi, and
// the entropy / KL divergence of a chain distribution expressed through its
// clique (edge) and separator (interior node) marginals.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sdcacrf/model.hpp"

namespace sdcacrf {

/// Node and edge tables of a chain of `length` nodes with `num_labels` states.
/// Holds probabilities, log-probabilities or signed directions alike.
struct CliqueTables {
  std::size_t length = 0;
  std::size_t num_labels = 0;
  std::vector<double> unary;     // length x K
  std::vector<double> pairwise;  // (length - 1) x K x K

  CliqueTables() = default;
  CliqueTables(std::size_t T, std::size_t K, double fill = 0.0)
      : length(T),
        num_labels(K),
        unary(T * K, fill),
        pairwise((T > 0 ? T - 1 : 0) * K * K, fill) {}

  std::size_t num_edges() const { return length > 0 ? length - 1 : 0; }

  double& node(std::size_t t, Label k) { return unary[t * num_labels + k]; }
  double node(std::size_t t, Label k) const { return unary[t * num_labels + k]; }
  double& edge(std::size_t t, Label k, Label k2) {
    return pairwise[(t * num_labels + k) * num_labels + k2];
  }
  double edge(std::size_t t, Label k, Label k2) const {
    return pairwise[(t * num_labels + k) * num_labels + k2];
  }
  std::span<const double> node_row(std::size_t t) const {
    return {unary.data() + t * num_labels, num_labels};
  }
  std::span<const double> edge_slice(std::size_t t) const {
    return {pairwise.data() + t * num_labels * num_labels, num_labels * num_labels};
  }

  bool same_shape(const CliqueTables& o) const {
    return length == o.length && num_labels == o.num_labels;
  }
};

/// Entries below this are clamped before taking logs of interpolated tables.
inline constexpr double kLogFloor = 1e-300;

/// Clique marginals of one sequence, kept in linear and log domain.
struct MarginalSet {
  CliqueTables prob;
  CliqueTables log_prob;

  std::size_t length() const { return prob.length; }
  std::size_t num_labels() const { return prob.num_labels; }

  static MarginalSet from_linear(CliqueTables linear) {
    MarginalSet m;
    m.log_prob = CliqueTables(linear.length, linear.num_labels);
    auto take_log = [](double x) {
      return x > 0.0 ? std::log(std::max(x, kLogFloor)) : -std::numeric_limits<double>::infinity();
    };
    std::transform(linear.unary.begin(), linear.unary.end(), m.log_prob.unary.begin(), take_log);
    std::transform(linear.pairwise.begin(), linear.pairwise.end(), m.log_prob.pairwise.begin(),
                   take_log);
    m.prob = std::move(linear);
    return m;
  }

  /// (1 - gamma) * mu + gamma * nu, i.e. mu + gamma * (nu - mu), written so
  /// that entries stay nonnegative and both endpoints are reproduced exactly.
  static MarginalSet interpolate(const MarginalSet& mu, const MarginalSet& nu, double gamma) {
    if (gamma == 0.0) return mu;
    if (gamma == 1.0) return nu;
    CliqueTables next = mu.prob;
    const double keep = 1.0 - gamma;
    for (std::size_t j = 0; j < next.unary.size(); ++j)
      next.unary[j] = keep * mu.prob.unary[j] + gamma * nu.prob.unary[j];
    for (std::size_t j = 0; j < next.pairwise.size(); ++j)
      next.pairwise[j] = keep * mu.prob.pairwise[j] + gamma * nu.prob.pairwise[j];
    return from_linear(std::move(next));
  }
};

/// nu - mu entrywise.
inline CliqueTables difference(const CliqueTables& nu, const CliqueTables& mu) {
  if (!nu.same_shape(mu)) throw std::invalid_argument("difference: shape mismatch");
  CliqueTables d(mu.length, mu.num_labels);
  for (std::size_t j = 0; j < d.unary.size(); ++j) d.unary[j] = nu.unary[j] - mu.unary[j];
  for (std::size_t j = 0; j < d.pairwise.size(); ++j)
    d.pairwise[j] = nu.pairwise[j] - mu.pairwise[j];
  return d;
}

/// Throws std::domain_error when `m` is not a normalized, locally consistent
/// set of chain marginals (within `tol`).
inline void check_marginals(const MarginalSet& m, double tol = 1e-8) {
  const CliqueTables& p = m.prob;
  const std::size_t K = p.num_labels;
  auto fail = [](const std::string& what) { throw std::domain_error("inconsistent marginals: " + what); };
  for (double v : p.unary)
    if (!(v >= 0.0) || !std::isfinite(v)) fail("negative or non-finite node entry");
  for (double v : p.pairwise)
    if (!(v >= 0.0) || !std::isfinite(v)) fail("negative or non-finite edge entry");
  for (std::size_t t = 0; t < p.length; ++t) {
    double s = 0.0;
    for (double v : p.node_row(t)) s += v;
    if (std::abs(s - 1.0) > tol) fail("node row " + std::to_string(t) + " sums to " + std::to_string(s));
  }
  for (std::size_t t = 0; t < p.num_edges(); ++t) {
    for (Label k = 0; k < K; ++k) {
      double row = 0.0, col = 0.0;
      for (Label j = 0; j < K; ++j) {
        row += p.edge(t, k, j);
        col += p.edge(t, j, k);
      }
      if (std::abs(row - p.node(t, k)) > tol || std::abs(col - p.node(t + 1, k)) > tol)
        fail("edge " + std::to_string(t) + " disagrees with its node marginals");
    }
  }
}

using OracleCounter = std::atomic<std::uint64_t>;

namespace detail {

inline double log_sum_exp(std::span<const double> xs) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : xs) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

inline void check_finite(const ScoreTables& s) {
  if (s.length == 0) throw std::invalid_argument("score tables for an empty sequence");
  auto bad = [](double v) { return !std::isfinite(v); };
  if (std::any_of(s.unary.begin(), s.unary.end(), bad) ||
      std::any_of(s.pair.begin(), s.pair.end(), bad)) {
    throw std::invalid_argument("non-finite score passed to inference");
  }
}

// Normalizes a log-domain row in place and writes its exponential.
inline void normalize_log_row(double* log_row, double* row, std::size_t size) {
  const double z = log_sum_exp({log_row, size});
  for (std::size_t j = 0; j < size; ++j) {
    log_row[j] -= z;
    row[j] = std::exp(log_row[j]);
  }
}

}  // namespace detail

struct OracleResult {
  MarginalSet marginals;
  double log_partition = 0.0;
};

/// Sum-product on the chain. Each call adds one to `counter` when given.
inline OracleResult marginal_oracle(const ScoreTables& s, OracleCounter* counter = nullptr) {
  detail::check_finite(s);
  if (counter) counter->fetch_add(1, std::memory_order_relaxed);

  const std::size_t T = s.length;
  const std::size_t K = s.num_labels;
  std::vector<double> fwd(T * K), bwd(T * K, 0.0), buf(K);

  for (Label k = 0; k < K; ++k) fwd[k] = s.node(0, k);
  for (std::size_t t = 1; t < T; ++t) {
    for (Label k2 = 0; k2 < K; ++k2) {
      for (Label k = 0; k < K; ++k) buf[k] = fwd[(t - 1) * K + k] + s.edge(k, k2);
      fwd[t * K + k2] = s.node(t, k2) + detail::log_sum_exp(buf);
    }
  }
  for (std::size_t t = T - 1; t-- > 0;) {
    for (Label k = 0; k < K; ++k) {
      for (Label k2 = 0; k2 < K; ++k2)
        buf[k2] = s.edge(k, k2) + s.node(t + 1, k2) + bwd[(t + 1) * K + k2];
      bwd[t * K + k] = detail::log_sum_exp(buf);
    }
  }

  OracleResult out;
  out.log_partition = detail::log_sum_exp({fwd.data() + (T - 1) * K, K});

  CliqueTables lin(T, K), lg(T, K);
  for (std::size_t t = 0; t < T; ++t) {
    for (Label k = 0; k < K; ++k) lg.node(t, k) = fwd[t * K + k] + bwd[t * K + k];
    detail::normalize_log_row(&lg.unary[t * K], &lin.unary[t * K], K);
  }
  for (std::size_t t = 0; t + 1 < T; ++t) {
    for (Label k = 0; k < K; ++k)
      for (Label k2 = 0; k2 < K; ++k2)
        lg.edge(t, k, k2) =
            fwd[t * K + k] + s.edge(k, k2) + s.node(t + 1, k2) + bwd[(t + 1) * K + k2];
    detail::normalize_log_row(&lg.pairwise[t * K * K], &lin.pairwise[t * K * K], K * K);
  }
  out.marginals.prob = std::move(lin);
  out.marginals.log_prob = std::move(lg);
  return out;
}

/// Highest-scoring labeling; ties go to the smaller label index.
inline Labeling viterbi(const ScoreTables& s) {
  detail::check_finite(s);
  const std::size_t T = s.length;
  const std::size_t K = s.num_labels;
  std::vector<double> best(T * K);
  std::vector<Label> back(T * K, 0);
  for (Label k = 0; k < K; ++k) best[k] = s.node(0, k);
  for (std::size_t t = 1; t < T; ++t) {
    for (Label k2 = 0; k2 < K; ++k2) {
      Label arg = 0;
      double top = best[(t - 1) * K] + s.edge(0, k2);
      for (Label k = 1; k < K; ++k) {
        const double v = best[(t - 1) * K + k] + s.edge(k, k2);
        if (v > top) {
          top = v;
          arg = k;
        }
      }
      best[t * K + k2] = top + s.node(t, k2);
      back[t * K + k2] = arg;
    }
  }
  Labeling y(T);
  Label last = 0;
  for (Label k = 1; k < K; ++k)
    if (best[(T - 1) * K + k] > best[(T - 1) * K + last]) last = k;
  y[T - 1] = last;
  for (std::size_t t = T - 1; t > 0; --t) y[t - 1] = back[t * K + y[t]];
  return y;
}

namespace detail {

// -sum p log p over one table, with 0 log 0 = 0.
inline double table_entropy(std::span<const double> p, std::span<const double> logp) {
  double h = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j)
    if (p[j] > 0.0) h -= p[j] * logp[j];
  return h;
}

// KL(p || q); +inf when p puts mass where q has none.
inline double table_kl(std::span<const double> p, std::span<const double> logp,
                       std::span<const double> logq) {
  double d = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (p[j] <= 0.0) continue;
    if (logq[j] == -std::numeric_limits<double>::infinity())
      return std::numeric_limits<double>::infinity();
    d += p[j] * (logp[j] - logq[j]);
  }
  return d;
}

}  // namespace detail

/// Entropy of the chain distribution with marginals `m`: edge entropies minus
/// the entropies of interior nodes (the separators). A single node is its own
/// clique.
inline double entropy_marginals(const MarginalSet& m) {
  check_marginals(m);
  const CliqueTables& p = m.prob;
  const CliqueTables& lp = m.log_prob;
  if (p.length == 1) return detail::table_entropy(p.node_row(0), lp.node_row(0));
  double h = 0.0;
  for (std::size_t t = 0; t < p.num_edges(); ++t)
    h += detail::table_entropy(p.edge_slice(t), lp.edge_slice(t));
  for (std::size_t t = 1; t + 1 < p.length; ++t)
    h -= detail::table_entropy(p.node_row(t), lp.node_row(t));
  return h;
}

/// KL divergence between the chain distributions with marginals `m` and `n`.
/// Returns +infinity on a support violation; throws on malformed input.
inline double kl_marginals(const MarginalSet& m, const MarginalSet& n) {
  if (!m.prob.same_shape(n.prob)) throw std::invalid_argument("kl_marginals: shape mismatch");
  check_marginals(m);
  check_marginals(n);
  const CliqueTables& p = m.prob;
  if (p.length == 1)
    return detail::table_kl(p.node_row(0), m.log_prob.node_row(0), n.log_prob.node_row(0));
  double d = 0.0;
  for (std::size_t t = 0; t < p.num_edges(); ++t) {
    const double c = detail::table_kl(p.edge_slice(t), m.log_prob.edge_slice(t),
                                      n.log_prob.edge_slice(t));
    if (std::isinf(c)) return c;
    d += c;
  }
  for (std::size_t t = 1; t + 1 < p.length; ++t)
    d -= detail::table_kl(p.node_row(t), m.log_prob.node_row(t), n.log_prob.node_row(t));
  return d;
}

/// Uniform marginals for a chain of length T over K labels.
inline MarginalSet uniform_marginals(std::size_t T, std::size_t K) {
  CliqueTables c(T, K);
  std::fill(c.unary.begin(), c.unary.end(), 1.0 / static_cast<double>(K));
  std::fill(c.pairwise.begin(), c.pairwise.end(), 1.0 / static_cast<double>(K * K));
  return MarginalSet::from_linear(std::move(c));
}

/// Point mass on one labeling.
inline MarginalSet point_marginals(const Labeling& y, std::size_t K) {
  CliqueTables c(y.size(), K);
  for (std::size_t t = 0; t < y.size(); ++t) {
    c.node(t, y[t]) = 1.0;
    if (t + 1 < y.size()) c.edge(t, y[t], y[t + 1]) = 1.0;
  }
  return MarginalSet::from_linear(std::move(c));
}

}  // namespace sdcacrf
