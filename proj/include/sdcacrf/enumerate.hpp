#pragma once

// Brute-force inference over all K^T labelings. Only usable on tiny chains;
// it exists to check the message-passing oracle and the marginal-based
// entropy and divergence formulas.

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

#include "sdcacrf/inference.hpp"
#include "sdcacrf/model.hpp"

namespace sdcacrf {

inline constexpr std::size_t kMaxEnumeratedLabelings = 1'000'000;

/// Calls f(labeling, flat_index) for every labeling in lexicographic order
/// (position 0 most significant).
template <typename F>
void for_each_labeling(std::size_t T, std::size_t K, F&& f) {
  std::size_t total = 1;
  for (std::size_t t = 0; t < T; ++t) {
    total *= K;
    if (total > kMaxEnumeratedLabelings)
      throw std::length_error("too many labelings to enumerate");
  }
  Labeling y(T, 0);
  for (std::size_t flat = 0; flat < total; ++flat) {
    f(static_cast<const Labeling&>(y), flat);
    for (std::size_t t = T; t-- > 0;) {
      if (++y[t] < K) break;
      y[t] = 0;
    }
  }
}

struct EnumerationResult {
  std::vector<double> joint;  // indexed as in for_each_labeling
  MarginalSet marginals;
  double log_partition = 0.0;
};

inline EnumerationResult enumerate_oracle(const ScoreTables& s) {
  const std::size_t T = s.length;
  const std::size_t K = s.num_labels;
  std::vector<double> scores;
  for_each_labeling(T, K, [&](const Labeling& y, std::size_t) { scores.push_back(s.score(y)); });

  double top = -std::numeric_limits<double>::infinity();
  for (double v : scores) top = std::max(top, v);
  double z = 0.0;
  for (double v : scores) z += std::exp(v - top);

  EnumerationResult out;
  out.log_partition = top + std::log(z);
  out.joint.resize(scores.size());
  CliqueTables c(T, K);
  for_each_labeling(T, K, [&](const Labeling& y, std::size_t flat) {
    const double p = std::exp(scores[flat] - out.log_partition);
    out.joint[flat] = p;
    for (std::size_t t = 0; t < T; ++t) {
      c.node(t, y[t]) += p;
      if (t + 1 < T) c.edge(t, y[t], y[t + 1]) += p;
    }
  });
  out.marginals = MarginalSet::from_linear(std::move(c));
  return out;
}

/// Probability of labeling y under the chain distribution with marginals m:
/// product of edge marginals over product of interior node marginals.
inline double joint_from_marginals(const MarginalSet& m, const Labeling& y) {
  const CliqueTables& p = m.prob;
  if (p.length == 1) return p.node(0, y[0]);
  double num = 1.0, den = 1.0;
  for (std::size_t t = 0; t + 1 < p.length; ++t) num *= p.edge(t, y[t], y[t + 1]);
  for (std::size_t t = 1; t + 1 < p.length; ++t) den *= p.node(t, y[t]);
  if (num == 0.0) return 0.0;
  return num / den;
}

/// Full joint table reconstructed from marginals, in enumeration order.
inline std::vector<double> joint_table(const MarginalSet& m) {
  std::vector<double> out;
  for_each_labeling(m.length(), m.num_labels(),
                    [&](const Labeling& y, std::size_t) { out.push_back(joint_from_marginals(m, y)); });
  return out;
}

inline double joint_entropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

inline double joint_kl(const std::vector<double>& p, const std::vector<double>& q) {
  double d = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (p[j] <= 0.0) continue;
    if (q[j] <= 0.0) return std::numeric_limits<double>::infinity();
    d += p[j] * std::log(p[j] / q[j]);
  }
  return d;
}

}  // namespace sdcacrf
