#pragma once

// Block selection for SDCA: uniform, importance (p ~ L_i), gap (p ~ g_i),
// gap x importance and deterministic max-gap, each mixed with a fraction of
// uniform draws. Also the feature-radius estimate behind L_i and the fixed
// step size, and the non-uniformity chi(g) of a gap vector.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "sdcacrf/dataset.hpp"
#include "sdcacrf/model.hpp"

namespace sdcacrf {

using Rng = std::mt19937_64;

/// Uniform double in [0, 1) from the top 53 bits of one draw.
inline double unit_real(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Uniform integer in [0, n) without modulo bias.
inline std::uint64_t bounded(Rng& rng, std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("bounded: empty range");
  const std::uint64_t limit = Rng::max() - (Rng::max() - n + 1) % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x > limit);
  return x % n;
}

enum class SamplingScheme { uniform, importance, gap, gap_importance, max };

inline SamplingScheme parse_scheme(std::string_view s) {
  if (s == "uniform") return SamplingScheme::uniform;
  if (s == "importance") return SamplingScheme::importance;
  if (s == "gap") return SamplingScheme::gap;
  if (s == "gap-importance" || s == "gap_importance") return SamplingScheme::gap_importance;
  if (s == "max") return SamplingScheme::max;
  throw std::invalid_argument("unknown sampling scheme '" + std::string(s) + "'");
}

inline std::string_view scheme_name(SamplingScheme s) {
  switch (s) {
    case SamplingScheme::uniform: return "uniform";
    case SamplingScheme::importance: return "importance";
    case SamplingScheme::gap: return "gap";
    case SamplingScheme::gap_importance: return "gap-importance";
    case SamplingScheme::max: return "max";
  }
  return "?";
}

struct SamplerConfig {
  SamplingScheme scheme = SamplingScheme::uniform;
  double nonuniform_ratio = 0.8;  // share of draws taken from the scheme
  double gap_floor = 1e-12;

  void validate() const {
    if (!(nonuniform_ratio >= 0.0 && nonuniform_ratio <= 1.0))
      throw std::invalid_argument("non-uniform ratio must lie in [0, 1]");
    if (!(gap_floor > 0.0)) throw std::invalid_argument("gap floor must be positive");
  }
};

/// Upper bound on max_y |psi(y)|^2 for one sequence: |F(x, gold)|^2 plus
/// |F(x, z...z)|^2 for a label z absent from the gold labeling (disjoint
/// supports). When every label occurs, falls back to 2 max_k |F(x, k...k)|^2.
inline double estimate_radius(const Sequence& seq, const FeatureIndexer& idx) {
  const std::size_t K = idx.num_labels();
  const Labeling gold = seq.gold();
  std::vector<bool> present(K, false);
  for (Label k : gold) present[k] = true;

  double best_absent = -1.0, best_any = 0.0;
  for (Label z = 0; z < K; ++z) {
    const double nz = extract_features(seq, Labeling(seq.length(), z), idx).squared_norm();
    best_any = std::max(best_any, nz);
    if (!present[z]) best_absent = std::max(best_absent, nz);
  }
  if (best_absent < 0.0) return 2.0 * best_any;
  return extract_features(seq, gold, idx).squared_norm() + best_absent;
}

struct RadiusTable {
  std::vector<double> radius;      // R_i
  std::vector<double> smoothness;  // L_i = lambda + R_i / n
  double max = 0.0;
  double mean = 0.0;

  static RadiusTable build(const Dataset& ds, double lambda) {
    const FeatureIndexer idx = ds.indexer();
    RadiusTable t;
    const double n = static_cast<double>(ds.size());
    for (const auto& seq : ds.sequences) {
      const double r = estimate_radius(seq, idx);
      t.radius.push_back(r);
      t.smoothness.push_back(lambda + r / n);
      t.max = std::max(t.max, r);
      t.mean += r / n;
    }
    return t;
  }
};

/// chi(g) = sqrt(mean(g^2)) / mean(g), which lies in [1, sqrt(n)]. Gaps are
/// scaled by their maximum first, which keeps constant and one-hot vectors
/// exact.
inline double nonuniformity(std::span<const double> gaps) {
  if (gaps.empty()) throw std::invalid_argument("nonuniformity of an empty gap vector");
  double top = 0.0;
  for (double g : gaps) {
    if (!(g >= 0.0) || !std::isfinite(g)) throw std::invalid_argument("gaps must be finite and nonnegative");
    top = std::max(top, g);
  }
  if (top == 0.0) throw std::invalid_argument("nonuniformity undefined for all-zero gaps");
  double s1 = 0.0, s2 = 0.0;
  for (double g : gaps) {
    const double x = g / top;
    s1 += x;
    s2 += x * x;
  }
  return std::sqrt(static_cast<double>(gaps.size()) * s2) / s1;
}

namespace detail {

inline double scheme_weight(SamplingScheme scheme, double gap, double smoothness, double floor) {
  switch (scheme) {
    case SamplingScheme::uniform: return 1.0;
    case SamplingScheme::importance: return smoothness;
    case SamplingScheme::gap: return std::max(gap, floor);
    case SamplingScheme::gap_importance: return std::max(gap, floor) * smoothness;
    case SamplingScheme::max: return 0.0;
  }
  return 1.0;
}

inline bool needs_smoothness(SamplingScheme s) {
  return s == SamplingScheme::importance || s == SamplingScheme::gap_importance;
}

}  // namespace detail

struct SampleDraw {
  std::size_t index = 0;
  std::vector<double> probabilities;  // the exact mixed distribution drawn from
};

/// Mixed distribution (1 - ratio) * uniform + ratio * scheme.
inline std::vector<double> sampling_distribution(std::span<const double> gaps,
                                                 std::span<const double> smoothness,
                                                 const SamplerConfig& cfg) {
  cfg.validate();
  const std::size_t n = gaps.size();
  if (n == 0) throw std::invalid_argument("cannot sample from an empty dataset");
  if (detail::needs_smoothness(cfg.scheme) && smoothness.size() != n)
    throw std::invalid_argument("scheme needs one smoothness constant per block");
  std::vector<double> q(n, 0.0);
  if (cfg.scheme == SamplingScheme::max) {
    q[static_cast<std::size_t>(std::max_element(gaps.begin(), gaps.end()) - gaps.begin())] = 1.0;
  } else {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      q[i] = detail::scheme_weight(cfg.scheme, gaps[i],
                                   smoothness.empty() ? 0.0 : smoothness[i], cfg.gap_floor);
      total += q[i];
    }
    for (double& v : q) v /= total;
  }
  const double u = (1.0 - cfg.nonuniform_ratio) / static_cast<double>(n);
  for (double& v : q) v = u + cfg.nonuniform_ratio * v;
  return q;
}

/// Draws one block. Returns the distribution used alongside the index.
inline SampleDraw sample(std::span<const double> gaps, std::span<const double> smoothness,
                         const SamplerConfig& cfg, Rng& rng) {
  SampleDraw out;
  out.probabilities = sampling_distribution(gaps, smoothness, cfg);
  const std::size_t n = gaps.size();
  if (unit_real(rng) < cfg.nonuniform_ratio && cfg.scheme != SamplingScheme::uniform) {
    if (cfg.scheme == SamplingScheme::max) {
      out.index =
          static_cast<std::size_t>(std::max_element(gaps.begin(), gaps.end()) - gaps.begin());
      return out;
    }
    double total = 0.0;
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) {
      w[i] = detail::scheme_weight(cfg.scheme, gaps[i],
                                   smoothness.empty() ? 0.0 : smoothness[i], cfg.gap_floor);
      total += w[i];
    }
    double target = unit_real(rng) * total;
    out.index = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      if (target < w[i]) {
        out.index = i;
        break;
      }
      target -= w[i];
    }
    return out;
  }
  out.index = static_cast<std::size_t>(bounded(rng, n));
  return out;
}

/// Incremental sampler for the training loop: O(log n) draws and updates
/// over a sum/max tree of the scheme weights. Draws follow the same law as
/// sample().
class BlockSampler {
 public:
  BlockSampler(std::span<const double> gaps, std::vector<double> smoothness, SamplerConfig cfg)
      : cfg_(cfg), n_(gaps.size()), smoothness_(std::move(smoothness)) {
    cfg_.validate();
    if (n_ == 0) throw std::invalid_argument("cannot sample from an empty dataset");
    if (detail::needs_smoothness(cfg_.scheme) && smoothness_.size() != n_)
      throw std::invalid_argument("scheme needs one smoothness constant per block");
    leaves_ = 1;
    while (leaves_ < n_) leaves_ *= 2;
    sum_.assign(2 * leaves_, 0.0);
    max_.assign(2 * leaves_, Best{-1.0, 0});
    for (std::size_t i = 0; i < n_; ++i) set_leaf(i, gaps[i]);
    for (std::size_t v = leaves_; v-- > 1;) pull(v);
  }

  const SamplerConfig& config() const { return cfg_; }

  void update(std::size_t i, double gap) {
    set_leaf(i, gap);
    for (std::size_t v = (i + leaves_) / 2; v >= 1; v /= 2) pull(v);
  }

  std::size_t draw(Rng& rng) const {
    if (unit_real(rng) < cfg_.nonuniform_ratio && cfg_.scheme != SamplingScheme::uniform) {
      if (cfg_.scheme == SamplingScheme::max) return max_[1].index;
      double target = unit_real(rng) * sum_[1];
      std::size_t v = 1;
      while (v < leaves_) {
        const std::size_t left = 2 * v;
        if (target < sum_[left] || sum_[left + 1] <= 0.0) {
          v = left;
        } else {
          target -= sum_[left];
          v = left + 1;
        }
      }
      return std::min(v - leaves_, n_ - 1);
    }
    return static_cast<std::size_t>(bounded(rng, n_));
  }

 private:
  struct Best {
    double value;
    std::size_t index;
  };

  void set_leaf(std::size_t i, double gap) {
    const double l = smoothness_.empty() ? 0.0 : smoothness_[i];
    sum_[leaves_ + i] = cfg_.scheme == SamplingScheme::max
                            ? 0.0
                            : detail::scheme_weight(cfg_.scheme, gap, l, cfg_.gap_floor);
    max_[leaves_ + i] = Best{gap, i};
  }

  void pull(std::size_t v) {
    sum_[v] = sum_[2 * v] + sum_[2 * v + 1];
    const Best& a = max_[2 * v];
    const Best& b = max_[2 * v + 1];
    max_[v] = (b.value > a.value) ? b : a;
  }

  SamplerConfig cfg_;
  std::size_t n_;
  std::vector<double> smoothness_;
  std::size_t leaves_ = 1;
  std::vector<double> sum_;
  std::vector<Best> max_;
};

}  // namespace sdcacrf
