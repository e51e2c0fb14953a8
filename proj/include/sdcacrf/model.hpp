#pragma once

// Sequences, labels and the linear-chain feature map.
//
// The weight vector is laid out in three disjoint blocks:
//
//   [ emission: A*K | bias: 3*K | transition: K*K ]
//
// emission(a, k) fires once per token carrying attribute a and labelled k,
// the bias block counts label occurrences (anywhere / first / last position)
// and the transition block counts label bigrams.

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace sdcacrf {

using Label = std::uint32_t;
using AttributeId = std::uint32_t;
using Labeling = std::vector<Label>;

class LabelSet {
 public:
  LabelSet() = default;
  explicit LabelSet(std::vector<std::string> names) : names_(std::move(names)) {
    if (names_.size() < 2) {
      throw std::invalid_argument("a label set needs at least two labels, got " +
                                  std::to_string(names_.size()));
    }
    std::unordered_set<std::string> seen;
    for (const auto& name : names_) {
      if (!seen.insert(name).second) {
        throw std::invalid_argument("duplicate label name '" + name + "'");
      }
    }
  }

  std::size_t size() const { return names_.size(); }
  const std::string& name(Label k) const { return names_.at(k); }
  const std::vector<std::string>& names() const { return names_; }

  bool operator==(const LabelSet&) const = default;

 private:
  std::vector<std::string> names_;
};

struct Token {
  std::vector<AttributeId> attributes;  // strictly increasing
  Label label = 0;

  bool operator==(const Token&) const = default;
};

struct Sequence {
  std::vector<Token> tokens;

  std::size_t length() const { return tokens.size(); }

  Labeling gold() const {
    Labeling y(tokens.size());
    for (std::size_t t = 0; t < tokens.size(); ++t) y[t] = tokens[t].label;
    return y;
  }

  bool operator==(const Sequence&) const = default;
};

/// Throws if `seq` is empty, references an attribute >= num_attributes,
/// has unsorted attributes, or carries a gold label >= num_labels.
inline void validate_sequence(const Sequence& seq, std::size_t num_attributes,
                              std::size_t num_labels) {
  if (seq.tokens.empty()) throw std::invalid_argument("sequence has no tokens");
  for (std::size_t t = 0; t < seq.tokens.size(); ++t) {
    const Token& tok = seq.tokens[t];
    if (tok.label >= num_labels) {
      throw std::invalid_argument("token " + std::to_string(t) + " has label " +
                                  std::to_string(tok.label) + " outside [0," +
                                  std::to_string(num_labels) + ")");
    }
    for (std::size_t j = 0; j < tok.attributes.size(); ++j) {
      if (tok.attributes[j] >= num_attributes) {
        throw std::invalid_argument("attribute id " + std::to_string(tok.attributes[j]) +
                                    " outside vocabulary of size " +
                                    std::to_string(num_attributes));
      }
      if (j > 0 && tok.attributes[j - 1] >= tok.attributes[j]) {
        throw std::invalid_argument("token attributes must be strictly increasing");
      }
    }
  }
}

enum class BiasSlot : std::size_t { total = 0, first = 1, last = 2 };

enum class FeatureBlock { emission, bias, transition };

struct FeatureCoordinate {
  FeatureBlock block;
  std::size_t attribute = 0;  // emission only
  BiasSlot slot = BiasSlot::total;  // bias only
  Label label = 0;
  Label next_label = 0;  // transition only

  bool operator==(const FeatureCoordinate&) const = default;
};

class FeatureIndexer {
 public:
  FeatureIndexer(std::size_t num_attributes, std::size_t num_labels)
      : attributes_(num_attributes), labels_(num_labels) {
    if (num_labels < 2) throw std::invalid_argument("FeatureIndexer needs K >= 2");
  }

  std::size_t num_attributes() const { return attributes_; }
  std::size_t num_labels() const { return labels_; }
  std::size_t dimension() const { return transition_offset() + labels_ * labels_; }

  std::size_t emission(std::size_t attribute, Label k) const {
    assert(attribute < attributes_ && k < labels_);
    return attribute * labels_ + k;
  }
  std::size_t bias(BiasSlot slot, Label k) const {
    assert(k < labels_);
    return bias_offset() + static_cast<std::size_t>(slot) * labels_ + k;
  }
  std::size_t transition(Label from, Label to) const {
    assert(from < labels_ && to < labels_);
    return transition_offset() + from * labels_ + to;
  }

  FeatureCoordinate decompose(std::size_t index) const {
    if (index >= dimension()) throw std::out_of_range("feature index out of range");
    if (index < bias_offset()) {
      return {FeatureBlock::emission, index / labels_, BiasSlot::total,
              static_cast<Label>(index % labels_), 0};
    }
    if (index < transition_offset()) {
      const std::size_t r = index - bias_offset();
      return {FeatureBlock::bias, 0, static_cast<BiasSlot>(r / labels_),
              static_cast<Label>(r % labels_), 0};
    }
    const std::size_t r = index - transition_offset();
    return {FeatureBlock::transition, 0, BiasSlot::total, static_cast<Label>(r / labels_),
            static_cast<Label>(r % labels_)};
  }

  std::size_t compose(const FeatureCoordinate& c) const {
    switch (c.block) {
      case FeatureBlock::emission: return emission(c.attribute, c.label);
      case FeatureBlock::bias: return bias(c.slot, c.label);
      case FeatureBlock::transition: return transition(c.label, c.next_label);
    }
    throw std::logic_error("unknown feature block");
  }

  std::size_t bias_offset() const { return attributes_ * labels_; }
  std::size_t transition_offset() const { return bias_offset() + 3 * labels_; }

 private:
  std::size_t attributes_;
  std::size_t labels_;
};

/// Sparse real vector with strictly increasing indices and no stored zeros.
struct SparseFeature {
  std::vector<std::pair<std::size_t, double>> entries;

  bool empty() const { return entries.empty(); }

  double dot(std::span<const double> dense) const {
    double s = 0.0;
    for (const auto& [i, v] : entries) s += dense[i] * v;
    return s;
  }

  double squared_norm() const {
    double s = 0.0;
    for (const auto& e : entries) s += e.second * e.second;
    return s;
  }

  double at(std::size_t index) const {
    auto it = std::lower_bound(entries.begin(), entries.end(), index,
                               [](const auto& e, std::size_t i) { return e.first < i; });
    return (it != entries.end() && it->first == index) ? it->second : 0.0;
  }

  void add_to(std::span<double> dense, double scale = 1.0) const {
    for (const auto& [i, v] : entries) dense[i] += scale * v;
  }

  /// Sort by index, sum duplicates and drop exact zeros.
  static SparseFeature from_unsorted(std::vector<std::pair<std::size_t, double>> raw) {
    std::sort(raw.begin(), raw.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    SparseFeature out;
    out.entries.reserve(raw.size());
    for (const auto& [i, v] : raw) {
      if (!out.entries.empty() && out.entries.back().first == i) {
        out.entries.back().second += v;
      } else {
        out.entries.emplace_back(i, v);
      }
    }
    std::erase_if(out.entries, [](const auto& e) { return e.second == 0.0; });
    return out;
  }
};

namespace detail {

inline void check_labeling(const Sequence& seq, const Labeling& labeling,
                           const FeatureIndexer& idx) {
  if (labeling.size() != seq.length()) {
    throw std::invalid_argument("labeling length " + std::to_string(labeling.size()) +
                                " does not match sequence length " +
                                std::to_string(seq.length()));
  }
  for (Label k : labeling) {
    if (k >= idx.num_labels()) {
      throw std::invalid_argument("label " + std::to_string(k) + " out of range");
    }
  }
}

inline void append_features(const Sequence& seq, const Labeling& y, const FeatureIndexer& idx,
                            double scale, std::vector<std::pair<std::size_t, double>>& out) {
  const std::size_t T = seq.length();
  for (std::size_t t = 0; t < T; ++t) {
    for (AttributeId a : seq.tokens[t].attributes) out.emplace_back(idx.emission(a, y[t]), scale);
    out.emplace_back(idx.bias(BiasSlot::total, y[t]), scale);
    if (t + 1 < T) out.emplace_back(idx.transition(y[t], y[t + 1]), scale);
  }
  out.emplace_back(idx.bias(BiasSlot::first, y.front()), scale);
  out.emplace_back(idx.bias(BiasSlot::last, y.back()), scale);
}

}  // namespace detail

/// F(x, y): emission, bias and transition counts for one labeling.
inline SparseFeature extract_features(const Sequence& seq, const Labeling& labeling,
                                      const FeatureIndexer& idx) {
  detail::check_labeling(seq, labeling, idx);
  std::vector<std::pair<std::size_t, double>> raw;
  detail::append_features(seq, labeling, idx, 1.0, raw);
  return SparseFeature::from_unsorted(std::move(raw));
}

/// psi(y) = F(x, gold) - F(x, y).
inline SparseFeature corrected_feature(const Sequence& seq, const Labeling& labeling,
                                       const FeatureIndexer& idx) {
  detail::check_labeling(seq, labeling, idx);
  std::vector<std::pair<std::size_t, double>> raw;
  detail::append_features(seq, seq.gold(), idx, 1.0, raw);
  detail::append_features(seq, labeling, idx, -1.0, raw);
  return SparseFeature::from_unsorted(std::move(raw));
}

/// Node and edge potentials of one sequence in log space.
struct ScoreTables {
  std::size_t length = 0;
  std::size_t num_labels = 0;
  std::vector<double> unary;  // length x K
  std::vector<double> pair;   // K x K, shared by every edge

  ScoreTables() = default;
  ScoreTables(std::size_t T, std::size_t K)
      : length(T), num_labels(K), unary(T * K, 0.0), pair(K * K, 0.0) {}

  double& node(std::size_t t, Label k) { return unary[t * num_labels + k]; }
  double node(std::size_t t, Label k) const { return unary[t * num_labels + k]; }
  double& edge(Label k, Label k2) { return pair[k * num_labels + k2]; }
  double edge(Label k, Label k2) const { return pair[k * num_labels + k2]; }

  /// <w, F(x, y)> for a full labeling.
  double score(const Labeling& y) const {
    double s = 0.0;
    for (std::size_t t = 0; t < length; ++t) {
      s += node(t, y[t]);
      if (t + 1 < length) s += edge(y[t], y[t + 1]);
    }
    return s;
  }
};

inline ScoreTables score_tables(std::span<const double> w, const Sequence& seq,
                                const FeatureIndexer& idx) {
  if (w.size() != idx.dimension()) {
    throw std::invalid_argument("weight vector has dimension " + std::to_string(w.size()) +
                                ", expected " + std::to_string(idx.dimension()));
  }
  const std::size_t T = seq.length();
  const std::size_t K = idx.num_labels();
  ScoreTables s(T, K);
  for (std::size_t t = 0; t < T; ++t) {
    double* row = &s.unary[t * K];
    for (AttributeId a : seq.tokens[t].attributes) {
      const double* wa = &w[idx.emission(a, 0)];
      for (std::size_t k = 0; k < K; ++k) row[k] += wa[k];
    }
    for (Label k = 0; k < K; ++k) {
      row[k] += w[idx.bias(BiasSlot::total, k)];
      if (t == 0) row[k] += w[idx.bias(BiasSlot::first, k)];
      if (t + 1 == T) row[k] += w[idx.bias(BiasSlot::last, k)];
    }
  }
  for (Label k = 0; k < K; ++k)
    for (Label k2 = 0; k2 < K; ++k2) s.edge(k, k2) = w[idx.transition(k, k2)];
  return s;
}

}  // namespace sdcacrf
