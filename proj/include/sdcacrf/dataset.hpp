#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sdcacrf/model.hpp"

namespace sdcacrf {

/// String <-> dense id map, ids assigned in insertion order.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> names) {
    for (auto& n : names) insert(n);
  }

  std::uint32_t insert(const std::string& name) {
    auto [it, fresh] = ids_.try_emplace(name, static_cast<std::uint32_t>(names_.size()));
    if (fresh) names_.push_back(name);
    return it->second;
  }

  std::optional<std::uint32_t> find(const std::string& name) const {
    auto it = ids_.find(name);
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t size() const { return names_.size(); }
  const std::string& name(std::uint32_t id) const { return names_.at(id); }
  const std::vector<std::string>& names() const { return names_; }

  bool operator==(const Vocabulary& o) const { return names_ == o.names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::uint32_t> ids_;
};

struct Provenance {
  std::string source;
  std::string format;
  std::optional<std::uint64_t> split_seed;
};

struct Dataset {
  std::vector<Sequence> sequences;
  LabelSet labels;
  Vocabulary attributes;
  Provenance provenance;

  std::size_t size() const { return sequences.size(); }
  std::size_t num_labels() const { return labels.size(); }
  std::size_t num_attributes() const { return attributes.size(); }

  std::size_t num_tokens() const {
    std::size_t n = 0;
    for (const auto& s : sequences) n += s.length();
    return n;
  }

  FeatureIndexer indexer() const { return FeatureIndexer(num_attributes(), num_labels()); }

  void validate() const {
    if (sequences.empty()) throw std::invalid_argument("dataset has no sequences");
    for (const auto& s : sequences) validate_sequence(s, num_attributes(), num_labels());
  }
};

/// Shuffles sequence order with `seed` and moves the last `test_fraction` of
/// them into a test set. Both halves share labels and vocabulary.
inline std::pair<Dataset, Dataset> split_dataset(const Dataset& all, double test_fraction,
                                                 std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw std::invalid_argument("test fraction must lie in (0, 1)");
  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rng() % i]);
  }
  const auto n_test = static_cast<std::size_t>(test_fraction * static_cast<double>(all.size()));
  if (n_test == 0 || n_test == all.size())
    throw std::invalid_argument("split leaves one side empty");

  Dataset train{{}, all.labels, all.attributes, all.provenance};
  Dataset test{{}, all.labels, all.attributes, all.provenance};
  train.provenance.split_seed = test.provenance.split_seed = seed;
  for (std::size_t j = 0; j < order.size(); ++j) {
    auto& dst = j + n_test < order.size() ? train : test;
    dst.sequences.push_back(all.sequences[order[j]]);
  }
  return {std::move(train), std::move(test)};
}

}  // namespace sdcacrf
