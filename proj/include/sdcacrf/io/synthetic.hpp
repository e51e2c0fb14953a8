#pragma once

// Synthetic sparse sequence data. Labels follow a Markov chain with integer
// transition weights; each token then draws a fixed number of distinct
// attributes, mostly from a pool owned by its label and otherwise from the
// whole vocabulary. Only integer draws are used, so a seed reproduces the
// same dataset everywhere.

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "sdcacrf/dataset.hpp"
#include "sdcacrf/sampling.hpp"

namespace sdcacrf::io {

struct SyntheticSpec {
  std::size_t num_sequences = 100;
  std::size_t min_length = 5;
  std::size_t max_length = 10;
  std::size_t num_labels = 5;
  std::size_t num_attributes = 50;
  std::size_t attributes_per_token = 5;
  std::size_t class_pool = 0;  // attributes owned by each label; 0 -> max(a, A / K)
  std::uint32_t transition_peak = 4;  // extra weight for keeping the same label
  std::uint32_t label_skew = 0;       // extra weight for moving to label 0
  std::uint32_t emission_noise_percent = 20;
  std::uint64_t seed = 0;

  std::size_t pool_size() const {
    if (class_pool) return class_pool;
    return std::max(attributes_per_token, num_attributes / num_labels);
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("synthetic spec: " + m); };
    if (num_sequences < 1) fail("need at least one sequence");
    if (min_length < 1 || max_length < min_length) fail("need 1 <= min_length <= max_length");
    if (num_labels < 2) fail("need at least two labels");
    if (num_attributes < 1) fail("need at least one attribute");
    if (attributes_per_token > num_attributes) fail("attributes per token exceeds vocabulary size");
    if (pool_size() > num_attributes) fail("class pool exceeds vocabulary size");
    if (pool_size() < attributes_per_token && emission_noise_percent < 100)
      fail("class pool smaller than attributes per token");
    if (emission_noise_percent > 100) fail("noise percentage above 100");
  }

  /// Integer weight of moving from label `from` to label `to`.
  std::uint64_t transition_weight(Label from, Label to) const {
    return 1 + (from == to ? transition_peak : 0) + (to == 0 ? label_skew : 0);
  }

  /// First attribute of label k's pool; pools wrap around the vocabulary.
  std::size_t pool_start(Label k) const {
    return (k * std::max<std::size_t>(1, num_attributes / num_labels)) % num_attributes;
  }
};

inline Dataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::size_t K = spec.num_labels;
  const std::size_t A = spec.num_attributes;
  const std::size_t pool = spec.pool_size();

  std::vector<std::string> label_names;
  for (std::size_t k = 0; k < K; ++k) label_names.push_back("L" + std::to_string(k));
  Dataset ds;
  ds.labels = LabelSet(std::move(label_names));
  for (std::size_t a = 0; a < A; ++a) ds.attributes.insert("a" + std::to_string(a));
  ds.provenance = {"synthetic:seed=" + std::to_string(spec.seed), "synthetic", spec.seed};

  auto next_label = [&](Label from) {
    std::uint64_t total = 0;
    for (Label k = 0; k < K; ++k) total += spec.transition_weight(from, k);
    std::uint64_t r = bounded(rng, total);
    for (Label k = 0; k < K; ++k) {
      const std::uint64_t w = spec.transition_weight(from, k);
      if (r < w) return k;
      r -= w;
    }
    return static_cast<Label>(K - 1);
  };

  std::vector<bool> taken(A, false);
  for (std::size_t i = 0; i < spec.num_sequences; ++i) {
    const std::size_t T =
        spec.min_length + bounded(rng, spec.max_length - spec.min_length + 1);
    Sequence seq;
    Label y = static_cast<Label>(bounded(rng, K));
    for (std::size_t t = 0; t < T; ++t) {
      if (t > 0) y = next_label(y);
      Token tok;
      tok.label = y;
      while (tok.attributes.size() < spec.attributes_per_token) {
        std::size_t a;
        if (bounded(rng, 100) < spec.emission_noise_percent) {
          a = bounded(rng, A);
        } else {
          a = (spec.pool_start(y) + bounded(rng, pool)) % A;
        }
        if (taken[a]) continue;
        taken[a] = true;
        tok.attributes.push_back(static_cast<AttributeId>(a));
      }
      for (AttributeId a : tok.attributes) taken[a] = false;
      std::sort(tok.attributes.begin(), tok.attributes.end());
      seq.tokens.push_back(std::move(tok));
    }
    ds.sequences.push_back(std::move(seq));
  }
  return ds;
}

}  // namespace sdcacrf::io
