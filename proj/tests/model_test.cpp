#include <gtest/gtest.h>

#include <set>

#include "test_support.hpp"

using namespace sdcacrf;

TEST(LabelSet, RejectsFewerThanTwoAndDuplicates) {
  EXPECT_THROW(LabelSet({"only"}), std::invalid_argument);
  EXPECT_THROW(LabelSet({"a", "b", "a"}), std::invalid_argument);
  LabelSet ok({"B", "I", "O"});
  EXPECT_EQ(ok.size(), 3u);
  EXPECT_EQ(ok.name(1), "I");
}

TEST(FeatureIndexer, BlocksAreDisjointAndCoverTheDimension) {
  const std::size_t A = 7, K = 3;
  FeatureIndexer idx(A, K);
  EXPECT_EQ(idx.dimension(), A * K + 3 * K + K * K);
  std::set<std::size_t> seen;
  for (std::size_t a = 0; a < A; ++a)
    for (Label k = 0; k < K; ++k) EXPECT_TRUE(seen.insert(idx.emission(a, k)).second);
  for (auto slot : {BiasSlot::total, BiasSlot::first, BiasSlot::last})
    for (Label k = 0; k < K; ++k) EXPECT_TRUE(seen.insert(idx.bias(slot, k)).second);
  for (Label k = 0; k < K; ++k)
    for (Label k2 = 0; k2 < K; ++k2) EXPECT_TRUE(seen.insert(idx.transition(k, k2)).second);
  EXPECT_EQ(seen.size(), idx.dimension());
  EXPECT_EQ(*seen.rbegin(), idx.dimension() - 1);
}

TEST(FeatureIndexer, DecomposeInvertsCompose) {
  FeatureIndexer idx(5, 4);
  for (std::size_t j = 0; j < idx.dimension(); ++j) EXPECT_EQ(idx.compose(idx.decompose(j)), j);
  const auto c = idx.decompose(idx.transition(2, 3));
  EXPECT_EQ(c.block, FeatureBlock::transition);
  EXPECT_EQ(c.label, 2u);
  EXPECT_EQ(c.next_label, 3u);
}

TEST(Features, CountsMatchTheLabeling) {
  FeatureIndexer idx(4, 2);
  Sequence seq;
  seq.tokens = {{{0, 2}, 0}, {{2}, 1}, {{1, 3}, 1}};
  const Labeling y = {1, 1, 0};
  const SparseFeature f = extract_features(seq, y, idx);
  EXPECT_EQ(f.at(idx.emission(0, 1)), 1.0);
  EXPECT_EQ(f.at(idx.emission(2, 1)), 2.0);
  EXPECT_EQ(f.at(idx.emission(1, 0)), 1.0);
  EXPECT_EQ(f.at(idx.emission(3, 0)), 1.0);
  EXPECT_EQ(f.at(idx.bias(BiasSlot::total, 1)), 2.0);
  EXPECT_EQ(f.at(idx.bias(BiasSlot::total, 0)), 1.0);
  EXPECT_EQ(f.at(idx.bias(BiasSlot::first, 1)), 1.0);
  EXPECT_EQ(f.at(idx.bias(BiasSlot::last, 0)), 1.0);
  EXPECT_EQ(f.at(idx.transition(1, 1)), 1.0);
  EXPECT_EQ(f.at(idx.transition(1, 0)), 1.0);
  EXPECT_EQ(f.at(idx.transition(0, 0)), 0.0);
  EXPECT_EQ(f.squared_norm(), 1 + 4 + 1 + 1 + 4 + 1 + 1 + 1 + 1 + 1);
}

TEST(Features, EntriesAreSortedAndMerged) {
  Rng rng(3);
  const Dataset ds = fixtures::random_dataset(rng, 20, 6, 3, 5, 3);
  const auto idx = ds.indexer();
  for (const auto& seq : ds.sequences) {
    const SparseFeature f = extract_features(seq, fixtures::random_labeling(rng, seq.length(), 3), idx);
    for (std::size_t j = 1; j < f.entries.size(); ++j)
      EXPECT_LT(f.entries[j - 1].first, f.entries[j].first);
  }
}

TEST(Features, CorrectedFeatureVanishesAtGoldAndIsADifference) {
  Rng rng(4);
  const Dataset ds = fixtures::random_dataset(rng, 30, 5, 3, 6, 2);
  const auto idx = ds.indexer();
  for (const auto& seq : ds.sequences) {
    EXPECT_TRUE(corrected_feature(seq, seq.gold(), idx).empty());
    const Labeling y = fixtures::random_labeling(rng, seq.length(), 3);
    const SparseFeature psi = corrected_feature(seq, y, idx);
    const SparseFeature fg = extract_features(seq, seq.gold(), idx);
    const SparseFeature fy = extract_features(seq, y, idx);
    for (std::size_t j = 0; j < idx.dimension(); ++j) EXPECT_EQ(psi.at(j), fg.at(j) - fy.at(j));
  }
}

TEST(Features, RejectsBadLabelings) {
  FeatureIndexer idx(2, 2);
  Sequence seq;
  seq.tokens = {{{0}, 0}, {{1}, 1}};
  EXPECT_THROW(extract_features(seq, {0}, idx), std::invalid_argument);
  EXPECT_THROW(extract_features(seq, {0, 2}, idx), std::invalid_argument);
}

TEST(ScoreTables, ScoreEqualsInnerProductWithFeatures) {
  Rng rng(5);
  const Dataset ds = fixtures::random_dataset(rng, 25, 6, 4, 8, 3);
  const auto idx = ds.indexer();
  const auto w = fixtures::random_weights(rng, idx.dimension(), 2.0);
  for (const auto& seq : ds.sequences) {
    const ScoreTables s = score_tables(w, seq, idx);
    for (int r = 0; r < 5; ++r) {
      const Labeling y = fixtures::random_labeling(rng, seq.length(), 4);
      EXPECT_NEAR(s.score(y), extract_features(seq, y, idx).dot(w), 1e-12);
    }
  }
  EXPECT_THROW(score_tables(std::vector<double>(3), ds.sequences[0], idx), std::invalid_argument);
}

TEST(Sequence, ValidationCatchesOutOfRangeIds) {
  Sequence seq;
  seq.tokens = {{{0, 3}, 0}};
  EXPECT_THROW(validate_sequence(seq, 3, 2), std::invalid_argument);
  seq.tokens = {{{0}, 2}};
  EXPECT_THROW(validate_sequence(seq, 3, 2), std::invalid_argument);
  seq.tokens = {{{2, 1}, 0}};
  EXPECT_THROW(validate_sequence(seq, 3, 2), std::invalid_argument);
  seq.tokens.clear();
  EXPECT_THROW(validate_sequence(seq, 3, 2), std::invalid_argument);
}
