#include <gtest/gtest.h>

#include <functional>

#include "capkit/analysis.hpp"
#include "capkit/errors.hpp"
#include "capkit/random.hpp"
#include "oracles/bleu.hpp"
#include "oracles/retrieval.hpp"

using namespace capkit;

namespace {

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no capkit::Error thrown";
  return Errc::Io;
}

struct Rows {
  std::vector<ImageId> ids;
  std::vector<std::vector<float>> rows;
  FeatureStore store{1};
};

Rows random_rows(Rng& rng, std::size_t n, std::size_t dim, ImageId first) {
  Rows r;
  r.store = FeatureStore(dim);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<float> v(dim);
    for (auto& x : v) x = static_cast<float>(uniform_real(rng, -1, 1));
    r.ids.push_back(first + i);
    r.rows.push_back(v);
    r.store.add(first + i, v);
  }
  return r;
}

}  // namespace

TEST(Repetition, WorkedExample) {
  std::map<ImageId, Tokens> gen{{1, {"a", "dog"}}, {2, {"a", "dog"}}, {3, {"a", "cat"}}};
  auto r = repetition_stats(gen, {"a dog"});
  EXPECT_EQ(r.total, 3u);
  EXPECT_EQ(r.unique, 2u);
  EXPECT_EQ(r.seen, 2u);
  EXPECT_DOUBLE_EQ(r.unique_fraction, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.seen_in_training_fraction, 2.0 / 3.0);
}

TEST(Repetition, AllDistinctAndUnseen) {
  std::map<ImageId, Tokens> gen{{1, {"x"}}, {2, {"y"}}, {3, {"z", "w"}}};
  auto r = repetition_stats(gen, {"a dog", "x y"});
  EXPECT_DOUBLE_EQ(r.unique_fraction, 1.0);
  EXPECT_DOUBLE_EQ(r.seen_in_training_fraction, 0.0);
  EXPECT_EQ(repetition_stats({}, {"a"}).total, 0u);
}

TEST(Repetition, InvariantToImageRelabeling) {
  std::map<ImageId, Tokens> a{{1, {"a", "dog"}}, {2, {"a", "cat"}}, {3, {"a", "dog"}}};
  std::map<ImageId, Tokens> b{{30, {"a", "dog"}}, {10, {"a", "cat"}}, {20, {"a", "dog"}}};
  auto ra = repetition_stats(a, {"a cat"}), rb = repetition_stats(b, {"a cat"});
  EXPECT_EQ(ra.unique, rb.unique);
  EXPECT_EQ(ra.seen, rb.seen);
}

TEST(Repetition, CaptionStringsJoinTokens) {
  std::vector<CaptionRecord> recs{{1, 1, "A Dog.", tokenize("A Dog.")}};
  EXPECT_EQ(caption_strings(recs), (std::set<std::string>{"a dog"}));
}

TEST(OverlapBins, FiveImagesGiveOnePerTail) {
  Rng rng(3);
  auto train = random_rows(rng, 40, 6, 1);
  auto test = random_rows(rng, 5, 6, 500);
  auto bins = overlap_bins(test.store, train.store, 50, 0.2);
  ASSERT_EQ(bins.entries.size(), 5u);
  int counts[3] = {0, 0, 0};
  for (const auto& e : bins.entries) ++counts[static_cast<int>(e.bin)];
  EXPECT_EQ(counts[0], 1);
  EXPECT_EQ(counts[1], 3);
  EXPECT_EQ(counts[2], 1);
  for (std::size_t i = 1; i < 5; ++i) EXPECT_LE(bins.entries[i - 1].mean_similarity, bins.entries[i].mean_similarity);
}

TEST(OverlapBins, IdenticalVectorsHaveSimilarityOne) {
  FeatureStore train(3), test(3);
  std::vector<float> v{1, 2, 3};
  for (ImageId i = 0; i < 10; ++i) train.add(i, v);
  test.add(77, v);
  auto bins = overlap_bins(test, train, 5, 0.2);
  EXPECT_NEAR(bins.entries[0].mean_similarity, 1.0, 1e-6);
  EXPECT_EQ(bins.entries[0].bin, OverlapBin::Middle);
}

TEST(OverlapBins, MatchesBruteForce) {
  Rng rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    std::size_t dim = 2 + uniform_index(rng, 10);
    auto train = random_rows(rng, 20 + uniform_index(rng, 80), dim, 1);
    auto test = random_rows(rng, 5 + uniform_index(rng, 40), dim, 10000);
    std::size_t k = 1 + uniform_index(rng, 60);
    auto got = overlap_bins(test.store, train.store, k, 0.2).bin_of();
    auto want = oracle::overlap_bins(test.ids, test.rows, train.rows, k, 0.2);
    ASSERT_EQ(got.size(), want.size());
    for (const auto& [id, b] : want) EXPECT_EQ(static_cast<int>(got.at(id)), b) << trial << " " << id;
  }
}

TEST(OverlapBins, InvariantToPositiveScaling) {
  Rng rng(12);
  auto train = random_rows(rng, 60, 5, 1);
  auto test = random_rows(rng, 20, 5, 1000);
  FeatureStore scaled(5);
  for (std::size_t i = 0; i < test.rows.size(); ++i) {
    auto v = test.rows[i];
    for (auto& x : v) x *= 4.0f;
    scaled.add(test.ids[i], v);
  }
  EXPECT_EQ(overlap_bins(test.store, train.store).bin_of(), overlap_bins(scaled, train.store).bin_of());
}

TEST(OverlapBins, Errors) {
  FeatureStore a(3), b(4), empty(3);
  std::vector<float> v3{1, 0, 0}, v4{1, 0, 0, 0};
  a.add(1, v3);
  b.add(2, v4);
  EXPECT_EQ(code_of([&] { overlap_bins(a, b); }), Errc::DimensionMismatch);
  EXPECT_EQ(code_of([&] { overlap_bins(a, a, 0); }), Errc::InvalidArgument);
  EXPECT_EQ(code_of([&] { overlap_bins(a, a, 5, 0.7); }), Errc::InvalidArgument);
  EXPECT_EQ(code_of([&] { overlap_bins(a, empty); }), Errc::EmptyIndex);
}

TEST(BinnedBleu, PerfectCaptionsScoreHundredEverywhere) {
  std::map<ImageId, Tokens> gen;
  CaptionsByImage refs;
  std::map<ImageId, OverlapBin> bins;
  for (ImageId i = 0; i < 9; ++i) {
    Tokens t{"a", "w" + std::to_string(i), "on", "the", "grass"};
    gen[i] = t;
    refs[i] = {t, {"something", "else"}};
    bins[i] = static_cast<OverlapBin>(i % 3);
  }
  auto b = binned_bleu(gen, refs, bins);
  for (int k = 0; k < 3; ++k) {
    EXPECT_NEAR(b.bleu[k], 100.0, 1e-9);
    EXPECT_EQ(b.count[k], 3u);
  }
  EXPECT_NEAR(b.total_bleu, 100.0, 1e-9);
}

TEST(BinnedBleu, StatsAddUpToCorpus) {
  Rng rng(5);
  std::map<ImageId, Tokens> gen;
  CaptionsByImage refs;
  std::map<ImageId, OverlapBin> bins;
  std::vector<Tokens> hyps;
  std::vector<std::vector<Tokens>> rs;
  auto sentence = [&] {
    Tokens t;
    std::size_t n = 3 + uniform_index(rng, 6);
    for (std::size_t i = 0; i < n; ++i) t.push_back("w" + std::to_string(uniform_index(rng, 6)));
    return t;
  };
  for (ImageId i = 0; i < 60; ++i) {
    gen[i] = sentence();
    refs[i] = {sentence(), sentence(), sentence()};
    bins[i] = static_cast<OverlapBin>(uniform_index(rng, 3));
    hyps.push_back(gen[i]);
    rs.push_back(refs[i]);
  }
  auto b = binned_bleu(gen, refs, bins);
  EXPECT_EQ(b.stats[0] + b.stats[1] + b.stats[2], b.total);
  EXPECT_EQ(b.total, corpus_bleu_stats(hyps, rs));
  EXPECT_NEAR(b.total_bleu, oracle::corpus_bleu(hyps, rs).bleu, 1e-9);
}

TEST(BinnedBleu, Errors) {
  std::map<ImageId, Tokens> gen{{1, {"a"}}};
  CaptionsByImage refs{{1, {{"a"}}}};
  EXPECT_EQ(code_of([&] { binned_bleu(gen, {}, {{1, OverlapBin::Most}}); }), Errc::MissingReferences);
  EXPECT_EQ(code_of([&] { binned_bleu(gen, refs, {}); }), Errc::InvalidArgument);
}
