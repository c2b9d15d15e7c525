#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "capkit/errors.hpp"
#include "capkit/maxent.hpp"
#include "capkit/random.hpp"
#include "oracles/finite_diff.hpp"
#include "support/temp_dir.hpp"

using namespace capkit;

namespace {

CaptionRecord rec(std::uint64_t id, ImageId image, const std::string& text) { return {id, image, text, tokenize(text)}; }

std::vector<FeatureId> sorted(std::vector<FeatureId> v) {
  std::sort(v.begin(), v.end());
  return v;
}

const std::set<FeatureId>& coverage_templates() {
  static const std::set<FeatureId> ids = {feature_id("cov_hit"), feature_id("cov_miss"), feature_id("end_done"),
                                          feature_id("end_open")};
  return ids;
}

struct Toy {
  Vocabulary vocab;
  std::vector<MaxEntExample> examples;
};

Toy random_toy(Rng& rng) {
  const char* pool[] = {"a", "dog", "cat", "runs", "on", "grass", "red"};
  std::size_t nwords = 3 + uniform_index(rng, 5);
  std::vector<CaptionRecord> recs;
  std::map<ImageId, DetectionSet> dets;
  for (std::size_t i = 0; i < 4; ++i) {
    std::string text;
    for (std::size_t j = 0, n = 1 + uniform_index(rng, 5); j < n; ++j) text += std::string(pool[uniform_index(rng, nwords)]) + " ";
    recs.push_back(rec(i + 1, i, text));
    std::vector<std::pair<std::string, double>> scored;
    for (std::size_t j = 0; j < 2; ++j) scored.emplace_back(pool[uniform_index(rng, nwords)], 0.9);
    dets[i] = make_detection_set(i, 0.5, scored);
  }
  Toy t{build_vocabulary(recs, 1), {}};
  t.examples = make_maxent_examples(recs, dets, t.vocab);
  return t;
}

}  // namespace

TEST(MaxEntFeatures, GoldenIds) {
  std::vector<std::string> none, a{"a"};
  EXPECT_EQ(extract_features(none, "a", {}), sorted({0x4bcd2f4e9b1aabd9ULL, 0xcbbc444bc2b7be0eULL}));
  EXPECT_EQ(extract_features(a, "b", {"b"}),
            sorted({0x4bcd2c4e9b1aa6c0ULL, 0x5498bcf5f81865ddULL, 0xf47913af61bb9035ULL, 0xb86bc116594277e9ULL}));
  EXPECT_EQ(extract_features(a, "</s>", {"c"}),
            sorted({0xcb5799f159e5875eULL, 0xe8c468374ea4e6f1ULL, 0xd8188f13515460a9ULL, 0x35eab36d7e9b80d3ULL}));
  EXPECT_EQ(feature_id("cov_miss"), 0x4ed916e189f3de24ULL);
  EXPECT_EQ(feature_id("end_done"), 0xd208cfc7eacba1bbULL);
}

TEST(MaxEntFeatures, CoverageHitAndMiss) {
  std::vector<std::string> h{"a"};
  auto hit = extract_features(h, "dog", {"dog"});
  auto miss = extract_features(h, "cat", {"dog"});
  auto has = [](const std::vector<FeatureId>& v, FeatureId id) { return std::count(v.begin(), v.end(), id) == 1; };
  EXPECT_TRUE(has(hit, feature_id("cov_hit")));
  EXPECT_FALSE(has(hit, feature_id("cov_miss")));
  EXPECT_TRUE(has(miss, feature_id("cov_miss")));
}

TEST(MaxEntFeatures, RemovingCoverageWordTouchesOnlyCoverageFeatures) {
  std::vector<std::string> h{"a", "dog"};
  for (const char* cand : {"dog", "cat", "</s>"}) {
    auto with = extract_features(h, cand, {"dog", "cat"});
    auto without = extract_features(h, cand, {"cat"});
    std::vector<FeatureId> diff;
    std::set_symmetric_difference(with.begin(), with.end(), without.begin(), without.end(), std::back_inserter(diff));
    for (auto id : diff) EXPECT_TRUE(coverage_templates().count(id)) << cand;
  }
}

TEST(MaxEnt, ZeroWeightsUniform) {
  std::vector<CaptionRecord> r = {rec(1, 1, "a b c")};
  MaxEntLM lm(build_vocabulary(r, 1));
  auto p = lm.next_word_distribution({}, {});
  const double V1 = static_cast<double>(lm.vocab().size() - 1);
  EXPECT_EQ(p[kStartId], 0.0);
  for (std::size_t i = 1; i < p.size(); ++i) EXPECT_NEAR(p[i], 1.0 / V1, 1e-15);
}

TEST(MaxEnt, LearnsDeterministicBigram) {
  std::vector<CaptionRecord> r;
  for (int i = 0; i < 500; ++i) r.push_back(rec(i + 1, i, "a b"));
  auto vocab = build_vocabulary(r, 1);
  auto ex = make_maxent_examples(r, {}, vocab);
  std::vector<double> losses;
  auto lm = train_maxent(vocab, ex, {3, 0.1, 1e-5, 1}, &losses);
  EXPECT_LT(losses.back(), losses.front());
  std::vector<TokenId> h{vocab.id("a")};
  EXPECT_GT(lm.next_word_distribution(h, {})[vocab.id("b")], 0.9);
  double total = 0.0;
  for (double p : lm.next_word_distribution(h, {})) total += p;
  EXPECT_NEAR(total, 1.0, 1e-6);
}

TEST(MaxEnt, SingleCaptionLossDecreases) {
  std::vector<CaptionRecord> r = {rec(1, 1, "a small dog runs")};
  auto vocab = build_vocabulary(r, 1);
  std::map<ImageId, DetectionSet> d{{1, make_detection_set(1, 0.5, {{"dog", 0.9}})}};
  std::vector<double> losses;
  train_maxent(vocab, make_maxent_examples(r, d, vocab), {2, 0.1, 1e-5, 1}, &losses);
  ASSERT_EQ(losses.size(), 2u);
  EXPECT_LT(losses[1], losses[0]);
}

TEST(MaxEnt, HeavyL2ApproachesUniform) {
  std::vector<CaptionRecord> r = {rec(1, 1, "a b"), rec(2, 2, "a c")};
  auto vocab = build_vocabulary(r, 1);
  auto ex = make_maxent_examples(r, {}, vocab);
  auto heavy = train_maxent(vocab, ex, {20, 0.1, 9.0, 1});
  auto light = train_maxent(vocab, ex, {20, 0.1, 1e-5, 1});
  // each step adds at most lr * |g| <= lr and decays by 1 - lr * l2
  for (double w : heavy.weights()) EXPECT_LE(std::abs(w), 1.0 / 9.0 + 1e-12);
  auto entropy = [](const std::vector<double>& p) {
    double h = 0.0;
    for (double q : p) if (q > 0) h -= q * std::log(q);
    return h;
  };
  auto ph = heavy.next_word_distribution({}, {}), pl = light.next_word_distribution({}, {});
  EXPECT_GT(entropy(ph), entropy(pl));
  EXPECT_LT(entropy(ph), std::log(double(ph.size() - 1)) + 1e-12);
}

TEST(MaxEnt, SeededTrainingIsBitIdentical) {
  Rng rng(5);
  auto toy = random_toy(rng);
  auto a = train_maxent(toy.vocab, toy.examples, {4, 0.2, 1e-4, 9});
  auto b = train_maxent(toy.vocab, toy.examples, {4, 0.2, 1e-4, 9});
  EXPECT_EQ(a.serialize(), b.serialize());
}

TEST(MaxEnt, ShiftInvariantSoftmax) {
  Rng rng(6);
  auto toy = random_toy(rng);
  auto lm = train_maxent(toy.vocab, toy.examples, {2, 0.3, 1e-5, 1});
  auto s = lm.scores({}, {});
  auto p = lm.next_word_distribution({}, {});
  double z = 0.0;
  for (std::size_t i = 1; i < s.size(); ++i) z += std::exp(s[i] + 5.0);
  for (std::size_t i = 1; i < s.size(); ++i) EXPECT_NEAR(p[i], std::exp(s[i] + 5.0) / z, 1e-12);
}

TEST(MaxEnt, GradientMatchesFiniteDifferences) {
  Rng rng(77);
  double worst = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    auto toy = random_toy(rng);
    auto lm = train_maxent(toy.vocab, toy.examples, {1, 0.1, 0.0, 1});
    for (double& w : lm.mutable_weights()) w = uniform_real(rng, -1.0, 1.0);
    const auto& ex = toy.examples[uniform_index(rng, toy.examples.size())];
    std::size_t pos = uniform_index(rng, ex.tokens.size() + 1);
    std::vector<TokenId> hist(ex.tokens.begin(), ex.tokens.begin() + pos);
    TokenId target = pos < ex.tokens.size() ? ex.tokens[pos] : kEndId;
    CoverageSet rem = ex.detections;
    for (auto t : hist) rem = coverage_without(rem, t);

    std::vector<double> grad;
    lm.event_loss(hist, target, rem, &grad);
    auto w = lm.mutable_weights();
    for (std::size_t i = 0; i < w.size(); ++i) {
      double num = oracle::central_difference([&] { return lm.event_loss(hist, target, rem); }, w[i]);
      worst = std::max(worst, oracle::relative_error(grad[i], num));
    }
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(MaxEnt, SaveLoadRoundTrip) {
  Rng rng(8);
  auto toy = random_toy(rng);
  auto lm = train_maxent(toy.vocab, toy.examples, {2, 0.1, 1e-5, 1});
  testing_support::TempDir dir;
  lm.save(dir / "me.model");
  auto back = MaxEntLM::load(dir / "me.model");
  EXPECT_EQ(back.serialize(), lm.serialize());
  EXPECT_THROW(MaxEntLM::deserialize("MELMjunk"), Error);
}

TEST(MaxEnt, RejectsReservedTokensAndEmptyCorpus) {
  std::vector<CaptionRecord> r = {rec(1, 1, "a b")};
  auto vocab = build_vocabulary(r, 1);
  std::vector<MaxEntExample> bad = {{{vocab.id("a"), kEndId}, {}}};
  EXPECT_THROW(train_maxent(vocab, bad, {}), Error);
  EXPECT_THROW(train_maxent(vocab, {}, {}), Error);
  EXPECT_THROW(train_maxent(vocab, make_maxent_examples(r, {}, vocab), {1, 1.0, 2.0, 1}), Error);
}
