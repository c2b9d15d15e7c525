#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "capkit/errors.hpp"
#include "capkit/mert.hpp"
#include "capkit/random.hpp"
#include "oracles/search.hpp"
#include "support/toy_mert.hpp"

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

std::vector<Line> to_lines(const std::vector<oracle::Line>& in) {
  std::vector<Line> out;
  for (const auto& l : in) out.push_back({l.offset, l.slope});
  return out;
}

std::size_t envelope_winner(const std::vector<EnvelopeSegment>& env, double g) {
  for (const auto& s : env) {
    if (g > s.lo && g < s.hi) return s.winner;
  }
  return env.size();
}

}  // namespace

TEST(Envelope, SingleLineCoversEverything) {
  std::vector<Line> lines{{0.3, -2.0}};
  auto env = upper_envelope(lines);
  ASSERT_EQ(env.size(), 1u);
  EXPECT_TRUE(std::isinf(env[0].lo) && env[0].lo < 0);
  EXPECT_TRUE(std::isinf(env[0].hi) && env[0].hi > 0);
  EXPECT_EQ(env[0].winner, 0u);
}

TEST(Envelope, TwoLinesCrossAtHalf) {
  std::vector<Line> lines{{0.0, 1.0}, {1.0, -1.0}};
  auto env = upper_envelope(lines);
  ASSERT_EQ(env.size(), 2u);
  EXPECT_EQ(env[0].winner, 1u);
  EXPECT_EQ(env[1].winner, 0u);
  EXPECT_DOUBLE_EQ(env[0].hi, 0.5);
  EXPECT_DOUBLE_EQ(env[1].lo, 0.5);
}

TEST(Envelope, DuplicateAndDominatedLines) {
  std::vector<Line> lines{{1.0, 0.0}, {1.0, 0.0}, {0.0, 0.0}, {-5.0, 1.0}};
  auto env = upper_envelope(lines);
  ASSERT_EQ(env.size(), 2u);
  EXPECT_EQ(env[0].winner, 0u);
  EXPECT_EQ(env[1].winner, 3u);
  EXPECT_DOUBLE_EQ(env[0].hi, 6.0);
  EXPECT_EQ(code_of([] { upper_envelope({}); }), Errc::EmptyNBest);
}

TEST(Envelope, MatchesPointwiseArgmax) {
  Rng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<oracle::Line> ol;
    for (int i = 0; i < 20; ++i) ol.push_back({uniform_real(rng, -3, 3), uniform_real(rng, -3, 3)});
    auto env = upper_envelope(to_lines(ol));
    for (std::size_t i = 0; i < env.size(); ++i) {
      EXPECT_LT(env[i].lo, env[i].hi);
      if (i > 0) {
        EXPECT_EQ(env[i].lo, env[i - 1].hi);
        EXPECT_NE(env[i].winner, env[i - 1].winner);
      }
    }
    EXPECT_TRUE(std::isinf(env.front().lo) && std::isinf(env.back().hi));
    for (int k = 0; k < 1000; ++k) {
      double g = uniform_real(rng, -50, 50);
      EXPECT_EQ(envelope_winner(env, g), oracle::pointwise_argmax(ol, g)) << trial << " " << g;
    }
  }
}

TEST(LineEnvelope, OffsetsDropTheDirection) {
  NBestList list{1, {{{"a"}, {1.0, 2.0}}, {{"b"}, {0.0, 3.0}}}};
  std::vector<double> base{1.0, 100.0};
  auto env = line_envelope(list, base, 1);
  // offsets 1 and 0, slopes 2 and 3: cross at gamma = 1
  ASSERT_EQ(env.size(), 2u);
  EXPECT_EQ(env[0].winner, 0u);
  EXPECT_DOUBLE_EQ(env[0].hi, 1.0);
}

TEST(ApplyWeights, OneHotPicksColumnArgmax) {
  NBestList list{1, {{{"a"}, {0.1, 5.0}}, {{"b"}, {0.9, 1.0}}, {{"c"}, {0.5, 3.0}}}};
  EXPECT_EQ(apply_weights(list, std::vector<double>{1, 0}), 1u);
  EXPECT_EQ(apply_weights(list, std::vector<double>{0, 1}), 0u);
  EXPECT_EQ(apply_weights(list, std::vector<double>{1, -1}), 1u);
  EXPECT_EQ(apply_weights(list, std::vector<double>{0, 0}), 0u);
}

TEST(ApplyWeights, PositiveScaleInvariant) {
  auto toy = testing_support::make_toy_mert(5, 20, 6, 3);
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> w{uniform_real(rng, -1, 1), uniform_real(rng, -1, 1), uniform_real(rng, -1, 1)};
    double c = uniform_real(rng, 0.1, 10);
    std::vector<double> cw{w[0] * c, w[1] * c, w[2] * c};
    for (const auto& l : toy.set.lists) EXPECT_EQ(apply_weights(l, w), apply_weights(l, cw));
  }
}

TEST(ApplyWeights, Errors) {
  NBestList empty{1, {}};
  EXPECT_EQ(code_of([&] { apply_weights(empty, std::vector<double>{1}); }), Errc::EmptyNBest);
  NBestList list{1, {{{"a"}, {0.1, 5.0}}}};
  EXPECT_EQ(code_of([&] { apply_weights(list, std::vector<double>{1}); }), Errc::SchemaMismatch);
}

TEST(AlignWeights, RequiresExactSchema) {
  std::vector<std::string> schema{"a", "b"};
  EXPECT_EQ(align_weights({{"b", 2}, {"a", 1}}, schema), (std::vector<double>{1, 2}));
  EXPECT_EQ(code_of([&] { align_weights({{"a", 1}}, schema); }), Errc::SchemaMismatch);
  EXPECT_EQ(code_of([&] { align_weights({{"a", 1}, {"b", 1}, {"c", 1}}, schema); }), Errc::SchemaMismatch);
}

TEST(Mert, RerankBleuMatchesOracle) {
  auto toy = testing_support::make_toy_mert(3);
  Rng rng(4);
  for (int t = 0; t < 30; ++t) {
    double a = uniform_real(rng, -1, 1), b = uniform_real(rng, -1, 1);
    EXPECT_DOUBLE_EQ(rerank_bleu(toy.set, toy.refs, {{"f0", a}, {"f1", b}}), oracle::rerank_bleu(toy.set, toy.refs, a, b));
  }
}

TEST(Mert, SingleHypothesisListsKeepInit) {
  auto toy = testing_support::make_toy_mert(8, 5, 1);
  WeightVector init{{"f0", 0.3}, {"f1", -0.7}};
  auto r = mert_optimize(toy.set, toy.refs, init, {2, 5, 1, 1e-6});
  EXPECT_EQ(r.weights, init);
  EXPECT_EQ(r.bleu, r.initial_bleu);
}

TEST(Mert, ReachesGridOptimumOnToyProblems) {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    auto toy = testing_support::make_toy_mert(seed + 10);
    auto r = mert_optimize(toy.set, toy.refs, {{"f0", 1.0}, {"f1", 1.0}}, {});
    double grid = oracle::grid_search_bleu(toy.set, toy.refs, 80);
    EXPECT_GE(r.bleu, grid - 0.1) << seed;
    EXPECT_GE(r.bleu, r.initial_bleu);
    EXPECT_NEAR(r.bleu, rerank_bleu(toy.set, toy.refs, r.weights), 1e-9);
  }
}

TEST(Mert, TraceNeverDecreasesWithinARun) {
  auto toy = testing_support::make_toy_mert(21, 10, 8, 3);
  auto r = mert_optimize(toy.set, toy.refs, {{"f0", 1}, {"f1", 0}, {"f2", 0}}, {4, 20, 3, 1e-6});
  ASSERT_FALSE(r.trace.empty());
  for (std::size_t i = 1; i < r.trace.size(); ++i) {
    if (r.trace[i].run == r.trace[i - 1].run) EXPECT_GE(r.trace[i].bleu, r.trace[i - 1].bleu);
  }
}

TEST(Mert, Deterministic) {
  auto toy = testing_support::make_toy_mert(30, 8, 6, 3);
  WeightVector init{{"f0", 1}, {"f1", 0.5}, {"f2", -0.5}};
  auto a = mert_optimize(toy.set, toy.refs, init, {3, 10, 9, 1e-6});
  auto b = mert_optimize(toy.set, toy.refs, init, {3, 10, 9, 1e-6});
  EXPECT_EQ(a.weights, b.weights);
  EXPECT_EQ(a.bleu, b.bleu);
}

TEST(Mert, Errors) {
  auto toy = testing_support::make_toy_mert(2);
  EXPECT_EQ(code_of([&] { mert_optimize(toy.set, toy.refs, {{"f0", 1}}); }), Errc::SchemaMismatch);
  auto refs = toy.refs;
  refs.erase(refs.begin());
  EXPECT_EQ(code_of([&] { mert_optimize(toy.set, refs, {{"f0", 1}, {"f1", 1}}); }), Errc::MissingReferences);
  toy.set.lists[0].entries.clear();
  EXPECT_EQ(code_of([&] { mert_optimize(toy.set, toy.refs, {{"f0", 1}, {"f1", 1}}); }), Errc::EmptyNBest);
}

TEST(Weights, JsonRoundTrip) {
  WeightVector w{{"logprob", 1.25}, {"length", -0.1}, {"mrnn", 3e-7}};
  EXPECT_EQ(parse_weights(serialize_weights(w)), w);
  EXPECT_EQ(code_of([] { parse_weights("[1,2]"); }), Errc::MalformedInput);
}

TEST(NBest, TsvRoundTrip) {
  auto toy = testing_support::make_toy_mert(6, 3, 3, 2);
  auto back = parse_nbest(serialize_nbest(toy.set));
  EXPECT_EQ(back.schema, toy.set.schema);
  ASSERT_EQ(back.lists.size(), toy.set.lists.size());
  for (std::size_t i = 0; i < back.lists.size(); ++i) {
    ASSERT_EQ(back.lists[i].entries.size(), toy.set.lists[i].entries.size());
    for (std::size_t j = 0; j < back.lists[i].entries.size(); ++j) {
      EXPECT_EQ(back.lists[i].entries[j].tokens, toy.set.lists[i].entries[j].tokens);
      EXPECT_EQ(back.lists[i].entries[j].features, toy.set.lists[i].entries[j].features);
    }
  }
}

TEST(NBest, CaptionTableRoundTrip) {
  CaptionTable t{{3, {"a", "dog"}}, {10, {"two", "cats", "on", "a", "mat"}}};
  EXPECT_EQ(parse_caption_table(serialize_caption_table(t)), t);
}
