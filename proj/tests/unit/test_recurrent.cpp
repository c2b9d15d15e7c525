#include <gtest/gtest.h>

#include <cmath>

#include "capkit/errors.hpp"
#include "capkit/random.hpp"
#include "capkit/recurrent.hpp"
#include "oracles/finite_diff.hpp"
#include "oracles/gru.hpp"
#include "support/temp_dir.hpp"

using namespace capkit;

namespace {

CaptionRecord rec(std::uint64_t id, ImageId image, const std::string& text) { return {id, image, text, tokenize(text)}; }

Vocabulary small_vocab(std::size_t words) {
  Vocabulary v;
  for (std::size_t i = 0; i < words; ++i) v.add("w" + std::to_string(i));
  return v;
}

MatrixXd random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double s) {
  MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform_real(rng, -s, s);
  return m;
}

oracle::Mat to_rows(const MatrixXd& m) {
  oracle::Mat out(m.rows(), oracle::Vec(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
  return out;
}

oracle::Vec to_vec(const VectorXd& v) { return oracle::Vec(v.data(), v.data() + v.size()); }

std::vector<RecurrentExample> random_batch(Rng& rng, const RecurrentLM& lm, std::size_t n) {
  std::vector<RecurrentExample> out(n);
  const auto V = static_cast<TokenId>(lm.vocab().size());
  for (auto& ex : out) {
    ex.conditioning.image.resize(lm.dims().feature);
    for (auto& x : ex.conditioning.image) x = uniform_real(rng, -1.0, 1.0);
    if (lm.mode() == ConditioningMode::AuxiliaryVector) {
      std::set<TokenId> d;
      for (int i = 0; i < 2; ++i) d.insert(static_cast<TokenId>(2 + uniform_index(rng, V - 2)));
      ex.conditioning.detections.assign(d.begin(), d.end());
    }
    for (std::size_t i = 0, len = 1 + uniform_index(rng, 4); i < len; ++i) {
      ex.tokens.push_back(static_cast<TokenId>(2 + uniform_index(rng, V - 2)));
    }
  }
  return out;
}

// Worst relative error between analytic and central-difference gradients
// over every parameter entry.
double gradient_check(Rng& rng, ConditioningMode mode) {
  RecurrentDims dims{4, 5, mode == ConditioningMode::InitialState ? 3u : 0u};
  RecurrentLM lm(small_vocab(4), mode, dims, rng(), 0.5);
  auto batch = random_batch(rng, lm, 3);
  auto analytic = lm.loss_and_gradients(batch);
  double worst = 0.0;
  std::vector<double*> params;
  std::vector<double> grads;
  lm.mutable_params().for_each([&](std::string_view, auto& t) {
    for (Eigen::Index i = 0; i < t.size(); ++i) params.push_back(t.data() + i);
  });
  analytic.grad.for_each([&](std::string_view, const auto& t) {
    for (Eigen::Index i = 0; i < t.size(); ++i) grads.push_back(t.data()[i]);
  });
  EXPECT_EQ(params.size(), grads.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    double num = oracle::central_difference([&] { return lm.loss(batch); }, *params[i]);
    worst = std::max(worst, oracle::relative_error(grads[i], num));
  }
  return worst;
}

}  // namespace

TEST(GruCell, ZeroParameters) {
  auto w = GruWeights::zeros(3, 4);
  VectorXd x = VectorXd::Constant(3, 0.7), h(4);
  h << 1.0, -2.0, 0.5, 4.0;
  auto out = gru_cell(x, h, w);
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(out[i], 0.5 * h[i]);
  EXPECT_TRUE(gru_cell(x, VectorXd::Zero(4), w).isZero(0.0));
  EXPECT_THROW(gru_cell(VectorXd::Zero(2), h, w), Error);
}

TEST(GruCell, MatchesScalarOracle) {
  Rng rng(12);
  for (int t = 0; t < 20; ++t) {
    GruWeights w;
    w.Wz = random_matrix(rng, 3, 3, 1.0);
    w.Uz = random_matrix(rng, 3, 3, 1.0);
    w.Wr = random_matrix(rng, 3, 3, 1.0);
    w.Ur = random_matrix(rng, 3, 3, 1.0);
    w.Wh = random_matrix(rng, 3, 3, 1.0);
    w.Uh = random_matrix(rng, 3, 3, 1.0);
    w.bz = random_matrix(rng, 3, 1, 1.0);
    w.br = random_matrix(rng, 3, 1, 1.0);
    w.bh = random_matrix(rng, 3, 1, 1.0);
    VectorXd x = random_matrix(rng, 3, 1, 1.0), h = random_matrix(rng, 3, 1, 1.0);
    oracle::Gru g{to_rows(w.Wz), to_rows(w.Uz), to_rows(w.Wr), to_rows(w.Ur), to_rows(w.Wh),
                  to_rows(w.Uh), to_vec(w.bz),  to_vec(w.br),  to_vec(w.bh)};
    auto want = oracle::gru_step(to_vec(x), to_vec(h), g);
    auto got = gru_cell(x, h, w);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
  }
}

TEST(Recurrent, RowsAreDistributions) {
  Rng rng(1);
  for (auto mode : {ConditioningMode::InitialState, ConditioningMode::AuxiliaryVector}) {
    RecurrentLM lm(small_vocab(6), mode, {4, 5, mode == ConditioningMode::InitialState ? 3u : 0u}, 3, 0.5);
    auto ex = random_batch(rng, lm, 1)[0];
    auto f = lm.forward(ex.conditioning, ex.tokens);
    ASSERT_EQ(f.probs.size(), ex.tokens.size() + 1);
    for (const auto& p : f.probs) {
      EXPECT_NEAR(p.sum(), 1.0, 1e-6);
      EXPECT_EQ(p[kStartId], 0.0);
    }
  }
}

TEST(Recurrent, ZeroParametersGiveUniformLoss) {
  auto vocab = small_vocab(5);
  RecurrentLM lm(vocab, ConditioningMode::InitialState, {3, 4, 2}, 1);
  lm.mutable_params() = lm.params().zeros_like();
  std::vector<RecurrentExample> batch = {{{{0.3, -0.2}, {}}, {}}};
  EXPECT_NEAR(lm.loss(batch), std::log(double(vocab.size() - 1)), 1e-12);
}

TEST(Recurrent, EmptyDetectionsIgnoreDetectorRows) {
  RecurrentLM lm(small_vocab(5), ConditioningMode::AuxiliaryVector, {3, 4, 0}, 4, 0.5);
  Conditioning none{{}, {}};
  std::vector<TokenId> toks{2, 3, 4};
  double before = lm.forward(none, toks).log_prob;
  lm.mutable_params().detector.setConstant(3.0);
  EXPECT_EQ(lm.forward(none, toks).log_prob, before);
}

TEST(Recurrent, EmittedDetectionLeavesTheSum) {
  RecurrentLM lm(small_vocab(5), ConditioningMode::AuxiliaryVector, {3, 4, 0}, 5, 0.5);
  std::vector<TokenId> toks{3, 2, 4};
  Conditioning c{{}, {3, 5}};
  auto f = lm.forward(c, toks);
  // Manual replay where word 3 stays in the set after being emitted.
  auto h = lm.initial_state(c);
  h = lm.advance(h, kStartId, c.detections);
  EXPECT_TRUE(h.isApprox(f.hidden[0], 1e-14));
  auto kept = lm.advance(h, 3, c.detections);
  auto removed = lm.advance(h, 3, coverage_without(c.detections, 3));
  EXPECT_TRUE(removed.isApprox(f.hidden[1], 1e-14));
  EXPECT_GT((kept - removed).norm(), 1e-8);
}

TEST(Recurrent, IdenticalFeaturesIdenticalOutputs) {
  RecurrentLM lm(small_vocab(5), ConditioningMode::InitialState, {3, 4, 3}, 6, 0.5);
  Conditioning a{{0.1, 0.2, -0.4}, {}}, b = a;
  std::vector<TokenId> toks{2, 4};
  auto fa = lm.forward(a, toks), fb = lm.forward(b, toks);
  for (std::size_t i = 0; i < fa.probs.size(); ++i) EXPECT_EQ(fa.probs[i], fb.probs[i]);
}

TEST(Recurrent, DetectionOrderDoesNotMatter) {
  std::vector<CaptionRecord> r = {rec(1, 1, "a dog on grass")};
  auto vocab = build_vocabulary(r, 1);
  RecurrentLM lm(vocab, ConditioningMode::AuxiliaryVector, {3, 4, 0}, 7, 0.5);
  std::map<ImageId, DetectionSet> d1{{1, make_detection_set(1, 0.5, {{"dog", 0.9}, {"grass", 0.8}, {"a", 0.7}})}};
  std::map<ImageId, DetectionSet> d2{{1, make_detection_set(1, 0.5, {{"a", 0.7}, {"grass", 0.8}, {"dog", 0.9}})}};
  auto c1 = conditioning_for(1, ConditioningMode::AuxiliaryVector, vocab, nullptr, &d1);
  auto c2 = conditioning_for(1, ConditioningMode::AuxiliaryVector, vocab, nullptr, &d2);
  auto toks = vocab.encode(r[0].tokens);
  EXPECT_EQ(lm.forward(c1, toks).log_prob, lm.forward(c2, toks).log_prob);
}

TEST(Recurrent, DuplicatedBatchSameMeanLoss) {
  Rng rng(9);
  RecurrentLM lm(small_vocab(5), ConditioningMode::InitialState, {3, 4, 2}, 8, 0.5);
  auto batch = random_batch(rng, lm, 3);
  auto twice = batch;
  twice.insert(twice.end(), batch.begin(), batch.end());
  EXPECT_NEAR(lm.loss(batch), lm.loss(twice), 1e-12);
  EXPECT_NEAR(lm.loss_and_gradients(batch).loss, lm.loss(batch), 1e-12);
}

TEST(Recurrent, GradientCheckInitialState) {
  Rng rng(101);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) worst = std::max(worst, gradient_check(rng, ConditioningMode::InitialState));
  EXPECT_LT(worst, 1e-4);
}

TEST(Recurrent, GradientCheckAuxiliaryVector) {
  Rng rng(202);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) worst = std::max(worst, gradient_check(rng, ConditioningMode::AuxiliaryVector));
  EXPECT_LT(worst, 1e-4);
}

TEST(RecurrentTraining, LossDecreasesOnToyCorpus) {
  std::vector<CaptionRecord> r;
  const char* caps[] = {"a dog runs", "a cat sits", "the dog runs fast", "a red bus"};
  FeatureStore f(2);
  for (int i = 0; i < 100; ++i) {
    r.push_back(rec(i + 1, i % 4, caps[i % 4]));
  }
  for (int i = 0; i < 4; ++i) f.add(i, std::vector<float>{float(i), 1.0f - float(i) / 4});
  auto vocab = build_vocabulary(r, 1);
  auto ex = make_recurrent_examples(r, vocab, ConditioningMode::InitialState, &f, nullptr);
  RecurrentLM lm(vocab, ConditioningMode::InitialState, {8, 8, 2}, 1);
  double initial = lm.loss(ex);
  std::vector<double> losses;
  auto trained = train_recurrent(lm, ex, {30, 0.1, 5.0, 1}, &losses);
  EXPECT_EQ(losses.size(), 30u);
  EXPECT_LT(trained.loss(ex), initial);
}

TEST(RecurrentTraining, ZeroLearningRateAndDeterminism) {
  Rng rng(10);
  RecurrentLM lm(small_vocab(5), ConditioningMode::InitialState, {3, 4, 2}, 8, 0.3);
  auto batch = random_batch(rng, lm, 6);
  auto same = train_recurrent(lm, batch, {3, 0.0, 5.0, 1});
  EXPECT_EQ(same.serialize(), lm.serialize());
  auto a = train_recurrent(lm, batch, {3, 0.1, 5.0, 4});
  auto b = train_recurrent(lm, batch, {3, 0.1, 5.0, 4});
  EXPECT_EQ(a.serialize(), b.serialize());
  EXPECT_NE(a.serialize(), lm.serialize());
}

TEST(Recurrent, SaveLoadRoundTrip) {
  RecurrentLM lm(small_vocab(5), ConditioningMode::AuxiliaryVector, {3, 4, 0}, 11, 0.3);
  testing_support::TempDir dir;
  lm.save(dir / "m.grlm");
  auto back = RecurrentLM::load(dir / "m.grlm");
  EXPECT_EQ(back.serialize(), lm.serialize());
  EXPECT_EQ(back.mode(), ConditioningMode::AuxiliaryVector);
  auto bytes = lm.serialize();
  EXPECT_THROW(RecurrentLM::deserialize(std::string_view(bytes).substr(0, bytes.size() / 2)), Error);
}
