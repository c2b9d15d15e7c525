#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "capkit/corpus.hpp"
#include "capkit/detections.hpp"
#include "capkit/features.hpp"
#include "capkit/scorer.hpp"
#include "capkit/vocabulary.hpp"

namespace capkit {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Gated recurrent unit:
//   z  = sigmoid(Wz x + Uz h + bz)
//   r  = sigmoid(Wr x + Ur h + br)
//   c  = tanh(Wh x + Uh (r * h) + bh)
//   h' = (1 - z) * h + z * c
struct GruWeights {
  MatrixXd Wz, Uz, Wr, Ur, Wh, Uh;
  VectorXd bz, br, bh;

  static GruWeights zeros(std::size_t input_dim, std::size_t hidden_dim);
  std::size_t input_dim() const { return static_cast<std::size_t>(Wz.cols()); }
  std::size_t hidden_dim() const { return static_cast<std::size_t>(Wz.rows()); }
};

// Throws DimensionMismatch.
VectorXd gru_cell(const VectorXd& x, const VectorXd& h, const GruWeights& w);

enum class ConditioningMode : std::uint32_t {
  // Image vector projected through tanh(H f + b) becomes the initial state.
  InitialState = 0,
  // Each step's input also carries sigmoid(P e_prev + sum_v g_v + U h_prev)
  // over the detection words not yet emitted.
  AuxiliaryVector = 1,
};

struct RecurrentDims {
  std::size_t embed = 32;
  std::size_t hidden = 64;
  std::size_t feature = 0;  // image vector length; InitialState mode only
};

// All trainable tensors. Tensors that the mode does not use are empty.
struct RecurrentParams {
  MatrixXd embed;           // vocab x embed, row per input token id
  MatrixXd image_proj;      // hidden x feature
  VectorXd image_bias;      // hidden
  MatrixXd detector;        // vocab x hidden, row g_v per token id
  MatrixXd aux_word;        // hidden x embed
  MatrixXd aux_recurrent;   // hidden x hidden
  GruWeights gru;
  MatrixXd out;             // (vocab - 1) x hidden; row k predicts token k + 1
  VectorXd out_bias;

  template <typename Self, typename Fn>
  static void visit(Self& self, Fn&& fn) {
    fn("embed", self.embed);
    fn("image_proj", self.image_proj);
    fn("image_bias", self.image_bias);
    fn("detector", self.detector);
    fn("aux_word", self.aux_word);
    fn("aux_recurrent", self.aux_recurrent);
    fn("gru.Wz", self.gru.Wz);
    fn("gru.Uz", self.gru.Uz);
    fn("gru.bz", self.gru.bz);
    fn("gru.Wr", self.gru.Wr);
    fn("gru.Ur", self.gru.Ur);
    fn("gru.br", self.gru.br);
    fn("gru.Wh", self.gru.Wh);
    fn("gru.Uh", self.gru.Uh);
    fn("gru.bh", self.gru.bh);
    fn("out", self.out);
    fn("out_bias", self.out_bias);
  }
  template <typename Fn> void for_each(Fn&& fn) { visit(*this, fn); }
  template <typename Fn> void for_each(Fn&& fn) const { visit(*this, fn); }

  RecurrentParams zeros_like() const;
  double squared_norm() const;
  bool all_finite() const;
  std::size_t count() const;
};

// What a caption is conditioned on: the image vector (InitialState) or the
// detection set (AuxiliaryVector).
struct Conditioning {
  std::vector<double> image;
  CoverageSet detections;
};

struct ForwardResult {
  std::vector<VectorXd> probs;  // per step, indexed by token id (START = 0)
  std::vector<VectorXd> hidden; // state after each step
  double log_prob = 0.0;
};

struct RecurrentExample {
  Conditioning conditioning;
  std::vector<TokenId> tokens;  // caption without START/END
};

struct LossAndGradient {
  double loss = 0.0;  // mean NLL per predicted token (END included)
  RecurrentParams grad;
};

class RecurrentLM {
 public:
  // Parameters drawn uniformly from (-init_scale, init_scale).
  RecurrentLM(Vocabulary vocab, ConditioningMode mode, RecurrentDims dims, std::uint64_t seed,
              double init_scale = 0.08);

  const Vocabulary& vocab() const noexcept { return vocab_; }
  ConditioningMode mode() const noexcept { return mode_; }
  const RecurrentDims& dims() const noexcept { return dims_; }
  const RecurrentParams& params() const noexcept { return params_; }
  RecurrentParams& mutable_params() noexcept { return params_; }
  std::size_t output_size() const noexcept { return vocab_.size() - 1; }

  VectorXd initial_state(const Conditioning& cond) const;

  // One recurrence: consume `prev` with detection words `remaining`
  // still pending, starting from state `h`.
  VectorXd advance(const VectorXd& h, TokenId prev, const CoverageSet& remaining) const;

  // Log-softmax over token ids (START = -inf) from a state.
  VectorXd log_probs(const VectorXd& h) const;

  // Predicts tokens then END. The remaining detection set shrinks as words
  // are emitted. Throws DimensionMismatch / UnknownToken.
  ForwardResult forward(const Conditioning& cond, std::span<const TokenId> tokens) const;

  // Exact backpropagation through time. Throws NonFiniteLoss,
  // InvalidArgument on an empty batch.
  LossAndGradient loss_and_gradients(std::span<const RecurrentExample> batch) const;

  double loss(std::span<const RecurrentExample> batch) const;

  void save(const std::filesystem::path& path) const;
  static RecurrentLM load(const std::filesystem::path& path);
  std::string serialize() const;
  static RecurrentLM deserialize(std::string_view bytes);

 private:
  RecurrentLM() = default;
  void check(const Conditioning& cond, std::span<const TokenId> tokens) const;

  Vocabulary vocab_;
  ConditioningMode mode_ = ConditioningMode::InitialState;
  RecurrentDims dims_;
  RecurrentParams params_;
};

struct RecurrentTrainConfig {
  std::size_t epochs = 10;
  double learning_rate = 0.1;
  double clip = 5.0;  // global gradient-norm clip; <= 0 disables
  std::uint64_t seed = 1;
};

// Per-example SGD in a seeded shuffled order. `epoch_losses` receives the
// mean token NLL over `data` after every epoch. Throws DegenerateCorpus.
RecurrentLM train_recurrent(RecurrentLM lm, std::span<const RecurrentExample> data,
                            const RecurrentTrainConfig& config,
                            std::vector<double>* epoch_losses = nullptr);

// Training examples from captions, conditioned on image vectors or
// detection sets according to `mode`. Images lacking a conditioning input
// are skipped.
std::vector<RecurrentExample> make_recurrent_examples(std::span<const CaptionRecord> records,
                                                      const Vocabulary& vocab, ConditioningMode mode,
                                                      const FeatureStore* features,
                                                      const std::map<ImageId, DetectionSet>* detections);

Conditioning conditioning_for(ImageId id, ConditioningMode mode, const Vocabulary& vocab,
                              const FeatureStore* features,
                              const std::map<ImageId, DetectionSet>* detections);

class RecurrentScorer final : public StepScorer {
 public:
  RecurrentScorer(const RecurrentLM& lm, Conditioning cond);

  std::size_t vocab_size() const override { return lm_.vocab().size(); }
  ScorerState initial_state() const override { return initial_; }
  void step(const ScorerState& state, std::span<const TokenId> prefix, const CoverageSet& remaining,
            std::vector<double>& log_probs, ScorerState& next) const override;

 private:
  const RecurrentLM& lm_;
  ScorerState initial_;
};

}  // namespace capkit
