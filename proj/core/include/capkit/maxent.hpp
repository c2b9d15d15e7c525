#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "capkit/corpus.hpp"
#include "capkit/detections.hpp"
#include "capkit/scorer.hpp"
#include "capkit/vocabulary.hpp"

namespace capkit {

// 64-bit FNV-1a hash of "<template>\x1f<arg>\x1f<arg>...".
using FeatureId = std::uint64_t;

// Feature templates, in registry order:
//   uni        candidate identity
//   bi         previous word (START when history is empty) + candidate
//   tri        two previous words + candidate, once history is nonempty
//   cov_hit    word candidate is still in the remaining detection set
//   cov_miss   word candidate is not, while the remaining set is nonempty
//   end_done   END with the remaining set empty
//   end_open   END with detected words still unmentioned
inline constexpr std::array<std::string_view, 7> kMaxEntTemplates = {
    "uni", "bi", "tri", "cov_hit", "cov_miss", "end_done", "end_open"};

FeatureId feature_id(std::string_view templ, std::initializer_list<std::string_view> args = {});

// Feature ids for one (history, candidate, remaining) triple. `candidate`
// is a word or kEndToken. Sorted and duplicate-free.
std::vector<FeatureId> extract_features(std::span<const std::string> history, std::string_view candidate,
                                        const std::set<std::string>& remaining);

struct MaxEntConfig {
  std::size_t epochs = 10;
  double learning_rate = 0.1;
  double l2 = 1e-5;
  std::uint64_t seed = 1;
};

// A training caption with the detection words it was conditioned on.
struct MaxEntExample {
  std::vector<TokenId> tokens;  // without START/END
  CoverageSet detections;
};

// Detection-conditioned log-linear next-word model over the vocabulary
// plus END. Weights exist only for features seen with a gold next word in
// training; everything else scores zero.
class MaxEntLM {
 public:
  explicit MaxEntLM(Vocabulary vocab);

  const Vocabulary& vocab() const noexcept { return vocab_; }
  std::size_t num_features() const noexcept { return ids_.size(); }
  const std::vector<FeatureId>& feature_ids() const noexcept { return ids_; }
  std::span<const double> weights() const noexcept { return weights_; }
  std::span<double> mutable_weights() noexcept { return weights_; }
  double l2() const noexcept { return l2_; }

  // Registers ids (kept sorted); new weights start at zero.
  void register_features(std::span<const FeatureId> ids);

  // Registry indices of the features firing for `candidate`.
  void active_features(std::span<const TokenId> history, TokenId candidate,
                       const CoverageSet& remaining, std::vector<std::size_t>& out) const;

  // Candidate scores (dot products) for every token id; START gets -inf.
  std::vector<double> scores(std::span<const TokenId> history, const CoverageSet& remaining) const;

  // Softmax of scores(); entries sum to 1, START has probability 0.
  std::vector<double> next_word_distribution(std::span<const TokenId> history,
                                             const CoverageSet& remaining) const;

  // -log p(target | history, remaining) and, if `grad` is non-null, its
  // gradient with respect to weights() (resized and overwritten).
  double event_loss(std::span<const TokenId> history, TokenId target, const CoverageSet& remaining,
                    std::vector<double>* grad = nullptr) const;

  void save(const std::filesystem::path& path) const;
  static MaxEntLM load(const std::filesystem::path& path);
  std::string serialize() const;
  static MaxEntLM deserialize(std::string_view bytes);

 private:
  friend MaxEntLM train_maxent(Vocabulary, std::span<const MaxEntExample>, const MaxEntConfig&,
                               std::vector<double>*);

  std::vector<double> scores_from(std::span<const double> w, double scale, std::span<const TokenId> history,
                                  const CoverageSet& remaining) const;

  Vocabulary vocab_;
  std::vector<FeatureId> ids_;
  std::vector<double> weights_;
  std::unordered_map<FeatureId, std::size_t> index_;
  double l2_ = 0.0;
};

// Plain SGD with L2 decay over all (history, next word) events, visited in
// a seeded shuffled order each epoch. If `epoch_losses` is given it
// receives the mean event NLL after every epoch. Throws DegenerateCorpus.
MaxEntLM train_maxent(Vocabulary vocab, std::span<const MaxEntExample> corpus, const MaxEntConfig& config,
                      std::vector<double>* epoch_losses = nullptr);

std::vector<MaxEntExample> make_maxent_examples(std::span<const CaptionRecord> records,
                                                const std::map<ImageId, DetectionSet>& detections,
                                                const Vocabulary& vocab);

// Binds a model to one image's detection set.
class MaxEntScorer final : public StepScorer {
 public:
  explicit MaxEntScorer(const MaxEntLM& lm) : lm_(lm) {}

  std::size_t vocab_size() const override { return lm_.vocab().size(); }
  ScorerState initial_state() const override { return {}; }
  void step(const ScorerState& state, std::span<const TokenId> prefix, const CoverageSet& remaining,
            std::vector<double>& log_probs, ScorerState& next) const override;

 private:
  const MaxEntLM& lm_;
};

}  // namespace capkit
