#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "capkit/corpus.hpp"

namespace capkit {

inline constexpr std::size_t kBleuOrder = 4;

// Additive BLEU sufficient statistics.
struct BleuStats {
  std::array<std::uint64_t, kBleuOrder> matches{};
  std::array<std::uint64_t, kBleuOrder> hyp_ngrams{};
  std::uint64_t hyp_len = 0;
  std::uint64_t ref_len = 0;  // closest reference length

  BleuStats& operator+=(const BleuStats& o);
  BleuStats& operator-=(const BleuStats& o);
  friend BleuStats operator+(BleuStats a, const BleuStats& b) { return a += b; }
  friend bool operator==(const BleuStats&, const BleuStats&) = default;
};

// Clipped counts against the per-n-gram maximum over references. The
// brevity reference length is the one closest to the hypothesis length,
// the shorter one on a tie. Throws EmptyReferences.
BleuStats bleu_stats(std::span<const std::string> hyp, std::span<const Tokens> refs);

// 100 * BP * geometric mean of the non-empty orders' precisions, with
// BP = min(1, exp(1 - ref_len / hyp_len)). Any zero precision gives 0.
// Throws EmptyHypothesis when hyp_len is 0.
double bleu_from_stats(const BleuStats& stats);

// Convenience for scoring whole corpora: hypotheses and references aligned
// by position.
BleuStats corpus_bleu_stats(std::span<const Tokens> hyps, std::span<const std::vector<Tokens>> refs);

struct MeteorConfig {
  double alpha = 0.9;
  double beta = 3.0;
  double gamma = 0.5;
  bool stem = true;
  // Symmetric: a~b if b is listed under a or a under b.
  std::map<std::string, std::set<std::string>> synonyms;

  void validate() const;
};

// Suffix-stripping stemmer used by the stem-match stage.
std::string light_stem(const std::string& word);

struct MeteorAlignment {
  std::size_t matches = 0;
  std::size_t chunks = 0;
};

// Staged unigram alignment (exact, then stem, then synonym). Each stage
// adds the alignment of still-unaligned words with the most matches and,
// among those, the fewest chunks overall.
MeteorAlignment meteor_align(std::span<const std::string> hyp, std::span<const std::string> ref,
                             const MeteorConfig& config);

// Best score over references on a 0-100 scale. Throws EmptyReferences.
double meteor(std::span<const std::string> hyp, std::span<const Tokens> refs,
              const MeteorConfig& config = {});

// Log-probability (natural log) of a caption and the number of predicted
// tokens it covers (END included).
using CaptionLogProb = std::function<std::pair<double, std::size_t>(const Tokens&)>;

// exp(-sum logprob / sum tokens). Throws NonFiniteLogProb.
double perplexity(const CaptionLogProb& logprob_fn, std::span<const Tokens> corpus);

}  // namespace capkit
