#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "capkit/corpus.hpp"
#include "capkit/features.hpp"
#include "capkit/metrics.hpp"

namespace capkit {

struct RepetitionReport {
  std::size_t total = 0;
  std::size_t unique = 0;
  std::size_t seen = 0;
  double unique_fraction = 0.0;
  double seen_in_training_fraction = 0.0;
};

// Captions compare as space-joined token sequences. An empty `generated`
// map gives an all-zero report.
RepetitionReport repetition_stats(const std::map<ImageId, Tokens>& generated,
                                  const std::set<std::string>& training_captions);

// Joined token strings of every caption in `records`.
std::set<std::string> caption_strings(std::span<const CaptionRecord> records);

enum class OverlapBin { Least = 0, Middle = 1, Most = 2 };
std::string_view to_string(OverlapBin bin);

inline constexpr std::size_t kDefaultOverlapTopK = 50;
inline constexpr double kDefaultTailFraction = 0.2;

struct OverlapEntry {
  ImageId image_id = 0;
  double mean_similarity = 0.0;
  OverlapBin bin = OverlapBin::Middle;
};

// Entries sorted by mean similarity ascending, then image id.
struct OverlapBinAssignment {
  std::vector<OverlapEntry> entries;
  std::map<ImageId, OverlapBin> bin_of() const;
};

// Mean of each test image's top_k cosine similarities to the training set
// (top_k capped at the training size); the lowest and highest
// floor(tail * N) images form the tails. Throws DimensionMismatch,
// EmptyIndex, InvalidArgument (top_k == 0 or tail outside [0, 0.5]).
OverlapBinAssignment overlap_bins(const FeatureStore& test, const FeatureStore& train,
                                  std::size_t top_k = kDefaultOverlapTopK,
                                  double tail_fraction = kDefaultTailFraction);

struct BinnedBleu {
  std::array<BleuStats, 3> stats{};
  std::array<double, 3> bleu{};  // 0 for an empty bin
  std::array<std::size_t, 3> count{};
  BleuStats total;
  double total_bleu = 0.0;
};

// Corpus BLEU per bin. Throws MissingReferences, InvalidArgument when a
// generated image has no bin.
BinnedBleu binned_bleu(const std::map<ImageId, Tokens>& generated, const CaptionsByImage& refs,
                       const std::map<ImageId, OverlapBin>& bins);

}  // namespace capkit
