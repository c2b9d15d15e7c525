#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "capkit/corpus.hpp"
#include "capkit/features.hpp"

namespace capkit {

// Default retrieval hyperparameters (neighbor images, pool-mates averaged,
// n-gram orders in the overlap F-score).
inline constexpr std::size_t kDefaultNeighbors = 90;
inline constexpr std::size_t kDefaultPoolMates = 125;
inline constexpr std::size_t kDefaultOverlapOrder = 4;

// a.b / (|a||b|), clamped to [-1, 1]. Throws DimensionMismatch / ZeroVector.
double cosine_similarity(std::span<const float> a, std::span<const float> b);

struct Neighbor {
  ImageId image_id = 0;
  double similarity = 0.0;
};

// Sorted by similarity descending, ties by ascending image id.
using NeighborList = std::vector<Neighbor>;

// Exact brute-force cosine search over L2-normalized rows. Immutable after
// construction; concurrent nearest() calls are safe.
class FeatureIndex {
 public:
  // Throws ZeroVector if any stored vector has zero norm.
  explicit FeatureIndex(const FeatureStore& store);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return ids_.size(); }
  const std::vector<ImageId>& ids() const noexcept { return ids_; }
  std::span<const double> unit_row(std::size_t i) const {
    return {unit_.data() + i * dim_, dim_};
  }

  // Cosine similarity of `query` to every row, in row order.
  std::vector<double> similarities(std::span<const float> query) const;

  // Top-k rows (k capped at size()). Throws EmptyIndex, DimensionMismatch,
  // ZeroVector, InvalidArgument (k == 0).
  NeighborList nearest(std::span<const float> query, std::size_t k) const;

 private:
  std::size_t dim_;
  std::vector<ImageId> ids_;
  std::vector<double> unit_;
};

// Caption of the single most similar training image, chosen uniformly
// among that image's captions with a generator seeded by `seed`.
Tokens one_nn_caption(const FeatureIndex& index, const CaptionsByImage& captions,
                      std::span<const float> query, std::uint64_t seed);

// Mean over n = 1..max_n of the harmonic mean of clipped n-gram precision
// and recall. Orders where neither caption has an n-gram are skipped.
double ngram_overlap_fscore(std::span<const std::string> a, std::span<const std::string> b,
                            std::size_t max_n = kDefaultOverlapOrder);

// Pairwise overlap F-scores over a fixed caption list, computed from
// interned n-gram profiles so repeated comparisons are cheap.
class OverlapTable {
 public:
  OverlapTable(std::span<const Tokens> captions, std::size_t max_n);

  std::size_t size() const noexcept { return profiles_.size(); }
  double fscore(std::size_t i, std::size_t j) const;

 private:
  // profiles_[caption][order - 1] is the sorted multiset of interned n-gram ids.
  std::vector<std::vector<std::vector<std::uint32_t>>> profiles_;
};

struct ConsensusResult {
  Tokens caption;
  std::size_t index = 0;  // position of the winner in the pool
  double mean_overlap = 0.0;
  std::size_t candidate_pool_size = 0;
};

// For each candidate, averages its min(m, |C|-1) highest overlaps with the
// other pool captions (summed in descending order) and returns the first
// candidate with the highest mean. Throws EmptyPool.
ConsensusResult consensus_caption(std::span<const Tokens> pool, std::size_t m,
                                  std::size_t max_n = kDefaultOverlapOrder);

// Pools the captions of the k nearest training images (neighbor order,
// then caption order) and returns their consensus caption.
ConsensusResult knn_consensus_caption(const FeatureIndex& index, const CaptionsByImage& captions,
                                      std::span<const float> query, std::size_t k,
                                      std::size_t m, std::size_t max_n = kDefaultOverlapOrder);

}  // namespace capkit
