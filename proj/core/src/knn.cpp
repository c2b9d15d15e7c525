#include "capkit/knn.hpp"

#include <algorithm>
#include <cmath>

#include "capkit/errors.hpp"
#include "capkit/random.hpp"

namespace capkit {
namespace {

double squared_norm(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  return s;
}

bool neighbor_before(const Neighbor& a, const Neighbor& b) {
  if (a.similarity != b.similarity) return a.similarity > b.similarity;
  return a.image_id < b.image_id;
}

}  // namespace

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw Error(Errc::DimensionMismatch, "cosine_similarity: lengths " + std::to_string(a.size()) +
                                             " and " + std::to_string(b.size()));
  }
  double na = squared_norm(a), nb = squared_norm(b);
  if (na == 0.0 || nb == 0.0) throw Error(Errc::ZeroVector, "cosine_similarity of a zero vector");
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += static_cast<double>(a[i]) * b[i];
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

FeatureIndex::FeatureIndex(const FeatureStore& store) : dim_(store.dim()), ids_(store.ids()) {
  unit_.resize(ids_.size() * dim_);
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    auto row = store.row(i);
    double norm = std::sqrt(squared_norm(row));
    if (norm == 0.0) {
      throw Error(Errc::ZeroVector, "zero feature vector for image " + std::to_string(ids_[i]));
    }
    for (std::size_t d = 0; d < dim_; ++d) unit_[i * dim_ + d] = row[d] / norm;
  }
}

std::vector<double> FeatureIndex::similarities(std::span<const float> query) const {
  if (query.size() != dim_) {
    throw Error(Errc::DimensionMismatch, "query has " + std::to_string(query.size()) +
                                             " values, index dim is " + std::to_string(dim_));
  }
  double norm = std::sqrt(squared_norm(query));
  if (norm == 0.0) throw Error(Errc::ZeroVector, "zero query vector");
  std::vector<double> q(query.begin(), query.end());
  for (auto& x : q) x /= norm;

  std::vector<double> sims(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    const double* row = unit_.data() + i * dim_;
    double dot = 0.0;
    for (std::size_t d = 0; d < dim_; ++d) dot += row[d] * q[d];
    sims[i] = std::clamp(dot, -1.0, 1.0);
  }
  return sims;
}

NeighborList FeatureIndex::nearest(std::span<const float> query, std::size_t k) const {
  if (k == 0) throw Error(Errc::InvalidArgument, "nearest: k must be >= 1");
  if (ids_.empty()) throw Error(Errc::EmptyIndex, "nearest on an empty index");
  auto sims = similarities(query);
  NeighborList all(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) all[i] = {ids_[i], sims[i]};
  k = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(),
                    neighbor_before);
  all.resize(k);
  return all;
}

Tokens one_nn_caption(const FeatureIndex& index, const CaptionsByImage& captions,
                      std::span<const float> query, std::uint64_t seed) {
  auto best = index.nearest(query, 1).front().image_id;
  auto it = captions.find(best);
  if (it == captions.end() || it->second.empty()) {
    throw Error(Errc::NoCaptions, "nearest image " + std::to_string(best) + " has no captions");
  }
  Rng rng(seed);
  return it->second[uniform_index(rng, it->second.size())];
}

ConsensusResult consensus_caption(std::span<const Tokens> pool, std::size_t m, std::size_t max_n) {
  if (pool.empty()) throw Error(Errc::EmptyPool, "consensus over an empty caption pool");
  if (m == 0) throw Error(Errc::InvalidArgument, "consensus: m must be >= 1");
  const std::size_t n = pool.size();
  if (n == 1) return {pool.front(), 0, 0.0, 1};

  OverlapTable table(pool, max_n);
  std::vector<double> overlap(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      overlap[i * n + j] = overlap[j * n + i] = table.fscore(i, j);
    }
  }

  const std::size_t keep = std::min(m, n - 1);
  std::vector<double> row;
  row.reserve(n - 1);
  std::size_t best = 0;
  double best_mean = -1.0;
  for (std::size_t i = 0; i < n; ++i) {
    row.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) row.push_back(overlap[i * n + j]);
    }
    std::partial_sort(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(keep), row.end(),
                      std::greater<>());
    double sum = 0.0;
    for (std::size_t j = 0; j < keep; ++j) sum += row[j];
    double mean = sum / static_cast<double>(keep);
    if (mean > best_mean) {
      best_mean = mean;
      best = i;
    }
  }
  return {pool[best], best, best_mean, n};
}

ConsensusResult knn_consensus_caption(const FeatureIndex& index, const CaptionsByImage& captions,
                                      std::span<const float> query, std::size_t k,
                                      std::size_t m, std::size_t max_n) {
  std::vector<Tokens> pool;
  for (const auto& nb : index.nearest(query, k)) {
    auto it = captions.find(nb.image_id);
    if (it == captions.end()) continue;
    pool.insert(pool.end(), it->second.begin(), it->second.end());
  }
  return consensus_caption(pool, m, max_n);
}

}  // namespace capkit
