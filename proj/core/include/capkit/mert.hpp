#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "capkit/corpus.hpp"
#include "capkit/metrics.hpp"
#include "capkit/nbest.hpp"

namespace capkit {

using WeightVector = std::map<std::string, double>;

// Score of one hypothesis along a search direction: offset + gamma * slope.
struct Line {
  double offset = 0.0;
  double slope = 0.0;
};

// Hypothesis `winner` maximizes the score for gamma in (lo, hi). Segments
// are left to right and tile the real line.
struct EnvelopeSegment {
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  std::size_t winner = 0;
};

// Upper envelope by a convex-hull sweep over lines sorted by slope. Equal
// lines resolve to the lower index. Throws EmptyNBest.
std::vector<EnvelopeSegment> upper_envelope(std::span<const Line> lines);

// Envelope of an n-best list's feature rows along feature `direction`:
// offsets use `base` with that feature's weight zeroed, slopes are the
// feature values, so gamma is the direction's absolute weight.
std::vector<EnvelopeSegment> line_envelope(const NBestList& list, std::span<const double> base,
                                           std::size_t direction);

// Entry index maximizing dot(weights, features); ties go to the better rank.
std::size_t apply_weights(const NBestList& list, std::span<const double> weights);

// Weights aligned with `schema`. Throws SchemaMismatch unless the names
// match the schema exactly.
std::vector<double> align_weights(const WeightVector& weights, std::span<const std::string> schema);
WeightVector to_weight_vector(std::span<const double> weights, std::span<const std::string> schema);

struct MertConfig {
  std::size_t restarts = 8;
  std::size_t max_iters = 30;
  std::uint64_t seed = 1;
  double min_improvement = 1e-6;  // BLEU points
};

struct MertIteration {
  std::size_t run = 0;  // 0 = from the initial weights, then one per restart
  std::size_t iteration = 0;
  std::vector<double> weights;
  double bleu = 0.0;
};

struct MertResult {
  WeightVector weights;
  double bleu = 0.0;
  double initial_bleu = 0.0;
  std::vector<MertIteration> trace;
};

// Corpus BLEU of the 1-best under `weights`; 0 if every selection is empty.
double rerank_bleu(const NBestSet& nbest, const CaptionsByImage& refs, const WeightVector& weights);

// Och-style coordinate line search on corpus BLEU using merged envelope
// boundaries, with seeded random restarts. A step is taken only when it
// improves corpus BLEU by more than min_improvement. Throws
// SchemaMismatch, MissingReferences, EmptyNBest.
MertResult mert_optimize(const NBestSet& nbest, const CaptionsByImage& refs, const WeightVector& init,
                         const MertConfig& config = {});

std::string serialize_weights(const WeightVector& weights);
WeightVector parse_weights(std::string_view json_text);
WeightVector load_weights(const std::filesystem::path& path);

}  // namespace capkit
