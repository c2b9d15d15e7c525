#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "capkit/detections.hpp"
#include "capkit/scorer.hpp"

namespace capkit {

inline constexpr std::size_t kDefaultBeamSize = 10;
inline constexpr std::size_t kDefaultMaxEntNBest = 500;

struct BeamHypothesis {
  std::vector<TokenId> tokens;  // emitted words; END is not stored
  double log_prob = 0.0;
  CoverageSet remaining;        // detected words not yet emitted
  bool finished = false;
  ScorerState state;
};

// Called after each expansion with the hypotheses that stay live.
using BeamObserver = std::function<void(std::size_t step, std::span<const BeamHypothesis> live)>;

struct BeamConfig {
  std::size_t beam_size = kDefaultBeamSize;
  std::size_t max_len = 20;  // tokens per hypothesis, END included
  std::size_t n_best = 1;
  BeamObserver observer;
};

struct DecodedHypothesis {
  std::vector<TokenId> tokens;
  double log_prob = 0.0;
  std::size_t covered = 0;
  bool finished = false;
};

struct DecodeResult {
  std::vector<DecodedHypothesis> hypotheses;  // best first
  // False when no hypothesis produced END within max_len; `hypotheses`
  // then holds the best partial ones.
  bool complete = true;
};

// Length-synchronous beam search with raw (unnormalized) log-prob scores.
// Each step keeps the beam_size best expansions, ordered by score and then
// by token sequence; expansions ending in END retire to the n-best pool.
DecodeResult beam_search(const StepScorer& scorer, const BeamConfig& config);

// As beam_search, but each hypothesis tracks the detected words it has
// not emitted, the scorer sees that set, and END is only admissible once
// at least min_coverage detected words have been emitted.
DecodeResult coverage_beam_search(const StepScorer& scorer, const CoverageSet& detections,
                                  const BeamConfig& config, std::size_t min_coverage);

// All detected words, capped so a caption of max_len tokens can satisfy it.
std::size_t default_min_coverage(std::size_t detections, std::size_t max_len);

}  // namespace capkit
