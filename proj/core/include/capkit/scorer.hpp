#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "capkit/detections.hpp"
#include "capkit/vocabulary.hpp"

namespace capkit {

// Opaque per-hypothesis model state, e.g. a recurrent hidden vector.
using ScorerState = std::vector<double>;

// Next-word distribution source for the decoders. Implementations are
// bound to one conditioning input (image vector, detection set, ...) and
// must be safe to call concurrently.
class StepScorer {
 public:
  virtual ~StepScorer() = default;

  // Token ids are 0..vocab_size()-1; id 0 (START) is never predicted and
  // id 1 is END.
  virtual std::size_t vocab_size() const = 0;

  virtual ScorerState initial_state() const = 0;

  // Consumes the last token of `prefix` (START when empty) in `state` and
  // writes log-probabilities of every next token id into `log_probs`
  // (log_probs[kStartId] = -inf) and the advanced state into `next`.
  virtual void step(const ScorerState& state, std::span<const TokenId> prefix,
                    const CoverageSet& remaining, std::vector<double>& log_probs,
                    ScorerState& next) const = 0;
};

// Sum of per-step log-probabilities of `tokens` followed by END, threading
// `remaining` exactly as the decoders do. Throws UnknownToken if `tokens`
// holds START or END.
double score_sequence(const StepScorer& scorer, std::span<const TokenId> tokens,
                      const CoverageSet& detections = {});

}  // namespace capkit
