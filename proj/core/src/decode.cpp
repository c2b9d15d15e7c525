#include "capkit/decode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "capkit/errors.hpp"

namespace capkit {
namespace {

struct Candidate {
  std::size_t parent;
  TokenId token;
  double score;
};

bool sequence_less(const std::vector<TokenId>& a, TokenId a_last, const std::vector<TokenId>& b,
                   TokenId b_last) {
  std::size_t n = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (a[i] != b[i]) return a[i] < b[i];
  }
  if (a.size() != b.size()) {
    // Compare the next element of the shorter prefix against the longer one.
    if (a.size() < b.size()) return a_last != b[n] ? a_last < b[n] : true;
    return a[n] != b_last ? a[n] < b_last : false;
  }
  return a_last < b_last;
}

bool hypothesis_before(const DecodedHypothesis& a, const DecodedHypothesis& b) {
  if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
  return std::lexicographical_compare(a.tokens.begin(), a.tokens.end(), b.tokens.begin(), b.tokens.end());
}

DecodeResult search(const StepScorer& scorer, const CoverageSet& detections, const BeamConfig& config,
                    bool coverage, std::size_t min_coverage) {
  if (config.beam_size == 0) throw Error(Errc::InvalidArgument, "beam_size must be >= 1");
  if (config.max_len == 0) throw Error(Errc::InvalidArgument, "max_len must be >= 1");
  if (config.n_best == 0) throw Error(Errc::InvalidArgument, "n_best must be >= 1");
  if (coverage && min_coverage > detections.size()) {
    throw Error(Errc::InvalidArgument, "min_coverage exceeds the number of detected words");
  }
  const std::size_t vocab = scorer.vocab_size();

  std::vector<BeamHypothesis> live(1);
  live[0].remaining = coverage ? detections : CoverageSet{};
  live[0].state = scorer.initial_state();
  std::vector<DecodedHypothesis> finished;

  auto covered = [&](const BeamHypothesis& h) { return detections.size() - h.remaining.size(); };
  auto kth_finished = [&]() {
    std::nth_element(finished.begin(), finished.begin() + static_cast<std::ptrdiff_t>(config.n_best - 1),
                     finished.end(), hypothesis_before);
    return finished[config.n_best - 1].log_prob;
  };

  std::vector<double> log_probs;
  std::vector<ScorerState> next_states;
  std::vector<Candidate> cands;
  for (std::size_t step = 1; step <= config.max_len && !live.empty(); ++step) {
    if (finished.size() >= config.n_best) {
      double best_live = -std::numeric_limits<double>::infinity();
      for (const auto& h : live) best_live = std::max(best_live, h.log_prob);
      if (best_live < kth_finished()) break;
    }

    const bool last = step == config.max_len;
    cands.clear();
    next_states.assign(live.size(), {});
    for (std::size_t hi = 0; hi < live.size(); ++hi) {
      const auto& h = live[hi];
      scorer.step(h.state, h.tokens, h.remaining, log_probs, next_states[hi]);
      if (log_probs.size() != vocab) throw Error(Errc::DimensionMismatch, "scorer returned wrong vocabulary size");
      for (TokenId tok = kEndId; tok < vocab; ++tok) {
        if (tok == kEndId) {
          if (coverage && covered(h) < min_coverage) continue;
        } else if (last) {
          continue;
        }
        double lp = log_probs[tok];
        if (std::isnan(lp) || lp == -std::numeric_limits<double>::infinity()) continue;
        cands.push_back({hi, tok, h.log_prob + lp});
      }
    }
    if (cands.empty()) break;

    auto before = [&](const Candidate& a, const Candidate& b) {
      if (a.score != b.score) return a.score > b.score;
      return sequence_less(live[a.parent].tokens, a.token, live[b.parent].tokens, b.token);
    };
    std::size_t keep = std::min(config.beam_size, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(), before);

    std::vector<BeamHypothesis> next;
    for (std::size_t i = 0; i < keep; ++i) {
      const auto& c = cands[i];
      const auto& parent = live[c.parent];
      if (c.token == kEndId) {
        finished.push_back({parent.tokens, c.score, covered(parent), true});
        continue;
      }
      BeamHypothesis h;
      h.tokens = parent.tokens;
      h.tokens.push_back(c.token);
      h.log_prob = c.score;
      h.remaining = coverage ? coverage_without(parent.remaining, c.token) : CoverageSet{};
      h.state = next_states[c.parent];
      next.push_back(std::move(h));
    }
    live = std::move(next);
    if (config.observer) config.observer(step, live);
  }

  DecodeResult result;
  if (finished.empty()) {
    result.complete = false;
    for (const auto& h : live) result.hypotheses.push_back({h.tokens, h.log_prob, covered(h), false});
  } else {
    result.hypotheses = std::move(finished);
  }
  std::sort(result.hypotheses.begin(), result.hypotheses.end(), hypothesis_before);
  if (result.hypotheses.size() > config.n_best) result.hypotheses.resize(config.n_best);
  return result;
}

}  // namespace

DecodeResult beam_search(const StepScorer& scorer, const BeamConfig& config) {
  return search(scorer, {}, config, false, 0);
}

DecodeResult coverage_beam_search(const StepScorer& scorer, const CoverageSet& detections,
                                  const BeamConfig& config, std::size_t min_coverage) {
  return search(scorer, detections, config, true, min_coverage);
}

std::size_t default_min_coverage(std::size_t detections, std::size_t max_len) {
  return std::min(detections, max_len == 0 ? 0 : max_len - 1);
}

double score_sequence(const StepScorer& scorer, std::span<const TokenId> tokens, const CoverageSet& detections) {
  ScorerState state = scorer.initial_state(), next;
  CoverageSet remaining = detections;
  std::vector<TokenId> prefix;
  std::vector<double> log_probs;
  double total = 0.0;
  for (std::size_t t = 0; t <= tokens.size(); ++t) {
    TokenId tok = t < tokens.size() ? tokens[t] : kEndId;
    if (t < tokens.size() && (tok == kStartId || tok == kEndId)) {
      throw Error(Errc::UnknownToken, "scored caption contains a reserved token");
    }
    scorer.step(state, prefix, remaining, log_probs, next);
    if (tok >= log_probs.size()) throw Error(Errc::UnknownToken, "token id out of range");
    total += log_probs[tok];
    prefix.push_back(tok);
    remaining = coverage_without(remaining, tok);
    state = std::move(next);
  }
  return total;
}

}  // namespace capkit
