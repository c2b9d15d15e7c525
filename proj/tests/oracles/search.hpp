#pragma once

// Exhaustive references for the decoders and the reranker.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <vector>

#include "capkit/corpus.hpp"
#include "capkit/metrics.hpp"
#include "capkit/nbest.hpp"
#include "capkit/scorer.hpp"

namespace oracle {

using capkit::CoverageSet;
using capkit::StepScorer;
using capkit::TokenId;

// Walks the scorer step by step over `words` then END.
inline double sequence_log_prob(const StepScorer& s, const std::vector<TokenId>& words, const CoverageSet& dets) {
  auto state = s.initial_state();
  capkit::ScorerState next;
  std::vector<TokenId> prefix;
  std::set<TokenId> remaining(dets.begin(), dets.end());
  std::vector<double> lp;
  double total = 0.0;
  for (std::size_t t = 0; t <= words.size(); ++t) {
    CoverageSet rem(remaining.begin(), remaining.end());
    s.step(state, prefix, rem, lp, next);
    TokenId tok = t < words.size() ? words[t] : capkit::kEndId;
    total += lp[tok];
    prefix.push_back(tok);
    remaining.erase(tok);
    state = next;
  }
  return total;
}

struct Best {
  std::vector<TokenId> words;
  double log_prob = -std::numeric_limits<double>::infinity();
  bool found = false;
};

// Every word sequence with at most max_len - 1 words; captions must
// mention at least min_coverage distinct detection words. Ties go to the
// lexicographically smaller sequence.
inline Best exhaustive_decode(const StepScorer& s, std::size_t max_len, const CoverageSet& dets = {},
                              std::size_t min_coverage = 0) {
  const TokenId first = 2, last = static_cast<TokenId>(s.vocab_size());
  Best best;
  std::vector<std::vector<TokenId>> frontier{{}};
  for (std::size_t len = 0; len < max_len; ++len) {
    std::vector<std::vector<TokenId>> grown;
    for (const auto& w : frontier) {
      std::set<TokenId> hit;
      for (TokenId t : w) {
        if (std::binary_search(dets.begin(), dets.end(), t)) hit.insert(t);
      }
      if (hit.size() >= min_coverage) {
        double lp = sequence_log_prob(s, w, dets);
        if (!best.found || lp > best.log_prob || (lp == best.log_prob && w < best.words)) best = {w, lp, true};
      }
      for (TokenId t = first; t < last; ++t) {
        grown.push_back(w);
        grown.back().push_back(t);
      }
    }
    frontier = std::move(grown);
  }
  return best;
}

struct Line {
  double offset, slope;
};

// Index maximizing offset + gamma * slope, lowest index on ties.
inline std::size_t pointwise_argmax(const std::vector<Line>& lines, double gamma) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].offset + gamma * lines[i].slope > lines[best].offset + gamma * lines[best].slope) best = i;
  }
  return best;
}

// Corpus BLEU of the 1-best under two weights (first index wins ties).
inline double rerank_bleu(const capkit::NBestSet& set, const capkit::CaptionsByImage& refs, double w0, double w1) {
  capkit::BleuStats total;
  for (const auto& list : set.lists) {
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < list.entries.size(); ++i) {
      const auto& f = list.entries[i].features;
      double sc = w0 * f[0] + w1 * f[1];
      if (sc > best_score) {
        best_score = sc;
        best = i;
      }
    }
    total += capkit::bleu_stats(list.entries[best].tokens, refs.at(list.image_id));
  }
  return total.hyp_len == 0 ? 0.0 : capkit::bleu_from_stats(total);
}

// Best corpus BLEU over an n x n grid of weight pairs on [lo, hi]^2.
inline double grid_search_bleu(const capkit::NBestSet& set, const capkit::CaptionsByImage& refs, int n = 200,
                               double lo = -1.0, double hi = 1.0) {
  std::vector<std::vector<capkit::BleuStats>> stats;
  for (const auto& list : set.lists) {
    stats.emplace_back();
    for (const auto& e : list.entries) stats.back().push_back(capkit::bleu_stats(e.tokens, refs.at(list.image_id)));
  }
  double best = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      double w0 = lo + (hi - lo) * i / (n - 1);
      double w1 = lo + (hi - lo) * j / (n - 1);
      capkit::BleuStats total;
      for (std::size_t s = 0; s < set.lists.size(); ++s) {
        const auto& entries = set.lists[s].entries;
        std::size_t pick = 0;
        double top = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < entries.size(); ++k) {
          double sc = w0 * entries[k].features[0] + w1 * entries[k].features[1];
          if (sc > top) {
            top = sc;
            pick = k;
          }
        }
        total += stats[s][pick];
      }
      if (total.hyp_len > 0) best = std::max(best, capkit::bleu_from_stats(total));
    }
  }
  return best;
}

}  // namespace oracle
