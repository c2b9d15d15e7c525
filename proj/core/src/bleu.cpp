#include <cmath>
#include <map>

#include "capkit/errors.hpp"
#include "capkit/metrics.hpp"

namespace capkit {
namespace {

using NgramCounts = std::map<std::vector<std::string>, std::uint64_t>;

NgramCounts count_ngrams(std::span<const std::string> words, std::size_t n) {
  NgramCounts counts;
  for (std::size_t s = 0; s + n <= words.size(); ++s) {
    ++counts[std::vector<std::string>(words.begin() + static_cast<std::ptrdiff_t>(s),
                                      words.begin() + static_cast<std::ptrdiff_t>(s + n))];
  }
  return counts;
}

}  // namespace

BleuStats& BleuStats::operator+=(const BleuStats& o) {
  for (std::size_t n = 0; n < kBleuOrder; ++n) {
    matches[n] += o.matches[n];
    hyp_ngrams[n] += o.hyp_ngrams[n];
  }
  hyp_len += o.hyp_len;
  ref_len += o.ref_len;
  return *this;
}

BleuStats& BleuStats::operator-=(const BleuStats& o) {
  for (std::size_t n = 0; n < kBleuOrder; ++n) {
    matches[n] -= o.matches[n];
    hyp_ngrams[n] -= o.hyp_ngrams[n];
  }
  hyp_len -= o.hyp_len;
  ref_len -= o.ref_len;
  return *this;
}

BleuStats bleu_stats(std::span<const std::string> hyp, std::span<const Tokens> refs) {
  if (refs.empty()) throw Error(Errc::EmptyReferences, "bleu_stats needs at least one reference");
  BleuStats st;
  st.hyp_len = hyp.size();

  std::uint64_t best_len = refs.front().size();
  auto dist = [&](std::uint64_t len) {
    return len > st.hyp_len ? len - st.hyp_len : st.hyp_len - len;
  };
  for (const auto& r : refs) {
    std::uint64_t len = r.size();
    if (dist(len) < dist(best_len) || (dist(len) == dist(best_len) && len < best_len)) best_len = len;
  }
  st.ref_len = best_len;

  for (std::size_t n = 1; n <= kBleuOrder; ++n) {
    auto hyp_counts = count_ngrams(hyp, n);
    NgramCounts max_ref;
    for (const auto& r : refs) {
      for (auto& [gram, c] : count_ngrams(r, n)) {
        auto& slot = max_ref[gram];
        slot = std::max(slot, c);
      }
    }
    for (const auto& [gram, c] : hyp_counts) {
      st.hyp_ngrams[n - 1] += c;
      auto it = max_ref.find(gram);
      if (it != max_ref.end()) st.matches[n - 1] += std::min(c, it->second);
    }
  }
  return st;
}

double bleu_from_stats(const BleuStats& stats) {
  if (stats.hyp_len == 0) throw Error(Errc::EmptyHypothesis, "BLEU of an empty hypothesis set");
  double log_sum = 0.0;
  std::size_t orders = 0;
  for (std::size_t n = 0; n < kBleuOrder; ++n) {
    if (stats.hyp_ngrams[n] == 0) continue;
    if (stats.matches[n] == 0) return 0.0;
    log_sum += std::log(static_cast<double>(stats.matches[n]) / static_cast<double>(stats.hyp_ngrams[n]));
    ++orders;
  }
  double ratio = static_cast<double>(stats.ref_len) / static_cast<double>(stats.hyp_len);
  double bp = ratio > 1.0 ? std::exp(1.0 - ratio) : 1.0;
  return 100.0 * bp * std::exp(log_sum / static_cast<double>(orders));
}

BleuStats corpus_bleu_stats(std::span<const Tokens> hyps, std::span<const std::vector<Tokens>> refs) {
  if (hyps.size() != refs.size()) {
    throw Error(Errc::SizeMismatch, "corpus BLEU: hypothesis and reference counts differ");
  }
  BleuStats total;
  for (std::size_t i = 0; i < hyps.size(); ++i) total += bleu_stats(hyps[i], refs[i]);
  return total;
}

}  // namespace capkit
