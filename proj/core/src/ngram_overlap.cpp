#include <algorithm>
#include <map>
#include <string>
#include <unordered_map>

#include "capkit/errors.hpp"
#include "capkit/knn.hpp"

namespace capkit {
namespace {

// Size of the multiset intersection of two sorted id lists.
std::size_t clipped_matches(const std::vector<std::uint32_t>& a, const std::vector<std::uint32_t>& b) {
  std::size_t i = 0, j = 0, m = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] < b[j]) {
      ++i;
    } else if (b[j] < a[i]) {
      ++j;
    } else {
      ++m;
      ++i;
      ++j;
    }
  }
  return m;
}

}  // namespace

OverlapTable::OverlapTable(std::span<const Tokens> captions, std::size_t max_n) {
  if (max_n == 0) throw Error(Errc::InvalidArgument, "n-gram order must be >= 1");
  std::unordered_map<std::string, std::uint32_t> word_ids;
  std::vector<std::vector<std::uint32_t>> encoded;
  encoded.reserve(captions.size());
  for (const auto& c : captions) {
    auto& e = encoded.emplace_back();
    for (const auto& w : c) {
      e.push_back(word_ids.try_emplace(w, static_cast<std::uint32_t>(word_ids.size())).first->second);
    }
  }

  profiles_.assign(captions.size(), std::vector<std::vector<std::uint32_t>>(max_n));
  for (std::size_t n = 1; n <= max_n; ++n) {
    std::map<std::vector<std::uint32_t>, std::uint32_t> gram_ids;
    for (std::size_t c = 0; c < encoded.size(); ++c) {
      const auto& e = encoded[c];
      auto& prof = profiles_[c][n - 1];
      for (std::size_t s = 0; s + n <= e.size(); ++s) {
        std::vector<std::uint32_t> gram(e.begin() + static_cast<std::ptrdiff_t>(s),
                                        e.begin() + static_cast<std::ptrdiff_t>(s + n));
        auto next = static_cast<std::uint32_t>(gram_ids.size());
        prof.push_back(gram_ids.try_emplace(std::move(gram), next).first->second);
      }
      std::sort(prof.begin(), prof.end());
    }
  }
}

double OverlapTable::fscore(std::size_t i, std::size_t j) const {
  const auto& a = profiles_.at(i);
  const auto& b = profiles_.at(j);
  double sum = 0.0;
  std::size_t orders = 0;
  for (std::size_t n = 0; n < a.size(); ++n) {
    if (a[n].empty() && b[n].empty()) continue;
    ++orders;
    auto m = clipped_matches(a[n], b[n]);
    if (m == 0) continue;
    double p = static_cast<double>(m) / static_cast<double>(a[n].size());
    double r = static_cast<double>(m) / static_cast<double>(b[n].size());
    sum += 2.0 * p * r / (p + r);
  }
  return orders == 0 ? 0.0 : sum / static_cast<double>(orders);
}

double ngram_overlap_fscore(std::span<const std::string> a, std::span<const std::string> b,
                            std::size_t max_n) {
  std::vector<Tokens> pair{Tokens(a.begin(), a.end()), Tokens(b.begin(), b.end())};
  return OverlapTable(pair, max_n).fscore(0, 1);
}

}  // namespace capkit
