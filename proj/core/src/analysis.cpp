#include "capkit/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "capkit/errors.hpp"
#include "capkit/knn.hpp"
#include "capkit/parallel.hpp"

namespace capkit {
namespace {

double safe_bleu(const BleuStats& s) { return s.hyp_len == 0 ? 0.0 : bleu_from_stats(s); }

}  // namespace

RepetitionReport repetition_stats(const std::map<ImageId, Tokens>& generated,
                                  const std::set<std::string>& training_captions) {
  RepetitionReport r;
  std::set<std::string> distinct;
  for (const auto& [id, caption] : generated) {
    std::string s = join(caption);
    ++r.total;
    if (training_captions.count(s)) ++r.seen;
    distinct.insert(std::move(s));
  }
  r.unique = distinct.size();
  if (r.total > 0) {
    r.unique_fraction = static_cast<double>(r.unique) / static_cast<double>(r.total);
    r.seen_in_training_fraction = static_cast<double>(r.seen) / static_cast<double>(r.total);
  }
  return r;
}

std::set<std::string> caption_strings(std::span<const CaptionRecord> records) {
  std::set<std::string> out;
  for (const auto& r : records) out.insert(join(r.tokens));
  return out;
}

std::string_view to_string(OverlapBin bin) {
  switch (bin) {
    case OverlapBin::Least: return "least";
    case OverlapBin::Middle: return "middle";
    case OverlapBin::Most: return "most";
  }
  return "?";
}

std::map<ImageId, OverlapBin> OverlapBinAssignment::bin_of() const {
  std::map<ImageId, OverlapBin> out;
  for (const auto& e : entries) out[e.image_id] = e.bin;
  return out;
}

OverlapBinAssignment overlap_bins(const FeatureStore& test, const FeatureStore& train, std::size_t top_k,
                                  double tail_fraction) {
  if (top_k == 0) throw Error(Errc::InvalidArgument, "top_k must be positive");
  if (!(tail_fraction >= 0.0 && tail_fraction <= 0.5)) {
    throw Error(Errc::InvalidArgument, "tail fraction must lie in [0, 0.5]");
  }
  if (test.dim() != train.dim()) {
    throw Error(Errc::DimensionMismatch, "test features have dim " + std::to_string(test.dim()) +
                                             ", training features " + std::to_string(train.dim()));
  }
  if (train.empty()) throw Error(Errc::EmptyIndex, "no training features");
  FeatureIndex index(train);
  const std::size_t k = std::min(top_k, index.size());

  OverlapBinAssignment out;
  out.entries.resize(test.size());
  parallel_for(test.size(), [&](std::size_t i) {
    auto nn = index.nearest(test.row(i), k);
    double sum = 0.0;
    for (const auto& n : nn) sum += n.similarity;
    out.entries[i] = {test.ids()[i], sum / static_cast<double>(nn.size()), OverlapBin::Middle};
  });
  std::sort(out.entries.begin(), out.entries.end(), [](const OverlapEntry& a, const OverlapEntry& b) {
    if (a.mean_similarity != b.mean_similarity) return a.mean_similarity < b.mean_similarity;
    return a.image_id < b.image_id;
  });
  const std::size_t n = out.entries.size();
  const auto tail = static_cast<std::size_t>(std::floor(tail_fraction * static_cast<double>(n)));
  for (std::size_t i = 0; i < tail; ++i) {
    out.entries[i].bin = OverlapBin::Least;
    out.entries[n - 1 - i].bin = OverlapBin::Most;
  }
  return out;
}

BinnedBleu binned_bleu(const std::map<ImageId, Tokens>& generated, const CaptionsByImage& refs,
                       const std::map<ImageId, OverlapBin>& bins) {
  BinnedBleu out;
  for (const auto& [id, caption] : generated) {
    auto r = refs.find(id);
    if (r == refs.end() || r->second.empty()) {
      throw Error(Errc::MissingReferences, "no references for image " + std::to_string(id));
    }
    auto b = bins.find(id);
    if (b == bins.end()) throw Error(Errc::InvalidArgument, "image " + std::to_string(id) + " has no overlap bin");
    auto s = bleu_stats(caption, r->second);
    auto slot = static_cast<std::size_t>(b->second);
    out.stats[slot] += s;
    ++out.count[slot];
  }
  for (std::size_t i = 0; i < 3; ++i) {
    out.bleu[i] = safe_bleu(out.stats[i]);
    out.total += out.stats[i];
  }
  out.total_bleu = safe_bleu(out.total);
  return out;
}

}  // namespace capkit
