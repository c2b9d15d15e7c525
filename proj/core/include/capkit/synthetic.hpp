#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "capkit/corpus.hpp"
#include "capkit/features.hpp"

namespace capkit {

// Clustered toy corpus: each cluster is a scene (subject, action, place,
// object) whose captions come from a handful of templates; a fraction of
// captions swap in another scene's subject so that some pool members are
// off-topic. Features are noisy copies of orthogonal cluster centers.
struct SyntheticConfig {
  std::size_t images = 200;
  std::size_t dim = 8;
  std::size_t clusters = 8;  // at most min(dim, 8)
  std::size_t captions_per_image = 5;
  double feature_noise = 0.6;
  double off_topic_rate = 0.25;
  std::uint64_t seed = 7;
};

struct SyntheticCorpus {
  std::vector<CaptionRecord> captions;
  FeatureStore features{1};
  // Raw detector output per image, before thresholding.
  std::map<ImageId, std::vector<std::pair<std::string, double>>> detections;
  std::map<ImageId, std::size_t> cluster_of;
};

SyntheticCorpus make_synthetic_corpus(const SyntheticConfig& config = {});

// Writes captions.json, features.fvec and detections.jsonl into `dir`.
void write_synthetic_corpus(const std::filesystem::path& dir, const SyntheticCorpus& corpus);

}  // namespace capkit
