#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "capkit/corpus.hpp"
#include "capkit/vocabulary.hpp"

namespace capkit {

// Default detector threshold used throughout the toolkit.
inline constexpr double kDefaultAlpha = 0.5;

// Detected caption words for one image, keeping only scores >= threshold.
struct DetectionSet {
  ImageId image_id = 0;
  double threshold = kDefaultAlpha;
  std::map<std::string, double> words;  // token -> score in [0, 1]
};

// Retains words with score >= threshold. A word listed twice keeps its
// highest score.
DetectionSet make_detection_set(ImageId image_id, double threshold,
                                const std::vector<std::pair<std::string, double>>& scored);

// One JSON object per line: {"image_id":u64,"words":[{"token":s,"score":f},...]}
std::map<ImageId, DetectionSet> parse_detections(std::string_view jsonl, double threshold);
std::map<ImageId, DetectionSet> load_detections(const std::filesystem::path& path, double threshold);
std::string serialize_detection_line(ImageId image_id,
                                     const std::vector<std::pair<std::string, double>>& scored);

// Sorted, duplicate-free token ids; the set of detected words a hypothesis
// has not mentioned yet.
using CoverageSet = std::vector<TokenId>;

// Detection words that exist in `vocab`. Out-of-vocabulary detections can
// never be emitted, so they are dropped here.
CoverageSet resolve_coverage(const DetectionSet& detections, const Vocabulary& vocab);

bool coverage_contains(const CoverageSet& set, TokenId id);
CoverageSet coverage_without(const CoverageSet& set, TokenId id);

}  // namespace capkit
