#include "capkit/detections.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <sstream>

#include "capkit/binary_io.hpp"
#include "capkit/errors.hpp"

namespace capkit {

using nlohmann::json;

DetectionSet make_detection_set(ImageId image_id, double threshold,
                                const std::vector<std::pair<std::string, double>>& scored) {
  DetectionSet set{image_id, threshold, {}};
  for (const auto& [token, score] : scored) {
    if (!(score >= 0.0 && score <= 1.0)) {
      throw Error(Errc::MalformedInput, "detection score for '" + token + "' outside [0,1]");
    }
    if (score < threshold) continue;
    auto [it, inserted] = set.words.emplace(token, score);
    if (!inserted) it->second = std::max(it->second, score);
  }
  return set;
}

std::map<ImageId, DetectionSet> parse_detections(std::string_view jsonl, double threshold) {
  std::map<ImageId, DetectionSet> out;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < jsonl.size()) {
    auto end = jsonl.find('\n', start);
    if (end == std::string_view::npos) end = jsonl.size();
    auto line = jsonl.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;

    auto where = "detections line " + std::to_string(line_no);
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw Error(Errc::MalformedInput, where + ": " + e.what());
    }
    if (!obj.is_object() || !obj.contains("image_id") || !obj["image_id"].is_number_unsigned() ||
        !obj.contains("words") || !obj["words"].is_array()) {
      throw Error(Errc::MalformedInput, where + ": expected image_id and words");
    }
    std::vector<std::pair<std::string, double>> scored;
    for (const auto& w : obj["words"]) {
      if (!w.is_object() || !w.contains("token") || !w["token"].is_string() ||
          !w.contains("score") || !w["score"].is_number()) {
        throw Error(Errc::MalformedInput, where + ": bad word entry");
      }
      auto toks = tokenize(w["token"].get<std::string>());
      if (toks.size() != 1) {
        throw Error(Errc::MalformedInput, where + ": detection token must be a single word");
      }
      scored.emplace_back(std::move(toks.front()), w["score"].get<double>());
    }
    auto id = obj["image_id"].get<ImageId>();
    if (out.count(id)) throw Error(Errc::MalformedInput, where + ": repeated image_id " + std::to_string(id));
    out.emplace(id, make_detection_set(id, threshold, scored));
  }
  return out;
}

std::map<ImageId, DetectionSet> load_detections(const std::filesystem::path& path, double threshold) {
  return parse_detections(read_file(path), threshold);
}

std::string serialize_detection_line(ImageId image_id,
                                     const std::vector<std::pair<std::string, double>>& scored) {
  json words = json::array();
  for (const auto& [t, s] : scored) words.push_back({{"token", t}, {"score", s}});
  return json{{"image_id", image_id}, {"words", std::move(words)}}.dump() + "\n";
}

CoverageSet resolve_coverage(const DetectionSet& detections, const Vocabulary& vocab) {
  CoverageSet out;
  for (const auto& [token, score] : detections.words) {
    if (vocab.contains(token)) {
      auto id = vocab.id(token);
      if (id > kUnkId) out.push_back(id);
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

bool coverage_contains(const CoverageSet& set, TokenId id) {
  return std::binary_search(set.begin(), set.end(), id);
}

CoverageSet coverage_without(const CoverageSet& set, TokenId id) {
  CoverageSet out;
  out.reserve(set.size());
  for (auto v : set) {
    if (v != id) out.push_back(v);
  }
  return out;
}

}  // namespace capkit
