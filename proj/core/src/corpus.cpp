#include <algorithm>
#include <nlohmann/json.hpp>
#include <set>
#include <unordered_set>

#include "capkit/binary_io.hpp"
#include "capkit/corpus.hpp"
#include "capkit/errors.hpp"
#include "capkit/random.hpp"

namespace capkit {

using nlohmann::json;

std::vector<CaptionRecord> parse_captions(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(Errc::MalformedInput, std::string("caption JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("annotations") || !doc["annotations"].is_array()) {
    throw Error(Errc::MalformedInput, "caption JSON: missing \"annotations\" array");
  }

  std::vector<CaptionRecord> records;
  std::unordered_set<std::uint64_t> seen;
  const auto& anns = doc["annotations"];
  records.reserve(anns.size());
  for (std::size_t i = 0; i < anns.size(); ++i) {
    const auto& a = anns[i];
    auto where = "annotation " + std::to_string(i);
    if (!a.is_object()) throw Error(Errc::MalformedInput, where + " is not an object");
    for (const char* key : {"id", "image_id"}) {
      if (!a.contains(key) || !a[key].is_number_unsigned()) {
        throw Error(Errc::MalformedInput, where + ": missing or invalid \"" + key + "\"");
      }
    }
    if (!a.contains("caption") || !a["caption"].is_string()) {
      throw Error(Errc::MalformedInput, where + ": missing or invalid \"caption\"");
    }
    CaptionRecord rec;
    rec.annotation_id = a["id"].get<std::uint64_t>();
    rec.image_id = a["image_id"].get<std::uint64_t>();
    rec.raw_text = a["caption"].get<std::string>();
    rec.tokens = tokenize(rec.raw_text);
    if (!seen.insert(rec.annotation_id).second) {
      throw Error(Errc::DuplicateAnnotationId, "annotation id " + std::to_string(rec.annotation_id));
    }
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<CaptionRecord> load_captions(const std::filesystem::path& path) {
  return parse_captions(read_file(path));
}

std::string serialize_captions(std::span<const CaptionRecord> records) {
  json anns = json::array();
  for (const auto& r : records) {
    anns.push_back({{"id", r.annotation_id}, {"image_id", r.image_id}, {"caption", r.raw_text}});
  }
  return json{{"annotations", std::move(anns)}}.dump() + "\n";
}

CaptionsByImage group_by_image(std::span<const CaptionRecord> records) {
  CaptionsByImage out;
  for (const auto& r : records) out[r.image_id].push_back(r.tokens);
  return out;
}

DatasetSplit split_dataset(std::span<const ImageId> ids, SplitSizes sizes, std::uint64_t seed) {
  std::vector<ImageId> order(ids.begin(), ids.end());
  std::sort(order.begin(), order.end());
  order.erase(std::unique(order.begin(), order.end()), order.end());
  if (sizes.train + sizes.val + sizes.testval != order.size()) {
    throw Error(Errc::SizeMismatch, "split sizes sum to " +
                                        std::to_string(sizes.train + sizes.val + sizes.testval) +
                                        " but there are " + std::to_string(order.size()) + " ids");
  }
  Rng rng(seed);
  shuffle_in_place(std::span<ImageId>(order), rng);

  DatasetSplit split;
  auto first = order.begin();
  auto take = [&](std::size_t n) {
    std::vector<ImageId> block(first, first + static_cast<std::ptrdiff_t>(n));
    first += static_cast<std::ptrdiff_t>(n);
    std::sort(block.begin(), block.end());
    return block;
  };
  split.train = take(sizes.train);
  split.val = take(sizes.val);
  split.testval = take(sizes.testval);
  return split;
}

}  // namespace capkit
