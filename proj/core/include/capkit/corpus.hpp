#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace capkit {

using ImageId = std::uint64_t;
using Tokens = std::vector<std::string>;

// Lowercases ASCII letters, strips ASCII punctuation (a hyphen survives only
// between two alphanumerics of the same word) and splits on whitespace.
// Non-ASCII bytes pass through untouched.
Tokens tokenize(std::string_view raw_text);

std::string join(std::span<const std::string> tokens, std::string_view sep = " ");

struct CaptionRecord {
  std::uint64_t annotation_id = 0;
  ImageId image_id = 0;
  std::string raw_text;
  Tokens tokens;
};

// {"annotations":[{"id":..,"image_id":..,"caption":".."},...]}
std::vector<CaptionRecord> parse_captions(std::string_view json_text);
std::vector<CaptionRecord> load_captions(const std::filesystem::path& path);
std::string serialize_captions(std::span<const CaptionRecord> records);

// Reference captions per image, in file order.
using CaptionsByImage = std::map<ImageId, std::vector<Tokens>>;
CaptionsByImage group_by_image(std::span<const CaptionRecord> records);

struct DatasetSplit {
  std::vector<ImageId> train;
  std::vector<ImageId> val;
  std::vector<ImageId> testval;
};

struct SplitSizes {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t testval = 0;
};

// Seeded shuffle of the sorted, de-duplicated id list, cut into three
// consecutive blocks. Each block is returned in ascending id order.
DatasetSplit split_dataset(std::span<const ImageId> ids, SplitSizes sizes, std::uint64_t seed);

}  // namespace capkit
