#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "capkit/corpus.hpp"

namespace capkit {

// Id-addressable dense float vectors of one fixed dimension. Insertion
// order is preserved so that serialization round-trips byte for byte.
class FeatureStore {
 public:
  explicit FeatureStore(std::size_t dim);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return ids_.size(); }
  bool empty() const noexcept { return ids_.empty(); }

  // Throws DimensionMismatch on wrong length, MalformedInput on a
  // non-finite component or a repeated id.
  void add(ImageId id, std::span<const float> values);

  bool contains(ImageId id) const { return row_of_.count(id) != 0; }
  std::span<const float> at(ImageId id) const;  // throws InvalidArgument when absent
  std::span<const float> row(std::size_t i) const {
    return {data_.data() + i * dim_, dim_};
  }
  const std::vector<ImageId>& ids() const noexcept { return ids_; }

  // Subset in the order of `ids`; every id must be present.
  FeatureStore select(std::span<const ImageId> ids) const;

 private:
  std::size_t dim_;
  std::vector<ImageId> ids_;
  std::vector<float> data_;
  std::unordered_map<ImageId, std::size_t> row_of_;
};

// FVEC: "FVEC", u32 version (1), u32 dim, u64 count, then count records of
// u64 image_id followed by dim little-endian f32 values.
inline constexpr std::string_view kFvecMagic = "FVEC";
inline constexpr std::uint32_t kFvecVersion = 1;

FeatureStore parse_features(std::string_view bytes);
std::string serialize_features(const FeatureStore& store);
FeatureStore load_features(const std::filesystem::path& path);
void save_features(const std::filesystem::path& path, const FeatureStore& store);

}  // namespace capkit
