#include "capkit/features.hpp"

#include <cmath>

#include "capkit/binary_io.hpp"
#include "capkit/errors.hpp"

namespace capkit {

FeatureStore::FeatureStore(std::size_t dim) : dim_(dim) {
  if (dim == 0) throw Error(Errc::InvalidArgument, "feature dimension must be positive");
}

void FeatureStore::add(ImageId id, std::span<const float> values) {
  if (values.size() != dim_) {
    throw Error(Errc::DimensionMismatch, "image " + std::to_string(id) + " has " +
                                             std::to_string(values.size()) + " values, expected " +
                                             std::to_string(dim_));
  }
  for (float v : values) {
    if (!std::isfinite(v)) {
      throw Error(Errc::MalformedInput, "non-finite feature value for image " + std::to_string(id));
    }
  }
  if (!row_of_.emplace(id, ids_.size()).second) {
    throw Error(Errc::MalformedInput, "duplicate feature record for image " + std::to_string(id));
  }
  ids_.push_back(id);
  data_.insert(data_.end(), values.begin(), values.end());
}

std::span<const float> FeatureStore::at(ImageId id) const {
  auto it = row_of_.find(id);
  if (it == row_of_.end()) {
    throw Error(Errc::InvalidArgument, "no feature vector for image " + std::to_string(id));
  }
  return row(it->second);
}

FeatureStore FeatureStore::select(std::span<const ImageId> ids) const {
  FeatureStore out(dim_);
  for (auto id : ids) out.add(id, at(id));
  return out;
}

FeatureStore parse_features(std::string_view bytes) {
  ByteReader in(bytes, "FVEC");
  if (in.get_bytes(4) != kFvecMagic) throw Error(Errc::MalformedInput, "FVEC: bad magic");
  auto version = in.get_u32();
  if (version != kFvecVersion) {
    throw Error(Errc::MalformedInput, "FVEC: unsupported version " + std::to_string(version));
  }
  auto dim = in.get_u32();
  auto count = in.get_u64();
  if (dim == 0) throw Error(Errc::MalformedInput, "FVEC: zero dimension");
  const std::uint64_t record = 8 + 4ULL * dim;
  if (in.remaining() / record < count) throw Error(Errc::MalformedInput, "FVEC: truncated payload");

  FeatureStore store(dim);
  std::vector<float> values(dim);
  for (std::uint64_t r = 0; r < count; ++r) {
    auto id = in.get_u64();
    for (auto& v : values) v = in.get_f32();
    store.add(id, values);
  }
  if (!in.at_end()) throw Error(Errc::MalformedInput, "FVEC: trailing bytes after last record");
  return store;
}

std::string serialize_features(const FeatureStore& store) {
  ByteWriter out;
  out.put_bytes(kFvecMagic);
  out.put_u32(kFvecVersion);
  out.put_u32(static_cast<std::uint32_t>(store.dim()));
  out.put_u64(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    out.put_u64(store.ids()[i]);
    for (float v : store.row(i)) out.put_f32(v);
  }
  return out.release();
}

FeatureStore load_features(const std::filesystem::path& path) {
  return parse_features(read_file(path));
}

void save_features(const std::filesystem::path& path, const FeatureStore& store) {
  write_file_atomic(path, serialize_features(store));
}

}  // namespace capkit
