#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace capkit {

// Little-endian encoder for the toolkit's binary formats.
class ByteWriter {
 public:
  void put_bytes(std::string_view bytes);
  void put_u32(std::uint32_t v);
  void put_u64(std::uint64_t v);
  void put_f32(float v);
  void put_f64(double v);
  void put_string(std::string_view s);  // u32 length + bytes

  const std::string& bytes() const noexcept { return buf_; }
  std::string release() noexcept { return std::move(buf_); }

 private:
  std::string buf_;
};

// Little-endian decoder. Every getter throws Error(MalformedInput) on a
// short read, naming `what` so callers get a useful message.
class ByteReader {
 public:
  explicit ByteReader(std::string_view data, std::string what = "input")
      : data_(data), what_(std::move(what)) {}

  std::string_view get_bytes(std::size_t n);
  std::uint32_t get_u32();
  std::uint64_t get_u64();
  float get_f32();
  double get_f64();
  std::string get_string();

  std::size_t remaining() const noexcept { return data_.size() - pos_; }
  bool at_end() const noexcept { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const;

  std::string_view data_;
  std::size_t pos_ = 0;
  std::string what_;
};

std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

// 64-bit FNV-1a. Stable across platforms; used for feature ids and checksums.
constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

constexpr std::uint64_t fnv1a(std::string_view s, std::uint64_t h = kFnvOffset) noexcept {
  for (unsigned char c : s) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

std::string hex64(std::uint64_t v);

}  // namespace capkit
