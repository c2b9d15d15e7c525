#include "capkit/binary_io.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "capkit/errors.hpp"

namespace capkit {

void ByteWriter::put_bytes(std::string_view bytes) { buf_.append(bytes); }

void ByteWriter::put_u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void ByteWriter::put_u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void ByteWriter::put_f32(float v) { put_u32(std::bit_cast<std::uint32_t>(v)); }

void ByteWriter::put_f64(double v) { put_u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::put_string(std::string_view s) {
  put_u32(static_cast<std::uint32_t>(s.size()));
  put_bytes(s);
}

void ByteReader::need(std::size_t n) const {
  if (remaining() < n) {
    throw Error(Errc::MalformedInput, what_ + ": truncated at byte " + std::to_string(pos_));
  }
}

std::string_view ByteReader::get_bytes(std::size_t n) {
  need(n);
  auto out = data_.substr(pos_, n);
  pos_ += n;
  return out;
}

std::uint32_t ByteReader::get_u32() {
  auto b = get_bytes(4);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[i]);
  return v;
}

std::uint64_t ByteReader::get_u64() {
  auto b = get_bytes(8);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[i]);
  return v;
}

float ByteReader::get_f32() { return std::bit_cast<float>(get_u32()); }

double ByteReader::get_f64() { return std::bit_cast<double>(get_u64()); }

std::string ByteReader::get_string() {
  auto n = get_u32();
  return std::string(get_bytes(n));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::Io, "cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error(Errc::Io, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(Errc::Io, "cannot rename " + tmp.string() + " to " + path.string());
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace capkit
