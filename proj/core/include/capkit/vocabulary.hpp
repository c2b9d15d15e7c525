#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "capkit/corpus.hpp"

namespace capkit {

class ByteReader;
class ByteWriter;

using TokenId = std::uint32_t;

inline constexpr TokenId kStartId = 0;
inline constexpr TokenId kEndId = 1;
inline constexpr TokenId kUnkId = 2;

inline constexpr std::string_view kStartToken = "<s>";
inline constexpr std::string_view kEndToken = "</s>";
inline constexpr std::string_view kUnkToken = "<unk>";

// Token <-> id bijection with the three reserved symbols at ids 0, 1, 2.
// Language models predict every id except START, so their output space has
// size() - 1 entries.
class Vocabulary {
 public:
  Vocabulary();

  // Appends `token` if new; returns its id.
  TokenId add(std::string_view token);

  std::size_t size() const noexcept { return token_of_.size(); }
  bool contains(std::string_view token) const;
  TokenId id(std::string_view token) const;  // UNK when absent
  const std::string& token(TokenId id) const;

  std::vector<TokenId> encode(std::span<const std::string> tokens) const;
  Tokens decode(std::span<const TokenId> ids) const;  // drops START/END

  void write(ByteWriter& out) const;
  static Vocabulary read(ByteReader& in);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.token_of_ == b.token_of_;
  }

 private:
  std::unordered_map<std::string, TokenId> id_of_;
  std::vector<std::string> token_of_;
};

// Tokens with corpus frequency >= min_count, ordered by frequency
// descending then lexicographically. Reserved tokens never count.
Vocabulary build_vocabulary(std::span<const CaptionRecord> records, std::size_t min_count);

}  // namespace capkit
