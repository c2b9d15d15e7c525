#include "capkit/vocabulary.hpp"

#include <algorithm>
#include <map>

#include "capkit/binary_io.hpp"
#include "capkit/errors.hpp"

namespace capkit {

Vocabulary::Vocabulary() {
  add(kStartToken);
  add(kEndToken);
  add(kUnkToken);
}

TokenId Vocabulary::add(std::string_view token) {
  auto [it, inserted] = id_of_.try_emplace(std::string(token), static_cast<TokenId>(token_of_.size()));
  if (inserted) token_of_.emplace_back(token);
  return it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return id_of_.find(std::string(token)) != id_of_.end();
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = id_of_.find(std::string(token));
  return it == id_of_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id >= token_of_.size()) {
    throw Error(Errc::UnknownToken, "token id " + std::to_string(id) + " out of range");
  }
  return token_of_[id];
}

std::vector<TokenId> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<TokenId> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

Tokens Vocabulary::decode(std::span<const TokenId> ids) const {
  Tokens out;
  for (auto i : ids) {
    if (i == kStartId || i == kEndId) continue;
    out.push_back(token(i));
  }
  return out;
}

void Vocabulary::write(ByteWriter& out) const {
  out.put_u32(static_cast<std::uint32_t>(token_of_.size()));
  for (const auto& t : token_of_) out.put_string(t);
}

Vocabulary Vocabulary::read(ByteReader& in) {
  auto n = in.get_u32();
  if (n < 3) throw Error(Errc::MalformedInput, "vocabulary lacks reserved tokens");
  Vocabulary v;
  for (std::uint32_t i = 0; i < n; ++i) {
    auto t = in.get_string();
    if (i < 3) {
      if (t != v.token_of_[i]) throw Error(Errc::MalformedInput, "vocabulary reserved token mismatch");
      continue;
    }
    if (v.add(t) != i) throw Error(Errc::MalformedInput, "duplicate vocabulary entry '" + t + "'");
  }
  return v;
}

Vocabulary build_vocabulary(std::span<const CaptionRecord> records, std::size_t min_count) {
  if (min_count < 1) throw Error(Errc::InvalidArgument, "min_count must be >= 1");
  std::map<std::string, std::size_t> counts;
  for (const auto& r : records) {
    for (const auto& t : r.tokens) ++counts[t];
  }
  const Vocabulary reserved;
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [tok, n] : counts) {
    if (n >= min_count && !reserved.contains(tok)) kept.emplace_back(tok, n);
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  for (const auto& [tok, n] : kept) v.add(tok);
  return v;
}

}  // namespace capkit
