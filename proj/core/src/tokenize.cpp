#include <cctype>

#include "capkit/corpus.hpp"

namespace capkit {
namespace {

bool is_ascii_alnum(char c) {
  auto u = static_cast<unsigned char>(c);
  return u < 0x80 && std::isalnum(u);
}

bool is_ascii_punct(char c) {
  auto u = static_cast<unsigned char>(c);
  return u < 0x80 && std::ispunct(u);
}

bool is_ascii_space(char c) {
  auto u = static_cast<unsigned char>(c);
  return u < 0x80 && std::isspace(u);
}

void flush_word(std::string_view word, Tokens& out) {
  std::string token;
  for (std::size_t i = 0; i < word.size(); ++i) {
    char c = word[i];
    if (is_ascii_punct(c)) {
      bool keep = c == '-' && i > 0 && i + 1 < word.size() && is_ascii_alnum(word[i - 1]) &&
                  is_ascii_alnum(word[i + 1]);
      if (!keep) continue;
    }
    auto u = static_cast<unsigned char>(c);
    token.push_back(u < 0x80 ? static_cast<char>(std::tolower(u)) : c);
  }
  if (!token.empty()) out.push_back(std::move(token));
}

}  // namespace

Tokens tokenize(std::string_view raw_text) {
  Tokens out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= raw_text.size(); ++i) {
    if (i == raw_text.size() || is_ascii_space(raw_text[i])) {
      if (i > start) flush_word(raw_text.substr(start, i - start), out);
      start = i + 1;
    }
  }
  return out;
}

std::string join(std::span<const std::string> tokens, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.append(sep);
    out.append(tokens[i]);
  }
  return out;
}

}  // namespace capkit
