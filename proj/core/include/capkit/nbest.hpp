#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "capkit/corpus.hpp"
#include "capkit/decode.hpp"
#include "capkit/vocabulary.hpp"

namespace capkit {

struct NBestEntry {
  Tokens tokens;
  std::vector<double> features;  // aligned with NBestSet::schema
};

struct NBestList {
  ImageId image_id = 0;
  std::vector<NBestEntry> entries;  // rank order, best first
};

// N-best lists for many images sharing one feature schema.
struct NBestSet {
  std::vector<std::string> schema;
  std::vector<NBestList> lists;  // ascending image id

  std::size_t column(std::string_view name) const;  // throws SchemaMismatch
  bool has_column(std::string_view name) const;

  // Appends a column computed for every entry.
  void add_column(const std::string& name,
                  const std::function<double(const NBestList&, const NBestEntry&)>& fn);

  // Keeps only the named columns, in the given order.
  NBestSet project(const std::vector<std::string>& names) const;
};

// Rows "image_id \t rank \t caption \t name=value;name=value...". Ranks are
// 1-based. Throws MalformedInput or SchemaMismatch.
NBestSet parse_nbest(std::string_view tsv);
NBestSet load_nbest(const std::filesystem::path& path);
std::string serialize_nbest(const NBestSet& set);

// Decoder output to interchange form. Columns: logprob, length and, for
// coverage decodes, covered.
NBestList to_nbest(ImageId image_id, const DecodeResult& result, const Vocabulary& vocab, bool with_coverage,
                   std::vector<std::string>* schema = nullptr);

// "image_id \t caption" files used for system outputs.
using CaptionTable = std::map<ImageId, Tokens>;
CaptionTable parse_caption_table(std::string_view tsv);
CaptionTable load_caption_table(const std::filesystem::path& path);
std::string serialize_caption_table(const CaptionTable& table);

std::string format_number(double v);

}  // namespace capkit
