#include "capkit/nbest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "capkit/binary_io.hpp"
#include "capkit/errors.hpp"

namespace capkit {
namespace {

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

template <typename Fn>
void for_each_line(std::string_view text, Fn&& fn) {
  std::size_t line_no = 0, start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    start = end + 1;
    ++line_no;
    if (line.empty()) continue;
    fn(line_no, line);
  }
}

std::uint64_t parse_u64(std::string_view s, const std::string& where) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw Error(Errc::MalformedInput, where + ": expected an unsigned integer, got '" + std::string(s) + "'");
  }
  return v;
}

double parse_double(std::string_view s, const std::string& where) {
  std::string tmp(s);
  char* end = nullptr;
  double v = std::strtod(tmp.c_str(), &end);
  if (tmp.empty() || end != tmp.c_str() + tmp.size() || !std::isfinite(v)) {
    throw Error(Errc::MalformedInput, where + ": bad number '" + tmp + "'");
  }
  return v;
}

Tokens split_caption(std::string_view s) {
  Tokens out;
  for (auto t : split(s, ' ')) {
    if (!t.empty()) out.emplace_back(t);
  }
  return out;
}

}  // namespace

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::size_t NBestSet::column(std::string_view name) const {
  auto it = std::find(schema.begin(), schema.end(), name);
  if (it == schema.end()) throw Error(Errc::SchemaMismatch, "no feature column '" + std::string(name) + "'");
  return static_cast<std::size_t>(it - schema.begin());
}

bool NBestSet::has_column(std::string_view name) const {
  return std::find(schema.begin(), schema.end(), name) != schema.end();
}

void NBestSet::add_column(const std::string& name,
                          const std::function<double(const NBestList&, const NBestEntry&)>& fn) {
  if (has_column(name)) throw Error(Errc::SchemaMismatch, "feature column '" + name + "' already present");
  schema.push_back(name);
  for (auto& list : lists) {
    for (auto& e : list.entries) e.features.push_back(fn(list, e));
  }
}

NBestSet NBestSet::project(const std::vector<std::string>& names) const {
  std::vector<std::size_t> cols;
  for (const auto& n : names) cols.push_back(column(n));
  NBestSet out;
  out.schema = names;
  for (const auto& list : lists) {
    NBestList l{list.image_id, {}};
    for (const auto& e : list.entries) {
      NBestEntry ne{e.tokens, {}};
      for (auto c : cols) ne.features.push_back(e.features[c]);
      l.entries.push_back(std::move(ne));
    }
    out.lists.push_back(std::move(l));
  }
  return out;
}

NBestSet parse_nbest(std::string_view tsv) {
  NBestSet set;
  std::map<ImageId, std::vector<std::pair<std::uint64_t, NBestEntry>>> by_image;
  bool have_schema = false;
  for_each_line(tsv, [&](std::size_t line_no, std::string_view line) {
    auto where = "n-best line " + std::to_string(line_no);
    auto fields = split(line, '\t');
    if (fields.size() != 4) throw Error(Errc::MalformedInput, where + ": expected 4 tab-separated fields");
    auto image = parse_u64(fields[0], where);
    auto rank = parse_u64(fields[1], where);
    NBestEntry entry{split_caption(fields[2]), {}};
    std::vector<std::string> names;
    if (!fields[3].empty()) {
      for (auto kv : split(fields[3], ';')) {
        auto eq = kv.find('=');
        if (eq == std::string_view::npos || eq == 0) throw Error(Errc::MalformedInput, where + ": bad feature '" + std::string(kv) + "'");
        names.emplace_back(kv.substr(0, eq));
        entry.features.push_back(parse_double(kv.substr(eq + 1), where));
      }
    }
    if (!have_schema) {
      set.schema = names;
      have_schema = true;
    } else if (names != set.schema) {
      throw Error(Errc::SchemaMismatch, where + ": feature names differ from the first row");
    }
    by_image[image].emplace_back(rank, std::move(entry));
  });
  for (auto& [image, rows] : by_image) {
    std::stable_sort(rows.begin(), rows.end(), [](auto& a, auto& b) { return a.first < b.first; });
    NBestList list{image, {}};
    for (auto& [rank, e] : rows) list.entries.push_back(std::move(e));
    set.lists.push_back(std::move(list));
  }
  return set;
}

NBestSet load_nbest(const std::filesystem::path& path) { return parse_nbest(read_file(path)); }

std::string serialize_nbest(const NBestSet& set) {
  std::string out;
  for (const auto& list : set.lists) {
    for (std::size_t r = 0; r < list.entries.size(); ++r) {
      const auto& e = list.entries[r];
      if (e.features.size() != set.schema.size()) throw Error(Errc::SchemaMismatch, "feature row size differs from schema");
      out += std::to_string(list.image_id) + '\t' + std::to_string(r + 1) + '\t' + join(e.tokens) + '\t';
      for (std::size_t f = 0; f < e.features.size(); ++f) {
        if (f) out += ';';
        out += set.schema[f] + '=' + format_number(e.features[f]);
      }
      out += '\n';
    }
  }
  return out;
}

NBestList to_nbest(ImageId image_id, const DecodeResult& result, const Vocabulary& vocab, bool with_coverage,
                   std::vector<std::string>* schema) {
  if (schema) {
    *schema = {"logprob", "length"};
    if (with_coverage) schema->push_back("covered");
  }
  NBestList list{image_id, {}};
  for (const auto& h : result.hypotheses) {
    NBestEntry e{vocab.decode(h.tokens), {h.log_prob, static_cast<double>(h.tokens.size())}};
    if (with_coverage) e.features.push_back(static_cast<double>(h.covered));
    list.entries.push_back(std::move(e));
  }
  return list;
}

CaptionTable parse_caption_table(std::string_view tsv) {
  CaptionTable table;
  for_each_line(tsv, [&](std::size_t line_no, std::string_view line) {
    auto where = "caption table line " + std::to_string(line_no);
    auto tab = line.find('\t');
    if (tab == std::string_view::npos) throw Error(Errc::MalformedInput, where + ": expected image_id<TAB>caption");
    auto id = parse_u64(line.substr(0, tab), where);
    if (!table.emplace(id, split_caption(line.substr(tab + 1))).second) {
      throw Error(Errc::MalformedInput, where + ": repeated image id " + std::to_string(id));
    }
  });
  return table;
}

CaptionTable load_caption_table(const std::filesystem::path& path) { return parse_caption_table(read_file(path)); }

std::string serialize_caption_table(const CaptionTable& table) {
  std::string out;
  for (const auto& [id, toks] : table) out += std::to_string(id) + '\t' + join(toks) + '\n';
  return out;
}

}  // namespace capkit
