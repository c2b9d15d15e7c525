#pragma once

#include <string>
#include <vector>

#include "capkit/corpus.hpp"
#include "capkit/nbest.hpp"
#include "capkit/random.hpp"

namespace testing_support {

struct ToyMert {
  capkit::NBestSet set;
  capkit::CaptionsByImage refs;
};

// Hypotheses are references with a few random word substitutions, so corpus
// BLEU varies a lot across the 1-best choices. Features are uniform in
// [-1, 1].
inline ToyMert make_toy_mert(std::uint64_t seed, std::size_t sentences = 5, std::size_t hyps = 4,
                             std::size_t features = 2) {
  capkit::Rng rng(seed);
  auto word = [&] { return "w" + std::to_string(capkit::uniform_index(rng, 8)); };
  ToyMert t;
  for (std::size_t f = 0; f < features; ++f) t.set.schema.push_back("f" + std::to_string(f));
  for (std::size_t s = 0; s < sentences; ++s) {
    capkit::ImageId id = 100 + s;
    auto& refs = t.refs[id];
    for (int r = 0; r < 2; ++r) {
      capkit::Tokens ref;
      for (int i = 0; i < 7; ++i) ref.push_back(word());
      refs.push_back(ref);
    }
    capkit::NBestList list{id, {}};
    for (std::size_t h = 0; h < hyps; ++h) {
      capkit::Tokens toks = refs[0];
      std::size_t subs = capkit::uniform_index(rng, 4);
      for (std::size_t k = 0; k < subs; ++k) toks[capkit::uniform_index(rng, toks.size())] = word();
      if (capkit::uniform_unit(rng) < 0.3) toks.pop_back();
      capkit::NBestEntry e{toks, {}};
      for (std::size_t f = 0; f < features; ++f) e.features.push_back(capkit::uniform_real(rng, -1.0, 1.0));
      list.entries.push_back(e);
    }
    t.set.lists.push_back(list);
  }
  return t;
}

}  // namespace testing_support
