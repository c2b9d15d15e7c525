#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "capkit/errors.hpp"
#include "capkit/metrics.hpp"

namespace capkit {
namespace {

constexpr int kNone = -1;
// Exact search is used while the reference fits a 32-bit mask.
constexpr std::size_t kMaxExactRef = 32;
constexpr std::size_t kMaxExactHyp = 63;

bool ends_with(const std::string& w, std::string_view suffix) {
  return w.size() >= suffix.size() && w.compare(w.size() - suffix.size(), suffix.size(), suffix) == 0;
}

struct Score {
  int matches = 0;
  int chunks = 0;
  bool better_than(const Score& o) const {
    return matches != o.matches ? matches > o.matches : chunks < o.chunks;
  }
};

// One alignment stage over the words left unaligned by earlier stages.
class StageSearch {
 public:
  StageSearch(std::vector<int>& hyp_to_ref, std::uint64_t fixed_mask,
              std::vector<std::vector<int>> candidates)
      : hyp_to_ref_(hyp_to_ref), fixed_mask_(fixed_mask), cand_(std::move(candidates)) {}

  void run() {
    std::uint64_t mask = fixed_mask_;
    int prev = kNone;
    solve(0, mask, prev);
    for (std::size_t i = 0; i < hyp_to_ref_.size(); ++i) {
      int j = hyp_to_ref_[i];
      if (j == kNone) {
        j = choice_.at(key(i, mask, prev));
        if (j != kNone) {
          hyp_to_ref_[i] = j;
          mask |= 1ULL << j;
        }
      }
      prev = j;
    }
  }

 private:
  static std::uint64_t key(std::size_t i, std::uint64_t mask, int prev) {
    return (mask & 0xffffffffULL) | (static_cast<std::uint64_t>(prev + 1) << 32) |
           (static_cast<std::uint64_t>(i) << 40);
  }

  Score solve(std::size_t i, std::uint64_t mask, int prev) {
    if (i == hyp_to_ref_.size()) return {};
    auto k = key(i, mask, prev);
    if (auto it = memo_.find(k); it != memo_.end()) return it->second;

    auto step = [&](int j) {
      Score s = solve(i + 1, j == kNone ? mask : mask | (1ULL << j), j);
      if (j != kNone) {
        s.matches += 1;
        if (prev == kNone || prev + 1 != j) s.chunks += 1;
      }
      return s;
    };

    Score best;
    int best_choice = kNone;
    if (int fixed = hyp_to_ref_[i]; fixed != kNone) {
      Score s = solve(i + 1, mask, fixed);
      s.matches += 1;
      if (prev == kNone || prev + 1 != fixed) s.chunks += 1;
      best = s;
      best_choice = fixed;
    } else {
      best = step(kNone);
      for (int j : cand_[i]) {
        if (mask & (1ULL << j)) continue;
        Score s = step(j);
        if (s.better_than(best)) {
          best = s;
          best_choice = j;
        }
      }
    }
    memo_.emplace(k, best);
    choice_.emplace(k, best_choice);
    return best;
  }

  std::vector<int>& hyp_to_ref_;
  std::uint64_t fixed_mask_;
  std::vector<std::vector<int>> cand_;
  std::unordered_map<std::uint64_t, Score> memo_;
  std::unordered_map<std::uint64_t, int> choice_;
};

// Fallback for very long inputs: left to right, prefer extending a chunk.
void greedy_stage(std::vector<int>& hyp_to_ref, std::vector<bool>& used,
                  const std::vector<std::vector<int>>& cand) {
  int prev = kNone;
  for (std::size_t i = 0; i < hyp_to_ref.size(); ++i) {
    if (hyp_to_ref[i] == kNone) {
      int pick = kNone;
      for (int j : cand[i]) {
        if (used[static_cast<std::size_t>(j)]) continue;
        if (pick == kNone || (prev != kNone && j == prev + 1)) pick = j;
      }
      if (pick != kNone) {
        hyp_to_ref[i] = pick;
        used[static_cast<std::size_t>(pick)] = true;
      }
    }
    prev = hyp_to_ref[i];
  }
}

bool are_synonyms(const MeteorConfig& c, const std::string& a, const std::string& b) {
  auto has = [&](const std::string& x, const std::string& y) {
    auto it = c.synonyms.find(x);
    return it != c.synonyms.end() && it->second.count(y) != 0;
  };
  return has(a, b) || has(b, a);
}

}  // namespace

void MeteorConfig::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(Errc::InvalidArgument, "METEOR alpha must be in (0,1)");
  if (!(beta > 0.0)) throw Error(Errc::InvalidArgument, "METEOR beta must be > 0");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw Error(Errc::InvalidArgument, "METEOR gamma must be in [0,1]");
}

// "runn" -> "run", but "fall" and "kiss" stay.
static std::string undouble(std::string s) {
  const auto n = s.size();
  if (n >= 3 && s[n - 1] == s[n - 2] && std::string_view("aeiouylsz").find(s[n - 1]) == std::string_view::npos) s.pop_back();
  return s;
}

std::string light_stem(const std::string& w) {
  if (w.size() > 5 && ends_with(w, "ing")) return undouble(w.substr(0, w.size() - 3));
  if (w.size() > 4 && ends_with(w, "ies")) return w.substr(0, w.size() - 3) + "y";
  if (w.size() > 4 && (ends_with(w, "ches") || ends_with(w, "shes") || ends_with(w, "sses") ||
                       ends_with(w, "xes"))) {
    return w.substr(0, w.size() - 2);
  }
  if (w.size() > 4 && ends_with(w, "ed")) return undouble(w.substr(0, w.size() - 2));
  if (w.size() > 4 && ends_with(w, "ly")) return w.substr(0, w.size() - 2);
  if (w.size() > 3 && ends_with(w, "s") && !ends_with(w, "ss")) return w.substr(0, w.size() - 1);
  return w;
}

MeteorAlignment meteor_align(std::span<const std::string> hyp, std::span<const std::string> ref,
                             const MeteorConfig& config) {
  std::vector<int> hyp_to_ref(hyp.size(), kNone);
  const bool exact = ref.size() <= kMaxExactRef && hyp.size() <= kMaxExactHyp;

  std::vector<std::string> hyp_stem, ref_stem;
  if (config.stem) {
    for (const auto& w : hyp) hyp_stem.push_back(light_stem(w));
    for (const auto& w : ref) ref_stem.push_back(light_stem(w));
  }

  for (int stage = 0; stage < 3; ++stage) {
    if (stage == 1 && !config.stem) continue;
    if (stage == 2 && config.synonyms.empty()) continue;

    std::vector<bool> used(ref.size(), false);
    std::uint64_t mask = 0;
    for (int j : hyp_to_ref) {
      if (j != kNone) {
        used[static_cast<std::size_t>(j)] = true;
        if (exact) mask |= 1ULL << j;
      }
    }
    std::vector<std::vector<int>> cand(hyp.size());
    bool any = false;
    for (std::size_t i = 0; i < hyp.size(); ++i) {
      if (hyp_to_ref[i] != kNone) continue;
      for (std::size_t j = 0; j < ref.size(); ++j) {
        if (used[j]) continue;
        bool ok = stage == 0   ? hyp[i] == ref[j]
                  : stage == 1 ? hyp_stem[i] == ref_stem[j]
                               : are_synonyms(config, hyp[i], ref[j]);
        if (ok) {
          cand[i].push_back(static_cast<int>(j));
          any = true;
        }
      }
    }
    if (!any) continue;
    if (exact) {
      StageSearch(hyp_to_ref, mask, std::move(cand)).run();
    } else {
      greedy_stage(hyp_to_ref, used, cand);
    }
  }

  MeteorAlignment out;
  int prev = kNone;
  for (int j : hyp_to_ref) {
    if (j != kNone) {
      ++out.matches;
      if (prev == kNone || prev + 1 != j) ++out.chunks;
    }
    prev = j;
  }
  return out;
}

double meteor(std::span<const std::string> hyp, std::span<const Tokens> refs, const MeteorConfig& config) {
  if (refs.empty()) throw Error(Errc::EmptyReferences, "meteor needs at least one reference");
  config.validate();
  double best = 0.0;
  for (const auto& ref : refs) {
    auto a = meteor_align(hyp, ref, config);
    if (a.matches == 0) continue;
    double m = static_cast<double>(a.matches);
    double p = m / static_cast<double>(hyp.size());
    double r = m / static_cast<double>(ref.size());
    double f = p * r / (config.alpha * p + (1.0 - config.alpha) * r);
    double penalty = config.gamma * std::pow(static_cast<double>(a.chunks) / m, config.beta);
    best = std::max(best, 100.0 * f * (1.0 - penalty));
  }
  return best;
}

}  // namespace capkit
