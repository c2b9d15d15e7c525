#include "capkit/maxent.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "capkit/binary_io.hpp"
#include "capkit/errors.hpp"
#include "capkit/random.hpp"

namespace capkit {
namespace {

constexpr std::string_view kMelmMagic = "MELM";
constexpr std::uint32_t kMelmVersion = 1;
constexpr char kSep = '\x1f';

std::uint64_t extend(std::uint64_t h, std::string_view arg) {
  h = fnv1a(std::string_view(&kSep, 1), h);
  return fnv1a(arg, h);
}

// Hash states shared by every candidate of one (history, remaining) pair.
struct Prefixes {
  std::uint64_t uni, bi, tri;
  bool has_tri;
};

Prefixes make_prefixes(std::string_view prev2, std::string_view prev1, bool has_history) {
  Prefixes p{};
  p.uni = fnv1a("uni");
  p.bi = extend(fnv1a("bi"), prev1);
  p.has_tri = has_history;
  p.tri = extend(extend(fnv1a("tri"), prev2), prev1);
  return p;
}

template <typename Emit>
void for_each_feature(const Prefixes& p, std::string_view candidate, bool is_end, bool in_remaining,
                      bool remaining_empty, Emit&& emit) {
  emit(extend(p.uni, candidate));
  emit(extend(p.bi, candidate));
  if (p.has_tri) emit(extend(p.tri, candidate));
  if (is_end) {
    emit(fnv1a(remaining_empty ? "end_done" : "end_open"));
  } else if (in_remaining) {
    emit(fnv1a("cov_hit"));
  } else if (!remaining_empty) {
    emit(fnv1a("cov_miss"));
  }
}

void log_softmax_in_place(std::vector<double>& v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  double sum = 0.0;
  for (double x : v) sum += std::exp(x - mx);
  double lse = mx + std::log(sum);
  for (double& x : v) x -= lse;
}

}  // namespace

FeatureId feature_id(std::string_view templ, std::initializer_list<std::string_view> args) {
  auto h = fnv1a(templ);
  for (auto a : args) h = extend(h, a);
  return h;
}

std::vector<FeatureId> extract_features(std::span<const std::string> history, std::string_view candidate,
                                        const std::set<std::string>& remaining) {
  std::string_view prev1 = history.empty() ? kStartToken : std::string_view(history.back());
  std::string_view prev2 = history.size() < 2 ? kStartToken : std::string_view(history[history.size() - 2]);
  auto p = make_prefixes(prev2, prev1, !history.empty());
  bool is_end = candidate == kEndToken;
  bool in_remaining = !is_end && remaining.count(std::string(candidate)) != 0;
  std::vector<FeatureId> out;
  for_each_feature(p, candidate, is_end, in_remaining, remaining.empty(),
                   [&](FeatureId id) { out.push_back(id); });
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

MaxEntLM::MaxEntLM(Vocabulary vocab) : vocab_(std::move(vocab)) {}

void MaxEntLM::register_features(std::span<const FeatureId> ids) {
  std::vector<std::pair<FeatureId, double>> merged;
  merged.reserve(ids_.size() + ids.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) merged.emplace_back(ids_[i], weights_[i]);
  for (auto id : ids) {
    if (!index_.count(id)) merged.emplace_back(id, 0.0);
  }
  std::sort(merged.begin(), merged.end(), [](auto& a, auto& b) { return a.first < b.first; });
  merged.erase(std::unique(merged.begin(), merged.end(), [](auto& a, auto& b) { return a.first == b.first; }),
               merged.end());
  ids_.clear();
  weights_.clear();
  index_.clear();
  for (auto& [id, w] : merged) {
    index_.emplace(id, ids_.size());
    ids_.push_back(id);
    weights_.push_back(w);
  }
}

void MaxEntLM::active_features(std::span<const TokenId> history, TokenId candidate,
                               const CoverageSet& remaining, std::vector<std::size_t>& out) const {
  out.clear();
  std::string_view prev1 = history.empty() ? kStartToken : std::string_view(vocab_.token(history.back()));
  std::string_view prev2 =
      history.size() < 2 ? kStartToken : std::string_view(vocab_.token(history[history.size() - 2]));
  auto p = make_prefixes(prev2, prev1, !history.empty());
  bool is_end = candidate == kEndId;
  for_each_feature(p, vocab_.token(candidate), is_end, !is_end && coverage_contains(remaining, candidate),
                   remaining.empty(), [&](FeatureId id) {
                     if (auto it = index_.find(id); it != index_.end()) out.push_back(it->second);
                   });
}

std::vector<double> MaxEntLM::scores(std::span<const TokenId> history, const CoverageSet& remaining) const {
  return scores_from(weights_, 1.0, history, remaining);
}

std::vector<double> MaxEntLM::scores_from(std::span<const double> w, double scale,
                                          std::span<const TokenId> history,
                                          const CoverageSet& remaining) const {
  std::vector<double> s(vocab_.size(), 0.0);
  s[kStartId] = -std::numeric_limits<double>::infinity();
  std::vector<std::size_t> active;
  for (TokenId c = kEndId; c < vocab_.size(); ++c) {
    active_features(history, c, remaining, active);
    double sum = 0.0;
    for (auto i : active) sum += w[i];
    s[c] = scale * sum;
  }
  return s;
}

std::vector<double> MaxEntLM::next_word_distribution(std::span<const TokenId> history,
                                                     const CoverageSet& remaining) const {
  auto v = scores(history, remaining);
  log_softmax_in_place(v);
  for (double& x : v) x = std::exp(x);
  return v;
}

double MaxEntLM::event_loss(std::span<const TokenId> history, TokenId target, const CoverageSet& remaining,
                            std::vector<double>* grad) const {
  if (target == kStartId || target >= vocab_.size()) {
    throw Error(Errc::UnknownToken, "invalid target id " + std::to_string(target));
  }
  auto logp = scores(history, remaining);
  log_softmax_in_place(logp);
  if (grad) {
    grad->assign(weights_.size(), 0.0);
    std::vector<std::size_t> active;
    for (TokenId c = kEndId; c < vocab_.size(); ++c) {
      double coef = std::exp(logp[c]) - (c == target ? 1.0 : 0.0);
      if (coef == 0.0) continue;
      active_features(history, c, remaining, active);
      for (auto i : active) (*grad)[i] += coef;
    }
  }
  return -logp[target];
}

void MaxEntScorer::step(const ScorerState&, std::span<const TokenId> prefix, const CoverageSet& remaining,
                        std::vector<double>& log_probs, ScorerState& next) const {
  log_probs = lm_.scores(prefix, remaining);
  log_softmax_in_place(log_probs);
  next.clear();
}

namespace {

struct Event {
  std::size_t example;
  std::size_t position;  // predicts tokens[position], or END at tokens.size()
};

}  // namespace

MaxEntLM train_maxent(Vocabulary vocab, std::span<const MaxEntExample> corpus, const MaxEntConfig& config,
                      std::vector<double>* epoch_losses) {
  if (!(config.learning_rate >= 0.0) || !(config.l2 >= 0.0) || config.learning_rate * config.l2 >= 1.0) {
    throw Error(Errc::InvalidArgument, "MaxEnt training needs lr >= 0, l2 >= 0 and lr * l2 < 1");
  }
  MaxEntLM lm(std::move(vocab));
  lm.l2_ = config.l2;

  std::vector<Event> events;
  std::vector<CoverageSet> remaining;
  std::vector<FeatureId> gold;
  for (std::size_t e = 0; e < corpus.size(); ++e) {
    const auto& ex = corpus[e];
    for (auto t : ex.tokens) {
      if (t == kStartId || t == kEndId || t >= lm.vocab().size()) {
        throw Error(Errc::UnknownToken, "training token id " + std::to_string(t) + " out of range");
      }
    }
    CoverageSet r = ex.detections;
    for (std::size_t pos = 0; pos <= ex.tokens.size(); ++pos) {
      events.push_back({e, pos});
      remaining.push_back(r);
      Tokens hist = lm.vocab().decode(std::span(ex.tokens).first(pos));
      std::set<std::string> rem;
      for (auto id : r) rem.insert(lm.vocab().token(id));
      auto target = pos < ex.tokens.size() ? lm.vocab().token(ex.tokens[pos]) : std::string(kEndToken);
      for (auto id : extract_features(hist, target, rem)) gold.push_back(id);
      if (pos < ex.tokens.size()) r = coverage_without(r, ex.tokens[pos]);
    }
  }
  if (corpus.empty() || events.empty()) throw Error(Errc::DegenerateCorpus, "no training events");
  lm.register_features(gold);

  auto history_of = [&](const Event& ev) {
    return std::span<const TokenId>(corpus[ev.example].tokens).first(ev.position);
  };
  auto target_of = [&](const Event& ev) {
    const auto& toks = corpus[ev.example].tokens;
    return ev.position < toks.size() ? toks[ev.position] : kEndId;
  };

  // Weights are stored as scale * v so the L2 decay is O(1) per step.
  std::vector<double> v(lm.weights_.size(), 0.0);
  double scale = 1.0;
  const double lr = config.learning_rate;
  const double decay = 1.0 - lr * config.l2;

  std::vector<std::size_t> order(events.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(config.seed);
  std::vector<std::size_t> active;
  std::vector<double> logp;

  if (epoch_losses) epoch_losses->clear();
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle_in_place(std::span(order), rng);
    for (auto idx : order) {
      const auto& ev = events[idx];
      auto hist = history_of(ev);
      auto target = target_of(ev);
      const auto& rem = remaining[idx];

      logp = lm.scores_from(v, scale, hist, rem);
      log_softmax_in_place(logp);

      scale *= decay;
      if (scale < 1e-9) {
        for (auto& x : v) x *= scale;
        scale = 1.0;
      }
      for (TokenId c = kEndId; c < lm.vocab().size(); ++c) {
        double coef = std::exp(logp[c]) - (c == target ? 1.0 : 0.0);
        if (coef == 0.0) continue;
        lm.active_features(hist, c, rem, active);
        for (auto i : active) v[i] -= lr * coef / scale;
      }
    }
    for (std::size_t i = 0; i < v.size(); ++i) lm.weights_[i] = scale * v[i];

    if (epoch_losses) {
      double total = 0.0;
      for (std::size_t i = 0; i < events.size(); ++i) {
        total += lm.event_loss(history_of(events[i]), target_of(events[i]), remaining[i]);
      }
      epoch_losses->push_back(total / static_cast<double>(events.size()));
    }
  }
  for (double w : lm.weights_) {
    if (!std::isfinite(w)) throw Error(Errc::NonFiniteLoss, "MaxEnt training diverged");
  }
  return lm;
}

std::vector<MaxEntExample> make_maxent_examples(std::span<const CaptionRecord> records,
                                                const std::map<ImageId, DetectionSet>& detections,
                                                const Vocabulary& vocab) {
  std::vector<MaxEntExample> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    MaxEntExample ex;
    ex.tokens = vocab.encode(r.tokens);
    if (auto it = detections.find(r.image_id); it != detections.end()) {
      ex.detections = resolve_coverage(it->second, vocab);
    }
    out.push_back(std::move(ex));
  }
  return out;
}

std::string MaxEntLM::serialize() const {
  ByteWriter out;
  out.put_bytes(kMelmMagic);
  out.put_u32(kMelmVersion);
  vocab_.write(out);
  out.put_u32(static_cast<std::uint32_t>(kMaxEntTemplates.size()));
  for (auto t : kMaxEntTemplates) out.put_string(t);
  out.put_f64(l2_);
  out.put_u64(ids_.size());
  for (auto id : ids_) out.put_u64(id);
  for (double w : weights_) out.put_f64(w);
  return out.release();
}

MaxEntLM MaxEntLM::deserialize(std::string_view bytes) {
  ByteReader in(bytes, "MELM");
  if (in.get_bytes(4) != kMelmMagic) throw Error(Errc::MalformedInput, "MELM: bad magic");
  if (auto v = in.get_u32(); v != kMelmVersion) {
    throw Error(Errc::MalformedInput, "MELM: unsupported version " + std::to_string(v));
  }
  MaxEntLM lm(Vocabulary::read(in));
  auto n_templates = in.get_u32();
  if (n_templates != kMaxEntTemplates.size()) throw Error(Errc::MalformedInput, "MELM: template registry mismatch");
  for (auto t : kMaxEntTemplates) {
    if (in.get_string() != t) throw Error(Errc::MalformedInput, "MELM: template registry mismatch");
  }
  lm.l2_ = in.get_f64();
  auto n = in.get_u64();
  if (in.remaining() / 16 < n) throw Error(Errc::MalformedInput, "MELM: truncated weights");
  std::vector<FeatureId> ids(n);
  for (auto& id : ids) id = in.get_u64();
  lm.register_features(ids);
  if (lm.ids_ != ids) throw Error(Errc::MalformedInput, "MELM: feature ids not sorted and unique");
  for (auto& w : lm.weights_) {
    w = in.get_f64();
    if (!std::isfinite(w)) throw Error(Errc::MalformedInput, "MELM: non-finite weight");
  }
  if (!in.at_end()) throw Error(Errc::MalformedInput, "MELM: trailing bytes");
  return lm;
}

void MaxEntLM::save(const std::filesystem::path& path) const { write_file_atomic(path, serialize()); }

MaxEntLM MaxEntLM::load(const std::filesystem::path& path) { return deserialize(read_file(path)); }

}  // namespace capkit
