#include "capkit/mert.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numeric>

#include "capkit/binary_io.hpp"
#include "capkit/errors.hpp"
#include "capkit/random.hpp"

namespace capkit {
namespace {

double safe_bleu(const BleuStats& s) { return s.hyp_len == 0 ? 0.0 : bleu_from_stats(s); }

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Per-hypothesis BLEU statistics for every list.
std::vector<std::vector<BleuStats>> hypothesis_stats(const NBestSet& nbest, const CaptionsByImage& refs) {
  std::vector<std::vector<BleuStats>> out;
  out.reserve(nbest.lists.size());
  for (const auto& list : nbest.lists) {
    auto it = refs.find(list.image_id);
    if (it == refs.end() || it->second.empty()) {
      throw Error(Errc::MissingReferences, "no references for image " + std::to_string(list.image_id));
    }
    if (list.entries.empty()) throw Error(Errc::EmptyNBest, "empty n-best list for image " + std::to_string(list.image_id));
    auto& row = out.emplace_back();
    for (const auto& e : list.entries) {
      if (e.features.size() != nbest.schema.size()) throw Error(Errc::SchemaMismatch, "feature row size differs from schema");
      row.push_back(bleu_stats(e.tokens, it->second));
    }
  }
  return out;
}

class Optimizer {
 public:
  Optimizer(const NBestSet& nbest, std::vector<std::vector<BleuStats>> stats, const MertConfig& config)
      : nbest_(nbest), stats_(std::move(stats)), config_(config) {}

  double bleu_at(std::span<const double> w) const {
    BleuStats total;
    for (std::size_t s = 0; s < nbest_.lists.size(); ++s) total += stats_[s][apply_weights(nbest_.lists[s], w)];
    return safe_bleu(total);
  }

  // Coordinate ascent from `w`; appends one trace entry per sweep.
  double run(std::vector<double>& w, std::size_t run_index, std::vector<MertIteration>& trace) const {
    double current = bleu_at(w);
    trace.push_back({run_index, 0, w, current});
    for (std::size_t iter = 1; iter <= config_.max_iters; ++iter) {
      bool improved = false;
      for (std::size_t d = 0; d < w.size(); ++d) {
        auto [gamma, best] = line_search(w, d);
        if (best <= current + config_.min_improvement) continue;
        double old = w[d];
        w[d] = gamma;
        double actual = bleu_at(w);
        if (actual > current + config_.min_improvement) {
          current = actual;
          improved = true;
        } else {
          w[d] = old;
        }
      }
      trace.push_back({run_index, iter, w, current});
      if (!improved) break;
    }
    return current;
  }

 private:
  struct Event {
    double gamma;
    std::size_t sentence;
    std::size_t winner;
  };

  std::pair<double, double> line_search(std::span<const double> w, std::size_t d) const {
    std::vector<Event> events;
    std::vector<std::size_t> winner(nbest_.lists.size());
    BleuStats total;
    for (std::size_t s = 0; s < nbest_.lists.size(); ++s) {
      auto env = line_envelope(nbest_.lists[s], w, d);
      winner[s] = env.front().winner;
      total += stats_[s][winner[s]];
      for (std::size_t k = 0; k + 1 < env.size(); ++k) events.push_back({env[k].hi, s, env[k + 1].winner});
    }
    if (events.empty()) return {w[d], -1.0};
    std::stable_sort(events.begin(), events.end(), [](const Event& a, const Event& b) { return a.gamma < b.gamma; });

    double best_gamma = events.front().gamma - 1.0;
    double best = safe_bleu(total);
    std::size_t i = 0;
    while (i < events.size()) {
      double g = events[i].gamma;
      for (; i < events.size() && events[i].gamma == g; ++i) {
        const auto& ev = events[i];
        total -= stats_[ev.sentence][winner[ev.sentence]];
        winner[ev.sentence] = ev.winner;
        total += stats_[ev.sentence][ev.winner];
      }
      double point = i < events.size() ? 0.5 * (g + events[i].gamma) : g + 1.0;
      double b = safe_bleu(total);
      if (b > best) {
        best = b;
        best_gamma = point;
      }
    }
    return {best_gamma, best};
  }

  const NBestSet& nbest_;
  std::vector<std::vector<BleuStats>> stats_;
  const MertConfig& config_;
};

}  // namespace

std::vector<EnvelopeSegment> upper_envelope(std::span<const Line> lines) {
  if (lines.empty()) throw Error(Errc::EmptyNBest, "envelope of an empty n-best list");
  std::vector<std::size_t> order(lines.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (lines[a].slope != lines[b].slope) return lines[a].slope < lines[b].slope;
    if (lines[a].offset != lines[b].offset) return lines[a].offset > lines[b].offset;
    return a < b;
  });

  std::vector<EnvelopeSegment> hull;
  for (std::size_t k = 0; k < order.size(); ++k) {
    std::size_t idx = order[k];
    const Line& l = lines[idx];
    if (k > 0 && lines[order[k - 1]].slope == l.slope) continue;  // dominated by the first of equal slope
    double start = -std::numeric_limits<double>::infinity();
    while (!hull.empty()) {
      const Line& top = lines[hull.back().winner];
      double x = (top.offset - l.offset) / (l.slope - top.slope);
      if (x <= hull.back().lo) {
        hull.pop_back();
        continue;
      }
      start = x;
      break;
    }
    if (!hull.empty()) hull.back().hi = start;
    hull.push_back({start, std::numeric_limits<double>::infinity(), idx});
  }
  return hull;
}

std::vector<EnvelopeSegment> line_envelope(const NBestList& list, std::span<const double> base, std::size_t direction) {
  if (direction >= base.size()) throw Error(Errc::SchemaMismatch, "direction outside the weight vector");
  std::vector<Line> lines;
  lines.reserve(list.entries.size());
  for (const auto& e : list.entries) {
    if (e.features.size() != base.size()) throw Error(Errc::SchemaMismatch, "feature row size differs from weights");
    double offset = dot(e.features, base) - base[direction] * e.features[direction];
    lines.push_back({offset, e.features[direction]});
  }
  return upper_envelope(lines);
}

std::size_t apply_weights(const NBestList& list, std::span<const double> weights) {
  if (list.entries.empty()) throw Error(Errc::EmptyNBest, "empty n-best list for image " + std::to_string(list.image_id));
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < list.entries.size(); ++i) {
    const auto& f = list.entries[i].features;
    if (f.size() != weights.size()) throw Error(Errc::SchemaMismatch, "feature row size differs from weights");
    double s = dot(f, weights);
    if (i == 0 || s > best_score) {
      best_score = s;
      best = i;
    }
  }
  return best;
}

std::vector<double> align_weights(const WeightVector& weights, std::span<const std::string> schema) {
  if (weights.size() != schema.size()) throw Error(Errc::SchemaMismatch, "weight names do not match the feature schema");
  std::vector<double> out;
  for (const auto& name : schema) {
    auto it = weights.find(name);
    if (it == weights.end()) throw Error(Errc::SchemaMismatch, "no weight for feature '" + name + "'");
    if (!std::isfinite(it->second)) throw Error(Errc::InvalidArgument, "non-finite weight for '" + name + "'");
    out.push_back(it->second);
  }
  return out;
}

WeightVector to_weight_vector(std::span<const double> weights, std::span<const std::string> schema) {
  WeightVector out;
  for (std::size_t i = 0; i < schema.size(); ++i) out[schema[i]] = weights[i];
  return out;
}

double rerank_bleu(const NBestSet& nbest, const CaptionsByImage& refs, const WeightVector& weights) {
  auto w = align_weights(weights, nbest.schema);
  MertConfig config;
  Optimizer opt(nbest, hypothesis_stats(nbest, refs), config);
  return opt.bleu_at(w);
}

MertResult mert_optimize(const NBestSet& nbest, const CaptionsByImage& refs, const WeightVector& init,
                         const MertConfig& config) {
  auto w0 = align_weights(init, nbest.schema);
  Optimizer opt(nbest, hypothesis_stats(nbest, refs), config);

  MertResult result;
  std::vector<double> best_w = w0;
  double best = opt.run(best_w, 0, result.trace);
  result.initial_bleu = result.trace.front().bleu;

  double scale = 1.0;
  for (double x : w0) scale = std::max(scale, std::abs(x));
  Rng rng(config.seed);
  for (std::size_t r = 1; r <= config.restarts; ++r) {
    std::vector<double> w = w0;
    for (double& x : w) x += uniform_real(rng, -scale, scale);
    double b = opt.run(w, r, result.trace);
    if (b > best) {
      best = b;
      best_w = w;
    }
  }
  result.weights = to_weight_vector(best_w, nbest.schema);
  result.bleu = best;
  return result;
}

std::string serialize_weights(const WeightVector& weights) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : weights) j[k] = v;
  return j.dump(2) + "\n";
}

WeightVector parse_weights(std::string_view json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(Errc::MalformedInput, std::string("weights JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(Errc::MalformedInput, "weights JSON must be an object");
  WeightVector out;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!it.value().is_number()) throw Error(Errc::MalformedInput, "weight '" + it.key() + "' is not a number");
    out[it.key()] = it.value().get<double>();
  }
  return out;
}

WeightVector load_weights(const std::filesystem::path& path) { return parse_weights(read_file(path)); }

}  // namespace capkit
