#include "capkit/synthetic.hpp"

#include <array>
#include <cmath>
#include <numbers>

#include "capkit/binary_io.hpp"
#include "capkit/detections.hpp"
#include "capkit/errors.hpp"
#include "capkit/random.hpp"

namespace capkit {
namespace {

constexpr std::array<const char*, 8> kSubjects = {"dog", "cat", "man", "woman", "horse", "bird", "boy", "girl"};
constexpr std::array<const char*, 8> kActions = {"running", "sitting", "standing", "eating",
                                                 "playing", "sleeping", "walking", "jumping"};
constexpr std::array<const char*, 8> kPlaces = {"grass", "table", "street", "beach", "field", "kitchen", "park", "snow"};
constexpr std::array<const char*, 8> kObjects = {"ball", "frisbee", "pizza", "umbrella", "kite", "bench", "bike", "surfboard"};
constexpr std::array<const char*, 6> kAdjectives = {"small", "large", "white", "black", "brown", "young"};

double normal(Rng& rng) {
  // Box-Muller; 1 - u keeps the log argument in (0, 1].
  double u = 1.0 - uniform_unit(rng);
  double v = uniform_unit(rng);
  return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * std::numbers::pi * v);
}

template <std::size_t N>
const char* pick(Rng& rng, const std::array<const char*, N>& words) {
  return words[uniform_index(rng, N)];
}

std::string make_caption(Rng& rng, std::size_t cluster, double off_topic_rate) {
  std::string s = kSubjects[cluster];
  if (uniform_unit(rng) < off_topic_rate) s = kSubjects[(cluster + 1 + uniform_index(rng, 7)) % 8];
  std::string a = kActions[cluster];
  std::string p = kPlaces[cluster];
  std::string o = kObjects[(cluster + 3) % 8];
  std::string adj = pick(rng, kAdjectives);
  switch (uniform_index(rng, 5)) {
    case 0: return "A " + s + " " + a + " on the " + p + ".";
    case 1: return "A " + adj + " " + s + " " + a + " with a " + o + ".";
    case 2: return "A " + s + " with a " + o + " on the " + p;
    case 3: return "The " + adj + " " + s + " is " + a + " near a " + o + ".";
    default: return "A " + s + " " + a + " in the " + p + " with a " + o;
  }
}

}  // namespace

SyntheticCorpus make_synthetic_corpus(const SyntheticConfig& config) {
  if (config.dim == 0 || config.clusters == 0 || config.clusters > std::min<std::size_t>(config.dim, 8)) {
    throw Error(Errc::InvalidArgument, "synthetic corpus needs 1 <= clusters <= min(dim, 8)");
  }
  Rng rng(config.seed);
  SyntheticCorpus out;
  out.features = FeatureStore(config.dim);
  std::uint64_t annotation = 1;
  std::vector<float> v(config.dim);
  for (std::size_t i = 0; i < config.images; ++i) {
    const ImageId id = 1000 + i;
    const std::size_t c = uniform_index(rng, config.clusters);
    out.cluster_of[id] = c;

    for (std::size_t d = 0; d < config.dim; ++d) {
      double center = d == c ? 3.0 : 0.0;
      v[d] = static_cast<float>(center + config.feature_noise * normal(rng));
    }
    out.features.add(id, v);

    for (std::size_t k = 0; k < config.captions_per_image; ++k) {
      std::string raw = make_caption(rng, c, config.off_topic_rate);
      out.captions.push_back({annotation++, id, raw, tokenize(raw)});
    }

    auto& det = out.detections[id];
    for (const char* w : {kSubjects[c], kActions[c], kPlaces[c], kObjects[(c + 3) % 8]}) {
      det.emplace_back(w, 0.6 + 0.4 * uniform_unit(rng));
    }
    det.emplace_back(kSubjects[(c + 1 + uniform_index(rng, 7)) % 8], 0.45 * uniform_unit(rng));
  }
  return out;
}

void write_synthetic_corpus(const std::filesystem::path& dir, const SyntheticCorpus& corpus) {
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "captions.json", serialize_captions(corpus.captions));
  save_features(dir / "features.fvec", corpus.features);
  std::string lines;
  for (const auto& [id, scored] : corpus.detections) lines += serialize_detection_line(id, scored);
  write_file_atomic(dir / "detections.jsonl", lines);
}

}  // namespace capkit
