#include "capkit/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <nlohmann/json.hpp>
#include <ostream>
#include <optional>
#include <set>
#include <utility>

#include "capkit/analysis.hpp"
#include "capkit/binary_io.hpp"
#include "capkit/corpus.hpp"
#include "capkit/decode.hpp"
#include "capkit/detections.hpp"
#include "capkit/errors.hpp"
#include "capkit/features.hpp"
#include "capkit/knn.hpp"
#include "capkit/maxent.hpp"
#include "capkit/mert.hpp"
#include "capkit/metrics.hpp"
#include "capkit/nbest.hpp"
#include "capkit/parallel.hpp"
#include "capkit/random.hpp"
#include "capkit/recurrent.hpp"
#include "capkit/vocabulary.hpp"

namespace capkit {

using json = nlohmann::ordered_json;

namespace {

// Hashed fields in a fixed order. Paths are kept as written.
template <typename Self, typename Fn>
void visit_fields(Self& c, Fn&& fn) {
  fn("seed", c.seed);
  fn("split", c.split);
  fn("alpha", c.alpha);
  fn("k", c.k);
  fn("m", c.m);
  fn("beam", c.beam);
  fn("nbest", c.nbest);
  fn("max_len", c.max_len);
  fn("min_count", c.min_count);
  fn("top_k", c.top_k);
  fn("tail", c.tail);
  fn("me_epochs", c.me_epochs);
  fn("me_learning_rate", c.me_learning_rate);
  fn("me_l2", c.me_l2);
  fn("rnn_embed", c.rnn_embed);
  fn("rnn_hidden", c.rnn_hidden);
  fn("rnn_epochs", c.rnn_epochs);
  fn("rnn_learning_rate", c.rnn_learning_rate);
  fn("rnn_clip", c.rnn_clip);
  fn("mert_restarts", c.mert_restarts);
  fn("mert_max_iters", c.mert_max_iters);
}

template <typename T>
void assign(T& field, const json& value, std::string_view key) {
  try {
    if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
      if (!value.is_number_unsigned()) throw Error(Errc::MalformedInput, "");
    } else if constexpr (std::is_same_v<T, double>) {
      if (!value.is_number()) throw Error(Errc::MalformedInput, "");
    }
    field = value.get<T>();
  } catch (const std::exception&) {
    throw Error(Errc::MalformedInput, "config key '" + std::string(key) + "' has the wrong type");
  }
}

void set_key(PipelineConfig& c, const std::string& key, const json& value) {
  auto path_field = [&](std::filesystem::path& p) {
    if (!value.is_string()) throw Error(Errc::MalformedInput, "config key '" + key + "' must be a string");
    p = value.get<std::string>();
  };
  if (key == "captions") return path_field(c.captions);
  if (key == "features") return path_field(c.features);
  if (key == "detections") return path_field(c.detections);
  if (key == "out_dir") return path_field(c.out_dir);
  bool found = false;
  visit_fields(c, [&](std::string_view name, auto& field) {
    if (name == key) {
      assign(field, value, key);
      found = true;
    }
  });
  if (!found) throw Error(Errc::MalformedInput, "unknown config key '" + key + "'");
}

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(Errc::InvalidArgument, "config: " + what);
}

// Everything a stage may need, loaded on first use.
class Workspace {
 public:
  Workspace(const PipelineConfig& c, std::ostream& log) : c_(c), log_(log), dir_(c.resolve(c.out_dir)) {}

  const PipelineConfig& config() const { return c_; }
  std::ostream& log() { return log_; }
  std::filesystem::path path(std::string_view name) const { return dir_ / name; }

  std::filesystem::path input(const std::filesystem::path& p, std::string_view what) const {
    if (p.empty()) throw Error(Errc::InvalidArgument, std::string("config: no ") + std::string(what) + " path");
    auto r = c_.resolve(p);
    if (!std::filesystem::exists(r)) throw Error(Errc::Io, std::string(what) + " file not found: " + r.string());
    return r;
  }
  std::filesystem::path artifact(std::string_view name) const {
    auto p = path(name);
    if (!std::filesystem::exists(p)) {
      throw Error(Errc::Io, "missing artifact " + p.string() + " (run the stage that produces it first)");
    }
    return p;
  }

  const std::vector<CaptionRecord>& records() {
    if (!records_) records_ = load_captions(input(c_.captions, "captions"));
    return *records_;
  }
  const FeatureStore& features() {
    if (!features_) features_ = load_features(input(c_.features, "features"));
    return *features_;
  }
  const std::map<ImageId, DetectionSet>& detections() {
    if (!detections_) detections_ = load_detections(input(c_.detections, "detections"), c_.alpha);
    return *detections_;
  }
  const DatasetSplit& split() {
    if (!split_) {
      auto j = json::parse(read_file(artifact("split.json")));
      split_ = DatasetSplit{j.at("train").get<std::vector<ImageId>>(), j.at("val").get<std::vector<ImageId>>(),
                            j.at("testval").get<std::vector<ImageId>>()};
    }
    return *split_;
  }
  const Vocabulary& vocab() {
    if (!vocab_) {
      auto bytes = read_file(artifact("vocab.bin"));
      ByteReader in(bytes, "vocabulary");
      vocab_ = Vocabulary::read(in);
    }
    return *vocab_;
  }
  std::vector<CaptionRecord> records_for(const std::vector<ImageId>& ids) {
    std::set<ImageId> keep(ids.begin(), ids.end());
    std::vector<CaptionRecord> out;
    for (const auto& r : records()) {
      if (keep.count(r.image_id)) out.push_back(r);
    }
    return out;
  }
  CaptionsByImage refs_for(const std::vector<ImageId>& ids) { return group_by_image(records_for(ids)); }
  CoverageSet coverage(ImageId id) {
    auto it = detections().find(id);
    return it == detections().end() ? CoverageSet{} : resolve_coverage(it->second, vocab());
  }

  // Writes an artifact and records its checksum for the manifest.
  void emit(std::string_view name, std::string_view contents) {
    write_file_atomic(path(name), contents);
    outputs_.emplace_back(name, hex64(fnv1a(contents)));
  }
  std::vector<std::pair<std::string, std::string>> take_outputs() { return std::exchange(outputs_, {}); }

  void set_vocab(Vocabulary v) { vocab_ = std::move(v); }
  void set_split(DatasetSplit s) { split_ = std::move(s); }

 private:
  const PipelineConfig& c_;
  std::ostream& log_;
  std::filesystem::path dir_;
  std::optional<std::vector<CaptionRecord>> records_;
  std::optional<FeatureStore> features_;
  std::optional<std::map<ImageId, DetectionSet>> detections_;
  std::optional<DatasetSplit> split_;
  std::optional<Vocabulary> vocab_;
  std::vector<std::pair<std::string, std::string>> outputs_;
};

double safe_bleu(const BleuStats& s) { return s.hyp_len == 0 ? 0.0 : bleu_from_stats(s); }

std::string fmt(double v) { return format_number(v); }

void stage_ingest(Workspace& ws) {
  const auto& c = ws.config();
  const auto& records = ws.records();
  const auto& features = ws.features();
  ws.detections();  // validated here so later stages fail early

  std::vector<ImageId> ids;
  for (const auto& [id, caps] : group_by_image(records)) {
    if (features.contains(id)) ids.push_back(id);
  }
  SplitSizes sizes;
  if (c.split.empty()) {
    sizes.train = ids.size() * 3 / 5;
    sizes.val = ids.size() / 5;
    sizes.testval = ids.size() - sizes.train - sizes.val;
  } else {
    sizes = {c.split[0], c.split[1], c.split[2]};
  }
  auto split = split_dataset(ids, sizes, c.seed);

  json j;
  j["train"] = split.train;
  j["val"] = split.val;
  j["testval"] = split.testval;
  ws.emit("split.json", j.dump(1) + "\n");

  auto vocab = build_vocabulary(ws.records_for(split.train), c.min_count);
  ByteWriter out;
  vocab.write(out);
  ws.emit("vocab.bin", out.bytes());
  ws.log() << "ingest: " << records.size() << " captions, " << ids.size() << " images with features; split "
           << split.train.size() << "/" << split.val.size() << "/" << split.testval.size() << "; vocabulary "
           << vocab.size() << "\n";
  ws.set_split(std::move(split));
  ws.set_vocab(std::move(vocab));
}

void stage_train_me(Workspace& ws) {
  const auto& c = ws.config();
  auto examples = make_maxent_examples(ws.records_for(ws.split().train), ws.detections(), ws.vocab());
  std::vector<double> losses;
  auto lm = train_maxent(ws.vocab(), examples, {c.me_epochs, c.me_learning_rate, c.me_l2, c.seed}, &losses);
  ws.emit("me.model", lm.serialize());
  ws.log() << "train-me: " << examples.size() << " captions, " << lm.num_features() << " features, final loss "
           << fmt(losses.empty() ? 0.0 : losses.back()) << "\n";
}

void stage_train_rnn(Workspace& ws) {
  const auto& c = ws.config();
  const auto& features = ws.features();
  auto examples = make_recurrent_examples(ws.records_for(ws.split().train), ws.vocab(), ConditioningMode::InitialState,
                                          &features, nullptr);
  RecurrentLM lm(ws.vocab(), ConditioningMode::InitialState, {c.rnn_embed, c.rnn_hidden, features.dim()}, c.seed);
  std::vector<double> losses;
  lm = train_recurrent(std::move(lm), examples, {c.rnn_epochs, c.rnn_learning_rate, c.rnn_clip, c.seed}, &losses);
  ws.emit("mrnn.model", lm.serialize());
  ws.log() << "train-rnn: " << examples.size() << " captions, final loss "
           << fmt(losses.empty() ? 0.0 : losses.back()) << "\n";
}

void stage_knn(Workspace& ws) {
  const auto& c = ws.config();
  const auto& split = ws.split();
  FeatureIndex index(ws.features().select(split.train));
  auto train_caps = ws.refs_for(split.train);
  const auto& test = split.testval;
  std::vector<Tokens> consensus(test.size()), one(test.size());
  parallel_for(test.size(), [&](std::size_t i) {
    auto q = ws.features().at(test[i]);
    consensus[i] = knn_consensus_caption(index, train_caps, q, c.k, c.m).caption;
    one[i] = one_nn_caption(index, train_caps, q, splitmix64(c.seed ^ test[i]));
  });
  CaptionTable a, b;
  for (std::size_t i = 0; i < test.size(); ++i) {
    a[test[i]] = consensus[i];
    b[test[i]] = one[i];
  }
  ws.emit("knn_consensus.tsv", serialize_caption_table(a));
  ws.emit("knn_1nn.tsv", serialize_caption_table(b));
  ws.log() << "knn: captioned " << test.size() << " images (k=" << c.k << ", m=" << c.m << ")\n";
}

NBestSet decode_me(Workspace& ws, const MaxEntLM& me, const RecurrentLM& mrnn, const std::vector<ImageId>& ids) {
  const auto& c = ws.config();
  const auto& features = ws.features();
  std::vector<CoverageSet> cov;
  for (ImageId id : ids) cov.push_back(ws.coverage(id));
  std::vector<NBestList> lists(ids.size());
  std::vector<std::string> schema;
  to_nbest(0, {}, me.vocab(), true, &schema);
  MaxEntScorer scorer(me);
  parallel_for(ids.size(), [&](std::size_t i) {
    BeamConfig bc{c.beam, c.max_len, c.nbest, {}};
    auto result = coverage_beam_search(scorer, cov[i], bc, default_min_coverage(cov[i].size(), c.max_len));
    lists[i] = to_nbest(ids[i], result, me.vocab(), true);
    RecurrentScorer rs(mrnn, conditioning_for(ids[i], ConditioningMode::InitialState, mrnn.vocab(), &features, nullptr));
    for (auto& e : lists[i].entries) e.features.push_back(score_sequence(rs, mrnn.vocab().encode(e.tokens)));
  });
  schema.push_back("mrnn");
  return {schema, std::move(lists)};
}

CaptionTable top1(const NBestSet& set) {
  CaptionTable t;
  for (const auto& l : set.lists) t[l.image_id] = l.entries.empty() ? Tokens{} : l.entries.front().tokens;
  return t;
}

void stage_decode(Workspace& ws) {
  const auto& c = ws.config();
  auto me = MaxEntLM::load(ws.artifact("me.model"));
  auto mrnn = RecurrentLM::load(ws.artifact("mrnn.model"));
  const auto& split = ws.split();

  auto val = decode_me(ws, me, mrnn, split.val);
  auto test = decode_me(ws, me, mrnn, split.testval);
  ws.emit("me_val.nbest.tsv", serialize_nbest(val));
  ws.emit("me_testval.nbest.tsv", serialize_nbest(test));
  ws.emit("me_testval.tsv", serialize_caption_table(top1(test)));

  const auto& features = ws.features();
  const auto& ids = split.testval;
  std::vector<Tokens> out(ids.size());
  parallel_for(ids.size(), [&](std::size_t i) {
    RecurrentScorer rs(mrnn, conditioning_for(ids[i], ConditioningMode::InitialState, mrnn.vocab(), &features, nullptr));
    auto result = beam_search(rs, {c.beam, c.max_len, 1, {}});
    if (!result.hypotheses.empty()) out[i] = mrnn.vocab().decode(result.hypotheses.front().tokens);
  });
  CaptionTable t;
  for (std::size_t i = 0; i < ids.size(); ++i) t[ids[i]] = out[i];
  ws.emit("mrnn_testval.tsv", serialize_caption_table(t));
  ws.log() << "decode: n-best lists for " << val.lists.size() << " val and " << test.lists.size()
           << " testval images\n";
}

void stage_rerank(Workspace& ws) {
  const auto& c = ws.config();
  auto val = load_nbest(ws.artifact("me_val.nbest.tsv"));
  auto test = load_nbest(ws.artifact("me_testval.nbest.tsv"));
  WeightVector init;
  for (const auto& name : val.schema) init[name] = name == "logprob" ? 1.0 : 0.0;
  // Images whose decode produced nothing have nothing to rerank.
  std::erase_if(val.lists, [](const NBestList& l) { return l.entries.empty(); });
  auto result = mert_optimize(val, ws.refs_for(ws.split().val), init, {c.mert_restarts, c.mert_max_iters, c.seed});
  ws.emit("weights.json", serialize_weights(result.weights));

  auto w = align_weights(result.weights, test.schema);
  CaptionTable t;
  for (const auto& l : test.lists) t[l.image_id] = l.entries.empty() ? Tokens{} : l.entries[apply_weights(l, w)].tokens;
  ws.emit("me_mert_testval.tsv", serialize_caption_table(t));
  ws.log() << "rerank: val BLEU " << fmt(result.initial_bleu) << " -> " << fmt(result.bleu) << "\n";
}

// System outputs on testval, in report order.
constexpr std::pair<std::string_view, std::string_view> kSystems[] = {
    {"1nn", "knn_1nn.tsv"},   {"knn", "knn_consensus.tsv"},       {"me", "me_testval.tsv"},
    {"me+mert", "me_mert_testval.tsv"}, {"mrnn", "mrnn_testval.tsv"}};

std::vector<std::pair<std::string, CaptionTable>> available_systems(Workspace& ws) {
  std::vector<std::pair<std::string, CaptionTable>> out;
  for (auto [name, file] : kSystems) {
    if (std::filesystem::exists(ws.path(file))) out.emplace_back(name, load_caption_table(ws.path(file)));
  }
  if (out.empty()) throw Error(Errc::Io, "no system outputs in " + ws.path("").string());
  return out;
}

void stage_eval(Workspace& ws) {
  const auto& ids = ws.split().testval;
  auto refs = ws.refs_for(ids);
  json report = json::object();
  for (const auto& [name, table] : available_systems(ws)) {
    BleuStats stats;
    double meteor_sum = 0.0;
    for (const auto& [id, caption] : table) {
      auto r = refs.find(id);
      if (r == refs.end()) throw Error(Errc::MissingReferences, "no references for image " + std::to_string(id));
      stats += bleu_stats(caption, r->second);
      meteor_sum += meteor(caption, r->second);
    }
    double bleu = safe_bleu(stats);
    double met = table.empty() ? 0.0 : meteor_sum / static_cast<double>(table.size());
    report[name] = {{"bleu", bleu}, {"meteor", met}, {"images", table.size()}};
    ws.log() << "eval: " << name << " BLEU " << fmt(bleu) << " METEOR " << fmt(met) << "\n";
  }

  // Perplexity of the held-out references under each trained model.
  auto pplx = [&](auto&& logprob) {
    double lp = 0.0;
    std::size_t n = 0;
    for (const auto& [id, caps] : refs) {
      for (const auto& caption : caps) {
        double v = logprob(id, ws.vocab().encode(caption));
        if (!std::isfinite(v)) throw Error(Errc::NonFiniteLogProb, "non-finite log-probability for image " + std::to_string(id));
        lp += v;
        n += caption.size() + 1;
      }
    }
    return n == 0 ? 0.0 : std::exp(-lp / static_cast<double>(n));
  };
  if (std::filesystem::exists(ws.path("me.model"))) {
    auto me = MaxEntLM::load(ws.path("me.model"));
    MaxEntScorer scorer(me);
    double p = pplx([&](ImageId id, const std::vector<TokenId>& t) { return score_sequence(scorer, t, ws.coverage(id)); });
    report["pplx"]["me"] = p;
    ws.log() << "eval: me PPLX " << fmt(p) << "\n";
  }
  if (std::filesystem::exists(ws.path("mrnn.model"))) {
    auto mrnn = RecurrentLM::load(ws.path("mrnn.model"));
    const auto& features = ws.features();
    double p = pplx([&](ImageId id, const std::vector<TokenId>& t) {
      RecurrentScorer rs(mrnn, conditioning_for(id, ConditioningMode::InitialState, mrnn.vocab(), &features, nullptr));
      return score_sequence(rs, t);
    });
    report["pplx"]["mrnn"] = p;
    ws.log() << "eval: mrnn PPLX " << fmt(p) << "\n";
  }
  ws.emit("eval.json", report.dump(2) + "\n");
}

void stage_analyze(Workspace& ws) {
  const auto& c = ws.config();
  const auto& split = ws.split();
  const auto& features = ws.features();
  auto training = caption_strings(ws.records_for(split.train));
  auto bins = overlap_bins(features.select(split.testval), features.select(split.train), c.top_k, c.tail);
  auto bin_of = bins.bin_of();
  auto refs = ws.refs_for(split.testval);

  json report;
  json overlap = json::array();
  for (const auto& e : bins.entries) {
    overlap.push_back({{"image_id", e.image_id}, {"mean_similarity", e.mean_similarity}, {"bin", to_string(e.bin)}});
  }
  report["overlap"] = std::move(overlap);
  for (const auto& [name, table] : available_systems(ws)) {
    auto rep = repetition_stats(table, training);
    auto bb = binned_bleu(table, refs, bin_of);
    report["systems"][name] = {{"total", rep.total},
                               {"unique", rep.unique},
                               {"seen", rep.seen},
                               {"unique_fraction", rep.unique_fraction},
                               {"seen_in_training_fraction", rep.seen_in_training_fraction},
                               {"bleu_least", bb.bleu[0]},
                               {"bleu_middle", bb.bleu[1]},
                               {"bleu_most", bb.bleu[2]},
                               {"bleu_all", bb.total_bleu}};
    ws.log() << "analyze: " << name << " unique " << fmt(rep.unique_fraction) << " seen "
             << fmt(rep.seen_in_training_fraction) << " BLEU least/most " << fmt(bb.bleu[0]) << "/"
             << fmt(bb.bleu[2]) << "\n";
  }
  ws.emit("analysis.json", report.dump(2) + "\n");
}

using StageFn = void (*)(Workspace&);

StageFn stage_fn(std::string_view name) {
  if (name == "ingest") return stage_ingest;
  if (name == "train-me") return stage_train_me;
  if (name == "train-rnn") return stage_train_rnn;
  if (name == "knn") return stage_knn;
  if (name == "decode") return stage_decode;
  if (name == "rerank") return stage_rerank;
  if (name == "eval") return stage_eval;
  if (name == "analyze") return stage_analyze;
  return nullptr;
}

}  // namespace

void PipelineConfig::validate() const {
  require(alpha >= 0.0 && alpha <= 1.0, "alpha must lie in [0, 1]");
  require(k >= 1, "k must be >= 1");
  require(m >= 1, "m must be >= 1");
  require(beam >= 1, "beam must be >= 1");
  require(nbest >= 1, "nbest must be >= 1");
  require(max_len >= 2, "max_len must be >= 2");
  require(min_count >= 1, "min_count must be >= 1");
  require(top_k >= 1, "top_k must be >= 1");
  require(tail >= 0.0 && tail <= 0.5, "tail must lie in [0, 0.5]");
  require(split.empty() || split.size() == 3, "split must list train, val and testval sizes");
  require(me_learning_rate > 0.0 && me_l2 >= 0.0, "maxent learning rate must be > 0 and l2 >= 0");
  require(rnn_embed >= 1 && rnn_hidden >= 1, "recurrent sizes must be >= 1");
  require(rnn_learning_rate > 0.0, "recurrent learning rate must be > 0");
  require(mert_max_iters >= 1, "mert_max_iters must be >= 1");
}

std::filesystem::path PipelineConfig::resolve(const std::filesystem::path& p) const {
  return p.is_absolute() ? p : base_dir / p;
}

std::string PipelineConfig::canonical_json() const {
  json j;
  j["captions"] = captions.generic_string();
  j["features"] = features.generic_string();
  j["detections"] = detections.generic_string();
  visit_fields(*this, [&](std::string_view name, const auto& field) { j[std::string(name)] = field; });
  return j.dump();
}

std::uint64_t PipelineConfig::hash() const { return fnv1a(canonical_json()); }

PipelineConfig parse_pipeline_config(std::string_view json_text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(Errc::MalformedInput, std::string("config JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(Errc::MalformedInput, "config must be a JSON object");
  PipelineConfig c;
  c.base_dir = base_dir;
  for (auto it = j.begin(); it != j.end(); ++it) set_key(c, it.key(), it.value());
  return c;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  auto base = path.parent_path();
  return parse_pipeline_config(read_file(path), base.empty() ? std::filesystem::path(".") : base);
}

void apply_override(PipelineConfig& config, std::string_view assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw Error(Errc::InvalidArgument, "override must look like key=value: " + std::string(assignment));
  }
  std::string key(assignment.substr(0, eq));
  std::string text(assignment.substr(eq + 1));
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  set_key(config, key, value);
}

std::string run_pipeline(const PipelineConfig& config, const std::vector<std::string>& stages, std::ostream& log) {
  config.validate();
  for (const auto& s : stages) {
    if (!stage_fn(s)) throw Error(Errc::InvalidArgument, "unknown stage '" + s + "'");
  }
  std::filesystem::create_directories(config.resolve(config.out_dir));
  Workspace ws(config, log);

  json manifest;
  manifest["config_hash"] = hex64(config.hash());
  manifest["seed"] = config.seed;
  manifest["config"] = json::parse(config.canonical_json());
  json done = json::array();
  for (std::string_view name : kAllStages) {
    if (std::find(stages.begin(), stages.end(), name) == stages.end()) continue;
    stage_fn(name)(ws);
    json artifacts = json::object();
    for (const auto& [file, sum] : ws.take_outputs()) artifacts[file] = sum;
    done.push_back({{"stage", name}, {"artifacts", std::move(artifacts)}});
  }
  manifest["stages"] = std::move(done);
  std::string text = manifest.dump(2) + "\n";
  write_file_atomic(ws.path("manifest.json"), text);
  return text;
}

}  // namespace capkit
