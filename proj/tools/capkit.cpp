// capkit command line front end. Exit codes: 0 ok, 1 invariant violation,
// 2 I/O or configuration error.

#include <CLI11.hpp>
#include <algorithm>
#include <filesystem>
#include <iostream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

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
#include "capkit/pipeline.hpp"
#include "capkit/random.hpp"
#include "capkit/recurrent.hpp"
#include "capkit/synthetic.hpp"

namespace fs = std::filesystem;
using namespace capkit;

namespace {

void require_file(const std::string& path) {
  if (!fs::exists(path)) throw Error(Errc::Io, "file not found: " + path);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void write_output(const std::string& path, std::string_view text) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    write_file_atomic(path, text);
  }
}

CaptionsByImage refs_for(const std::vector<CaptionRecord>& records, const std::set<ImageId>& ids) {
  std::vector<CaptionRecord> keep;
  for (const auto& r : records) {
    if (ids.count(r.image_id)) keep.push_back(r);
  }
  return group_by_image(keep);
}

// ---- synth

struct SynthArgs {
  std::string out;
  SyntheticConfig config;
};

void run_synth(const SynthArgs& a) {
  auto corpus = make_synthetic_corpus(a.config);
  write_synthetic_corpus(a.out, corpus);
  std::cout << "wrote " << corpus.features.size() << " images, " << corpus.captions.size() << " captions to " << a.out
            << "\n";
}

// ---- knn-caption

struct KnnArgs {
  std::string captions, train, test, out, mode = "consensus";
  std::size_t k = kDefaultNeighbors, m = kDefaultPoolMates;
  std::uint64_t seed = 1;
};

void run_knn(const KnnArgs& a) {
  for (const auto* p : {&a.captions, &a.train, &a.test}) require_file(*p);
  auto records = load_captions(a.captions);
  auto train = load_features(a.train);
  auto test = load_features(a.test);
  if (test.dim() != train.dim()) throw Error(Errc::DimensionMismatch, "train and test feature dims differ");
  auto caps = refs_for(records, {train.ids().begin(), train.ids().end()});
  std::vector<ImageId> captioned;
  for (ImageId id : train.ids()) {
    if (caps.count(id)) captioned.push_back(id);
  }
  FeatureIndex index(train.select(captioned));
  std::vector<Tokens> out(test.size());
  const bool consensus = a.mode == "consensus";
  parallel_for(test.size(), [&](std::size_t i) {
    out[i] = consensus ? knn_consensus_caption(index, caps, test.row(i), a.k, a.m).caption
                       : one_nn_caption(index, caps, test.row(i), splitmix64(a.seed ^ test.ids()[i]));
  });
  CaptionTable table;
  for (std::size_t i = 0; i < test.size(); ++i) table[test.ids()[i]] = out[i];
  write_output(a.out, serialize_caption_table(table));
}

// ---- train-me

struct TrainMeArgs {
  std::string captions, detections, out;
  double alpha = kDefaultAlpha;
  std::size_t min_count = 1;
  MaxEntConfig config;
};

void run_train_me(const TrainMeArgs& a) {
  require_file(a.captions);
  require_file(a.detections);
  auto records = load_captions(a.captions);
  auto dets = load_detections(a.detections, a.alpha);
  auto vocab = build_vocabulary(records, a.min_count);
  auto examples = make_maxent_examples(records, dets, vocab);
  std::vector<double> losses;
  auto lm = train_maxent(vocab, examples, a.config, &losses);
  lm.save(a.out);
  for (std::size_t e = 0; e < losses.size(); ++e) std::cout << "epoch " << e + 1 << " loss " << format_number(losses[e]) << "\n";
}

// ---- train-rnn

struct TrainRnnArgs {
  std::string captions, features, detections, out, mode = "mrnn";
  double alpha = kDefaultAlpha;
  std::size_t min_count = 1;
  RecurrentDims dims;
  RecurrentTrainConfig config;
};

void run_train_rnn(const TrainRnnArgs& a) {
  require_file(a.captions);
  auto records = load_captions(a.captions);
  auto vocab = build_vocabulary(records, a.min_count);
  const bool mrnn = a.mode == "mrnn";
  std::optional<FeatureStore> features;
  std::optional<std::map<ImageId, DetectionSet>> dets;
  RecurrentDims dims = a.dims;
  if (mrnn) {
    if (a.features.empty()) throw Error(Errc::InvalidArgument, "--features is required for --mode mrnn");
    require_file(a.features);
    features = load_features(a.features);
    dims.feature = features->dim();
  } else {
    if (a.detections.empty()) throw Error(Errc::InvalidArgument, "--detections is required for --mode dgrnn");
    require_file(a.detections);
    dets = load_detections(a.detections, a.alpha);
    dims.feature = 0;
  }
  auto mode = mrnn ? ConditioningMode::InitialState : ConditioningMode::AuxiliaryVector;
  auto examples = make_recurrent_examples(records, vocab, mode, features ? &*features : nullptr, dets ? &*dets : nullptr);
  std::vector<double> losses;
  auto lm = train_recurrent(RecurrentLM(vocab, mode, dims, a.config.seed), examples, a.config, &losses);
  lm.save(a.out);
  for (std::size_t e = 0; e < losses.size(); ++e) std::cout << "epoch " << e + 1 << " loss " << format_number(losses[e]) << "\n";
}

// ---- decode

struct DecodeArgs {
  std::string model, mode = "plain", features, detections, ids, out;
  double alpha = kDefaultAlpha;
  std::size_t beam = kDefaultBeamSize, nbest = 1, max_len = 20;
  long min_coverage = -1;
};

void run_decode(const DecodeArgs& a) {
  require_file(a.model);
  auto bytes = read_file(a.model);
  const bool is_me = bytes.rfind("MELM", 0) == 0;
  const bool coverage = a.mode == "coverage";

  std::optional<MaxEntLM> me;
  std::optional<RecurrentLM> rnn;
  if (is_me) {
    me = MaxEntLM::deserialize(bytes);
  } else {
    rnn = RecurrentLM::deserialize(bytes);
  }
  const Vocabulary& vocab = is_me ? me->vocab() : rnn->vocab();

  std::optional<FeatureStore> features;
  std::optional<std::map<ImageId, DetectionSet>> dets;
  if (!a.features.empty()) {
    require_file(a.features);
    features = load_features(a.features);
  }
  if (!a.detections.empty()) {
    require_file(a.detections);
    dets = load_detections(a.detections, a.alpha);
  }
  const bool needs_features = rnn && rnn->mode() == ConditioningMode::InitialState;
  const bool needs_dets = coverage || (rnn && rnn->mode() == ConditioningMode::AuxiliaryVector);
  if (needs_features && !features) throw Error(Errc::InvalidArgument, "this model needs --features");
  if (needs_dets && !dets) throw Error(Errc::InvalidArgument, "this decode needs --detections");

  std::vector<ImageId> ids;
  if (!a.ids.empty()) {
    for (const auto& s : split_list(a.ids)) ids.push_back(std::stoull(s));
  } else if (needs_features) {
    ids = features->ids();
  } else if (dets) {
    for (const auto& [id, d] : *dets) ids.push_back(id);
  } else {
    throw Error(Errc::InvalidArgument, "no images to decode: pass --ids, --features or --detections");
  }
  std::sort(ids.begin(), ids.end());

  std::vector<NBestList> lists(ids.size());
  std::vector<std::string> schema;
  to_nbest(0, {}, vocab, coverage, &schema);
  parallel_for(ids.size(), [&](std::size_t i) {
    CoverageSet cov;
    if (dets) {
      auto it = dets->find(ids[i]);
      if (it != dets->end()) cov = resolve_coverage(it->second, vocab);
    }
    std::unique_ptr<StepScorer> scorer;
    if (is_me) {
      scorer = std::make_unique<MaxEntScorer>(*me);
    } else {
      scorer = std::make_unique<RecurrentScorer>(
          *rnn, conditioning_for(ids[i], rnn->mode(), vocab, features ? &*features : nullptr, dets ? &*dets : nullptr));
    }
    BeamConfig bc{a.beam, a.max_len, a.nbest, {}};
    DecodeResult result;
    if (coverage) {
      std::size_t minc = a.min_coverage < 0 ? default_min_coverage(cov.size(), a.max_len)
                                            : std::min<std::size_t>(static_cast<std::size_t>(a.min_coverage), cov.size());
      result = coverage_beam_search(*scorer, cov, bc, minc);
    } else {
      result = beam_search(*scorer, bc);
    }
    lists[i] = to_nbest(ids[i], result, vocab, coverage);
  });
  write_output(a.out, serialize_nbest({schema, std::move(lists)}));
}

// ---- mert

struct MertArgs {
  std::string nbest, refs, features, out, apply, init;
  MertConfig config;
};

void run_mert(const MertArgs& a) {
  require_file(a.nbest);
  auto set = load_nbest(a.nbest);
  if (!a.features.empty()) set = set.project(split_list(a.features));

  if (!a.apply.empty()) {
    require_file(a.apply);
    auto w = align_weights(load_weights(a.apply), set.schema);
    CaptionTable table;
    for (const auto& l : set.lists) table[l.image_id] = l.entries.empty() ? Tokens{} : l.entries[apply_weights(l, w)].tokens;
    write_output(a.out, serialize_caption_table(table));
    return;
  }

  if (a.refs.empty()) throw Error(Errc::InvalidArgument, "--refs is required for training");
  require_file(a.refs);
  std::set<ImageId> ids;
  for (const auto& l : set.lists) ids.insert(l.image_id);
  auto refs = refs_for(load_captions(a.refs), ids);
  std::erase_if(set.lists, [](const NBestList& l) { return l.entries.empty(); });

  WeightVector init;
  if (!a.init.empty()) {
    require_file(a.init);
    init = load_weights(a.init);
  } else {
    for (const auto& name : set.schema) init[name] = name == set.schema.front() ? 1.0 : 0.0;
  }
  auto result = mert_optimize(set, refs, init, a.config);
  std::cerr << "BLEU " << format_number(result.initial_bleu) << " -> " << format_number(result.bleu) << "\n";
  write_output(a.out, serialize_weights(result.weights));
}

// ---- eval

struct EvalArgs {
  std::string hyp, refs;
  bool meteor = true;
};

void run_eval(const EvalArgs& a) {
  require_file(a.hyp);
  require_file(a.refs);
  auto table = load_caption_table(a.hyp);
  std::set<ImageId> ids;
  for (const auto& [id, c] : table) ids.insert(id);
  auto refs = refs_for(load_captions(a.refs), ids);
  BleuStats stats;
  double meteor_sum = 0.0;
  for (const auto& [id, caption] : table) {
    auto r = refs.find(id);
    if (r == refs.end()) throw Error(Errc::MissingReferences, "no references for image " + std::to_string(id));
    stats += bleu_stats(caption, r->second);
    if (a.meteor) meteor_sum += meteor(caption, r->second);
  }
  if (table.empty()) throw Error(Errc::EmptyHypothesis, "hypothesis file is empty");
  std::cout << "BLEU " << format_number(stats.hyp_len == 0 ? 0.0 : bleu_from_stats(stats)) << "\n";
  if (a.meteor) std::cout << "METEOR " << format_number(meteor_sum / static_cast<double>(table.size())) << "\n";
}

// ---- analyze

struct AnalyzeArgs {
  std::string generated, captions, train, test, report = "text", out;
  std::size_t top_k = kDefaultOverlapTopK;
  double tail = kDefaultTailFraction;
};

void run_analyze(const AnalyzeArgs& a) {
  for (const auto* p : {&a.generated, &a.captions, &a.train, &a.test}) require_file(*p);
  auto table = load_caption_table(a.generated);
  auto records = load_captions(a.captions);
  auto train = load_features(a.train);
  auto test = load_features(a.test);

  std::set<ImageId> train_ids(train.ids().begin(), train.ids().end());
  std::vector<CaptionRecord> train_records;
  for (const auto& r : records) {
    if (train_ids.count(r.image_id)) train_records.push_back(r);
  }
  auto rep = repetition_stats(table, caption_strings(train_records));
  auto bins = overlap_bins(test, train, a.top_k, a.tail);
  std::set<ImageId> gen_ids;
  for (const auto& [id, c] : table) gen_ids.insert(id);
  auto bb = binned_bleu(table, refs_for(records, gen_ids), bins.bin_of());

  std::ostringstream out;
  if (a.report == "json") {
    nlohmann::ordered_json j;
    j["repetition"] = {{"total", rep.total},
                       {"unique", rep.unique},
                       {"seen", rep.seen},
                       {"unique_fraction", rep.unique_fraction},
                       {"seen_in_training_fraction", rep.seen_in_training_fraction}};
    for (std::size_t b = 0; b < 3; ++b) {
      j["bleu"][std::string(to_string(static_cast<OverlapBin>(b)))] = {{"images", bb.count[b]}, {"bleu", bb.bleu[b]}};
    }
    j["bleu"]["all"] = {{"images", rep.total}, {"bleu", bb.total_bleu}};
    out << j.dump(2) << "\n";
  } else {
    out << "captions " << rep.total << "\n"
        << "unique " << format_number(100.0 * rep.unique_fraction) << "%\n"
        << "seen in training " << format_number(100.0 * rep.seen_in_training_fraction) << "%\n";
    for (std::size_t b = 0; b < 3; ++b) {
      out << "BLEU " << to_string(static_cast<OverlapBin>(b)) << " (" << bb.count[b]
          << " images) " << format_number(bb.bleu[b]) << "\n";
    }
    out << "BLEU all " << format_number(bb.total_bleu) << "\n";
  }
  write_output(a.out, out.str());
}

// ---- pipeline

struct PipelineArgs {
  std::string config, stages, out_dir;
  std::vector<std::string> overrides;
};

void run_pipeline_cmd(const PipelineArgs& a) {
  require_file(a.config);
  auto config = load_pipeline_config(a.config);
  for (const auto& o : a.overrides) apply_override(config, o);
  if (!a.out_dir.empty()) config.out_dir = fs::absolute(a.out_dir);
  std::vector<std::string> stages;
  if (a.stages.empty()) {
    stages.assign(std::begin(kAllStages), std::end(kAllStages));
  } else {
    stages = split_list(a.stages);
  }
  run_pipeline(config, stages, std::cout);
}

// ---- ingest

struct IngestArgs {
  std::string captions, features, detections, split, out = "capkit_run";
  std::uint64_t seed = 1;
  std::size_t min_count = 1;
};

void run_ingest(const IngestArgs& a) {
  PipelineConfig c;
  c.captions = fs::absolute(a.captions);
  c.features = fs::absolute(a.features);
  c.detections = a.detections.empty() ? fs::path() : fs::absolute(a.detections);
  c.out_dir = fs::absolute(a.out);
  c.seed = a.seed;
  c.min_count = a.min_count;
  for (const auto& s : split_list(a.split)) c.split.push_back(std::stoull(s));
  if (c.detections.empty()) {
    // Detections are optional here; an empty file stands in.
    fs::create_directories(c.out_dir);
    c.detections = c.out_dir / "no_detections.jsonl";
    write_file_atomic(c.detections, "");
  }
  run_pipeline(c, {"ingest"}, std::cout);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"capkit: caption retrieval, generation, reranking and evaluation"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Write a clustered synthetic corpus");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--images", synth.config.images);
  s->add_option("--dim", synth.config.dim);
  s->add_option("--clusters", synth.config.clusters);
  s->add_option("--seed", synth.config.seed);

  IngestArgs ingest;
  s = app.add_subcommand("ingest", "Validate inputs, split images and build the vocabulary");
  s->add_option("--captions", ingest.captions)->required();
  s->add_option("--features", ingest.features)->required();
  s->add_option("--detections", ingest.detections);
  s->add_option("--split", ingest.split, "train,val,testval sizes");
  s->add_option("--seed", ingest.seed);
  s->add_option("--min-count", ingest.min_count);
  s->add_option("--out", ingest.out, "Output directory");

  KnnArgs knn;
  s = app.add_subcommand("knn-caption", "Nearest-neighbor captions for test images");
  s->add_option("--captions", knn.captions)->required();
  s->add_option("--features-train", knn.train)->required();
  s->add_option("--features-test", knn.test)->required();
  s->add_option("--k", knn.k)->check(CLI::PositiveNumber);
  s->add_option("--m", knn.m)->check(CLI::PositiveNumber);
  s->add_option("--mode", knn.mode)->check(CLI::IsMember({"consensus", "1nn"}));
  s->add_option("--seed", knn.seed);
  s->add_option("--out", knn.out);

  TrainMeArgs me;
  s = app.add_subcommand("train-me", "Train the detection-conditioned maximum-entropy LM");
  s->add_option("--captions", me.captions)->required();
  s->add_option("--detections", me.detections)->required();
  s->add_option("--alpha", me.alpha);
  s->add_option("--min-count", me.min_count);
  s->add_option("--epochs", me.config.epochs);
  s->add_option("--lr", me.config.learning_rate);
  s->add_option("--l2", me.config.l2);
  s->add_option("--seed", me.config.seed);
  s->add_option("--out", me.out)->required();

  TrainRnnArgs rnn;
  s = app.add_subcommand("train-rnn", "Train a gated recurrent LM");
  s->add_option("--captions", rnn.captions)->required();
  s->add_option("--mode", rnn.mode)->check(CLI::IsMember({"mrnn", "dgrnn"}));
  s->add_option("--features", rnn.features);
  s->add_option("--detections", rnn.detections);
  s->add_option("--alpha", rnn.alpha);
  s->add_option("--min-count", rnn.min_count);
  s->add_option("--embed", rnn.dims.embed);
  s->add_option("--hidden", rnn.dims.hidden);
  s->add_option("--epochs", rnn.config.epochs);
  s->add_option("--lr", rnn.config.learning_rate);
  s->add_option("--clip", rnn.config.clip);
  s->add_option("--seed", rnn.config.seed);
  s->add_option("--out", rnn.out)->required();

  DecodeArgs dec;
  s = app.add_subcommand("decode", "Beam-search decode to an n-best TSV");
  s->add_option("--model", dec.model)->required();
  s->add_option("--mode", dec.mode)->check(CLI::IsMember({"plain", "coverage"}));
  s->add_option("--beam", dec.beam)->check(CLI::PositiveNumber);
  s->add_option("--nbest", dec.nbest)->check(CLI::PositiveNumber);
  s->add_option("--max-len", dec.max_len)->check(CLI::PositiveNumber);
  s->add_option("--min-coverage", dec.min_coverage);
  s->add_option("--features", dec.features);
  s->add_option("--detections", dec.detections);
  s->add_option("--alpha", dec.alpha);
  s->add_option("--ids", dec.ids, "Comma-separated image ids");
  s->add_option("--out", dec.out);

  MertArgs mert;
  s = app.add_subcommand("mert", "Train reranking weights, or apply them with --apply");
  s->add_option("--nbest", mert.nbest)->required();
  s->add_option("--refs", mert.refs);
  s->add_option("--features", mert.features, "Comma-separated feature columns");
  s->add_option("--init", mert.init);
  s->add_option("--restarts", mert.config.restarts);
  s->add_option("--max-iters", mert.config.max_iters);
  s->add_option("--seed", mert.config.seed);
  s->add_option("--apply", mert.apply, "Weights JSON to apply");
  s->add_option("--out", mert.out);

  EvalArgs ev;
  s = app.add_subcommand("eval", "Corpus BLEU and mean METEOR of a caption table");
  s->add_option("--hyp", ev.hyp)->required();
  s->add_option("--refs", ev.refs)->required();
  s->add_flag("!--no-meteor", ev.meteor);

  AnalyzeArgs an;
  s = app.add_subcommand("analyze", "Repetition statistics and overlap-binned BLEU");
  s->add_option("--generated", an.generated)->required();
  s->add_option("--captions", an.captions)->required();
  s->add_option("--features-train", an.train)->required();
  s->add_option("--features-test", an.test)->required();
  s->add_option("--top-k", an.top_k)->check(CLI::PositiveNumber);
  s->add_option("--tail", an.tail);
  s->add_option("--report", an.report)->check(CLI::IsMember({"json", "text"}));
  s->add_option("--out", an.out);

  PipelineArgs pipe;
  s = app.add_subcommand("pipeline", "Run pipeline stages from a JSON config");
  s->add_option("--config", pipe.config)->required();
  s->add_option("--stages", pipe.stages, "Comma-separated stages (default: all)");
  s->add_option("--set", pipe.overrides, "key=value config override")->take_all();
  s->add_option("--out-dir", pipe.out_dir);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "synth") run_synth(synth);
    else if (cmd == "ingest") run_ingest(ingest);
    else if (cmd == "knn-caption") run_knn(knn);
    else if (cmd == "train-me") run_train_me(me);
    else if (cmd == "train-rnn") run_train_rnn(rnn);
    else if (cmd == "decode") run_decode(dec);
    else if (cmd == "mert") run_mert(mert);
    else if (cmd == "eval") run_eval(ev);
    else if (cmd == "analyze") run_analyze(an);
    else if (cmd == "pipeline") run_pipeline_cmd(pipe);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return is_input_error(e.code()) ? 2 : 1;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: Io: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
