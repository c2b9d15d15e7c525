#include <gtest/gtest.h>

#include <fstream>
#include <functional>
#include <sstream>

#include <nlohmann/json.hpp>

#include "capkit/errors.hpp"
#include "capkit/pipeline.hpp"
#include "capkit/synthetic.hpp"
#include "support/temp_dir.hpp"

using namespace capkit;
using testing_support::TempDir;

namespace {

Error error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e;
  }
  ADD_FAILURE() << "no capkit::Error thrown";
  return Error(Errc::Io, "");
}

PipelineConfig small_config(const std::filesystem::path& data, const std::filesystem::path& out) {
  PipelineConfig c;
  c.captions = data / "captions.json";
  c.features = data / "features.fvec";
  c.detections = data / "detections.jsonl";
  c.out_dir = out;
  c.seed = 4;
  c.split = {36, 12, 12};
  c.k = 6;
  c.m = 12;
  c.nbest = 8;
  c.beam = 4;
  c.max_len = 10;
  c.top_k = 10;
  c.me_epochs = 3;
  c.rnn_epochs = 2;
  c.rnn_embed = 8;
  c.rnn_hidden = 12;
  c.mert_restarts = 2;
  c.mert_max_iters = 5;
  return c;
}

void write_small_corpus(const std::filesystem::path& dir) {
  SyntheticConfig sc;
  sc.images = 60;
  sc.seed = 2;
  write_synthetic_corpus(dir, make_synthetic_corpus(sc));
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Config, DefaultsAndOverrides) {
  auto c = parse_pipeline_config(R"({"captions": "c.json", "k": 12, "split": [5, 3, 2]})", "/data");
  EXPECT_EQ(c.k, 12u);
  EXPECT_EQ(c.m, 125u);
  EXPECT_EQ(c.split, (std::vector<std::size_t>{5, 3, 2}));
  EXPECT_EQ(c.resolve(c.captions), std::filesystem::path("/data/c.json"));
  apply_override(c, "alpha=0.25");
  apply_override(c, "detections=dets.jsonl");
  EXPECT_EQ(c.alpha, 0.25);
  EXPECT_EQ(c.detections, std::filesystem::path("dets.jsonl"));
}

TEST(Config, UnknownKeysAndBadValues) {
  EXPECT_EQ(error_of([] { parse_pipeline_config(R"({"kk": 3})"); }).code(), Errc::MalformedInput);
  EXPECT_EQ(error_of([] { parse_pipeline_config("{"); }).code(), Errc::MalformedInput);
  PipelineConfig c;
  EXPECT_THROW(apply_override(c, "nope=1"), Error);
  c.k = 0;
  EXPECT_EQ(error_of([&] { c.validate(); }).code(), Errc::InvalidArgument);
}

TEST(Config, HashIgnoresOutputDirectory) {
  PipelineConfig a, b;
  b.out_dir = "/elsewhere";
  EXPECT_EQ(a.hash(), b.hash());
  b.seed = 2;
  EXPECT_NE(a.hash(), b.hash());
}

TEST(Pipeline, MissingFeaturesNamesThePath) {
  TempDir dir;
  write_small_corpus(dir.path());
  auto c = small_config(dir.path(), dir / "run");
  c.features = dir / "absent.fvec";
  std::ostringstream log;
  auto e = error_of([&] { run_pipeline(c, {"ingest"}, log); });
  EXPECT_EQ(e.code(), Errc::Io);
  EXPECT_NE(std::string(e.what()).find("absent.fvec"), std::string::npos);
}

TEST(Pipeline, LaterStageWithoutArtifactsFails) {
  TempDir dir;
  write_small_corpus(dir.path());
  auto c = small_config(dir.path(), dir / "run");
  std::ostringstream log;
  auto e = error_of([&] { run_pipeline(c, {"eval"}, log); });
  EXPECT_EQ(e.code(), Errc::Io);
}

TEST(Pipeline, FullRunIsDeterministic) {
  TempDir dir;
  write_small_corpus(dir.path());
  std::ostringstream log;
  auto m1 = run_pipeline(small_config(dir.path(), dir / "a"), {std::begin(kAllStages), std::end(kAllStages)}, log);
  auto m2 = run_pipeline(small_config(dir.path(), dir / "b"), {std::begin(kAllStages), std::end(kAllStages)}, log);
  EXPECT_EQ(m1, m2);
  EXPECT_EQ(slurp(dir / "a/eval.json"), slurp(dir / "b/eval.json"));

  auto ev = nlohmann::json::parse(slurp(dir / "a/eval.json"));
  EXPECT_TRUE(ev.is_object());
  auto an = nlohmann::json::parse(slurp(dir / "a/analysis.json"));
  EXPECT_TRUE(an.is_object());

  // rerun only the last stages against existing artifacts
  auto m3 = run_pipeline(small_config(dir.path(), dir / "a"), {"eval", "analyze"}, log);
  auto j3 = nlohmann::json::parse(m3);
  EXPECT_EQ(j3["stages"].size(), 2u);
  EXPECT_EQ(slurp(dir / "a/eval.json"), slurp(dir / "b/eval.json"));
}

TEST(Pipeline, SeedChangesTheSplit) {
  TempDir dir;
  write_small_corpus(dir.path());
  std::ostringstream log;
  auto c = small_config(dir.path(), dir / "a");
  run_pipeline(c, {"ingest"}, log);
  c.seed = 5;
  c.out_dir = dir / "b";
  run_pipeline(c, {"ingest"}, log);
  EXPECT_NE(slurp(dir / "a/split.json"), slurp(dir / "b/split.json"));
}
