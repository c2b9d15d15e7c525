#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace capkit {

// Experiment configuration. Relative paths resolve against `base_dir`
// (the directory of the config file). out_dir is excluded from the
// config hash so that two runs into different directories compare equal.
struct PipelineConfig {
  std::filesystem::path captions;
  std::filesystem::path features;
  std::filesystem::path detections;
  std::filesystem::path out_dir = "capkit_run";
  std::filesystem::path base_dir = ".";

  std::uint64_t seed = 1;
  std::vector<std::size_t> split;  // {train, val, testval}; empty = 60/20/20

  double alpha = 0.5;
  std::size_t k = 90;
  std::size_t m = 125;
  std::size_t beam = 10;
  std::size_t nbest = 500;
  std::size_t max_len = 16;
  std::size_t min_count = 1;
  std::size_t top_k = 50;
  double tail = 0.2;

  std::size_t me_epochs = 10;
  double me_learning_rate = 0.1;
  double me_l2 = 1e-5;

  std::size_t rnn_embed = 32;
  std::size_t rnn_hidden = 64;
  std::size_t rnn_epochs = 10;
  double rnn_learning_rate = 0.1;
  double rnn_clip = 5.0;

  std::size_t mert_restarts = 8;
  std::size_t mert_max_iters = 30;

  // Throws InvalidArgument for out-of-range hyperparameters.
  void validate() const;
  std::filesystem::path resolve(const std::filesystem::path& p) const;
  // Canonical JSON of every hashed field.
  std::string canonical_json() const;
  std::uint64_t hash() const;
};

// Unknown keys are a config error. Throws MalformedInput.
PipelineConfig parse_pipeline_config(std::string_view json_text, const std::filesystem::path& base_dir = ".");
PipelineConfig load_pipeline_config(const std::filesystem::path& path);
// "key=value"; the value is read as JSON, falling back to a plain string.
void apply_override(PipelineConfig& config, std::string_view assignment);

inline constexpr std::string_view kAllStages[] = {"ingest", "train-me", "train-rnn", "knn",
                                                  "decode", "rerank",   "eval",      "analyze"};

// Runs `stages` in pipeline order, each reading its inputs from earlier
// stages' artifacts in out_dir and writing its own atomically, then writes
// manifest.json. Progress lines go to `log`. Returns the manifest text.
// Throws capkit::Error; missing inputs raise Io naming the path.
std::string run_pipeline(const PipelineConfig& config, const std::vector<std::string>& stages, std::ostream& log);

}  // namespace capkit
