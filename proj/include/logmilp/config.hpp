#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "logmilp/bagging.hpp"
#include "logmilp/ingest.hpp"
#include "logmilp/model.hpp"
#include "logmilp/synthgen.hpp"
#include "logmilp/training.hpp"

namespace logmilp {

/// Every knob of a run. Files are flat `key = value` lines; '#' starts a comment.
struct RunConfig {
  RunConfig() {
    model.seed = seed;
    train.seed = seed;
  }

  std::uint64_t seed = 7;
  std::string dataset = "synthetic";

  // synthetic corpus
  std::size_t lines = 50000;
  double anomaly_rate = 0.02;
  int vocab_normal = 50;
  int vocab_anom = 5;
  double distractor_rate = 0.5;

  // ingest and bagging
  std::string format = "bgl_style";
  std::string bagging = "sliding";  // sliding | block
  int W = 20;
  int s = 20;
  int block = 10;
  int per_bag = 20;
  double split_train = 0.6;
  double split_val = 0.2;
  double split_test = 0.2;
  bool shuffle = false;

  model::ModelConfig model;
  training::TrainConfig train;

  // evaluation
  int k = 3;
  double delta_sr = 0.1;

  // paths
  std::string input;
  std::string embeddings;  // prefix of a precomputed embedding set
  std::string cache;       // bag cache file
  std::string checkpoint;
  std::string metrics;
  std::string run_dir = "run";

  /// Applies `key=value`; throws ConfigError naming an unknown key or bad value.
  void set(const std::string& key, const std::string& value);
  std::vector<std::pair<std::string, std::string>> items() const;
  void validate() const;

  synthgen::SynthSpec synth_spec() const;
  std::filesystem::path checkpoint_path() const;
};

RunConfig load_config(const std::filesystem::path& path);
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);
void write_config(const RunConfig& cfg, const std::filesystem::path& path);

}  // namespace logmilp
