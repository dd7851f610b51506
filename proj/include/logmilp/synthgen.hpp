#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace logmilp::synthgen {

struct SynthSpec {
  std::uint64_t seed = 7;
  std::size_t n_lines = 50000;
  int vocab_normal = 50;
  int vocab_anom = 5;
  double anomaly_rate = 0.02;
  int burst_min = 1;
  int burst_max = 3;
  double distractor_rate = 0.5;  // share of normal lines from the 3 most frequent templates

  void validate() const;
};

struct SynthCorpus {
  std::vector<std::string> lines;    // bgl_style text
  std::vector<unsigned char> labels;  // ground truth per line
  std::vector<std::vector<std::string>> normal_templates;
  std::vector<std::vector<std::string>> anomalous_templates;
};

/// Deterministic under spec.seed. The anomalous line count is Binomial(n_lines,
/// anomaly_rate); those lines are split into bursts of burst_min..burst_max lines
/// placed at distinct gaps of the normal stream.
SynthCorpus generate(const SynthSpec& spec);

/// Writes the corpus to `path` and the ground truth to `path` + ".labels".
void write_corpus(const SynthCorpus& corpus, const std::filesystem::path& path);

std::vector<unsigned char> read_ground_truth(const std::filesystem::path& labels_path);

/// Bag labels for sliding windows recomputed straight from the generator's line
/// labels, sharing no code with the bagging module.
std::vector<int> oracle_bags(const SynthSpec& spec, int window, int stride);
std::vector<int> oracle_bags(const std::vector<unsigned char>& line_labels, int window, int stride);

}  // namespace logmilp::synthgen
