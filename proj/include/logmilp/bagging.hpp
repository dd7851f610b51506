#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "logmilp/tensor.hpp"

namespace logmilp::bagging {

enum class Split { Train, Val, Test, All };

/// A fixed-width window of instances. Padded rows are zero with mask 0 and y 0.
struct Bag {
  Mat<float> embeddings;               // W×d
  std::vector<unsigned char> mask;     // 1 = valid instance
  int label = 0;                       // max of instance_labels over valid positions
  std::vector<unsigned char> instance_labels;  // evaluation only
  std::pair<std::size_t, std::size_t> source_span{0, 0};  // 1-based inclusive line numbers

  int width() const { return embeddings.rows; }
  int valid_count() const;

  friend bool operator==(const Bag&, const Bag&) = default;
};

struct BagDataset {
  std::vector<Bag> bags;
  int window = 0;
  int d = 0;
  Split split = Split::All;

  std::size_t size() const { return bags.size(); }
  std::vector<int> labels() const;

  friend bool operator==(const BagDataset&, const BagDataset&) = default;
};

/// Windows start at lines 1, 1+s, 1+2s, ...; a trailing remainder not covered by
/// the last full window becomes one padded bag.
BagDataset sliding_bags(const Mat<float>& embeddings, std::span<const unsigned char> labels, int window, int stride);

/// Mean-pools `block` consecutive lines into one instance (labels OR-ed), then
/// groups `per_bag` block-instances into each bag; the last bag is padded.
BagDataset block_bags(const Mat<float>& embeddings, std::span<const unsigned char> labels, int block, int per_bag);

/// Start offsets (0-based) of the windows sliding_bags emits for N lines.
std::vector<std::size_t> window_starts(std::size_t n, int window, int stride);

struct SplitRatios {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
};

/// Contiguous chronological split by bag count; with `shuffled`, bags are permuted
/// with `seed` first. Throws TooFewBags for fewer than 3 bags.
std::array<BagDataset, 3> split_dataset(const BagDataset& ds, SplitRatios ratios, bool shuffled = false,
                                        std::uint64_t seed = 0);

// Bag cache: the line "LMBAG1", a key=value header (count, W, d) ending in "end",
// then per bag: W mask bytes, one label byte, W instance-label bytes, and W·d
// little-endian float32 values.
void write_bag_cache(const std::filesystem::path& path, const BagDataset& ds);
BagDataset read_bag_cache(const std::filesystem::path& path);

}  // namespace logmilp::bagging
