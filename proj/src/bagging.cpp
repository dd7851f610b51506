#include "logmilp/bagging.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "logmilp/binary_io.hpp"
#include "logmilp/errors.hpp"
#include "logmilp/rng.hpp"

namespace logmilp::bagging {

int Bag::valid_count() const { return static_cast<int>(std::count(mask.begin(), mask.end(), 1)); }

std::vector<int> BagDataset::labels() const {
  std::vector<int> out;
  out.reserve(bags.size());
  for (const auto& b : bags) out.push_back(b.label);
  return out;
}

namespace {

void check_input(const Mat<float>& embeddings, std::span<const unsigned char> labels) {
  if (embeddings.rows == 0) throw EmptyInput("no instances to bag");
  if (static_cast<std::size_t>(embeddings.rows) != labels.size())
    throw ShapeMismatch("embedding rows and labels differ in length");
}

// Copies rows [begin, begin+count) of `src` into a W-wide bag starting at row 0.
Bag make_bag(const Mat<float>& src, std::span<const unsigned char> labels, std::size_t begin, std::size_t count,
             int window, std::pair<std::size_t, std::size_t> span) {
  Bag bag;
  bag.embeddings = Mat<float>(window, src.cols);
  bag.mask.assign(window, 0);
  bag.instance_labels.assign(window, 0);
  for (std::size_t i = 0; i < count; ++i) {
    const auto row = src.row(static_cast<int>(begin + i));
    std::copy(row.begin(), row.end(), bag.embeddings.row(static_cast<int>(i)).begin());
    bag.mask[i] = 1;
    bag.instance_labels[i] = labels[begin + i] ? 1 : 0;
    bag.label = std::max<int>(bag.label, bag.instance_labels[i]);
  }
  bag.source_span = span;
  return bag;
}

}  // namespace

std::vector<std::size_t> window_starts(std::size_t n, int window, int stride) {
  std::vector<std::size_t> starts;
  const auto w = static_cast<std::size_t>(window);
  const auto s = static_cast<std::size_t>(stride);
  std::size_t start = 0;
  for (; start + w <= n; start += s) starts.push_back(start);
  const std::size_t covered = starts.empty() ? 0 : starts.back() + w;
  if (covered < n) starts.push_back(starts.empty() ? 0 : starts.back() + s);
  return starts;
}

BagDataset sliding_bags(const Mat<float>& embeddings, std::span<const unsigned char> labels, int window, int stride) {
  if (window < 1 || stride < 1 || stride > window)
    throw InvalidWindow("require W >= 1 and 1 <= s <= W (W=" + std::to_string(window) + ", s=" + std::to_string(stride) + ")");
  check_input(embeddings, labels);
  const auto n = static_cast<std::size_t>(embeddings.rows);
  BagDataset ds;
  ds.window = window;
  ds.d = embeddings.cols;
  for (std::size_t start : window_starts(n, window, stride)) {
    const std::size_t count = std::min<std::size_t>(window, n - start);
    ds.bags.push_back(make_bag(embeddings, labels, start, count, window, {start + 1, start + count}));
  }
  return ds;
}

BagDataset block_bags(const Mat<float>& embeddings, std::span<const unsigned char> labels, int block, int per_bag) {
  if (block < 1 || per_bag < 1) throw InvalidWindow("block and per_bag must be >= 1");
  check_input(embeddings, labels);
  const auto n = static_cast<std::size_t>(embeddings.rows);
  const std::size_t n_blocks = (n + block - 1) / static_cast<std::size_t>(block);

  Mat<float> pooled(static_cast<int>(n_blocks), embeddings.cols);
  std::vector<unsigned char> block_labels(n_blocks, 0);
  std::vector<std::pair<std::size_t, std::size_t>> block_lines(n_blocks);
  for (std::size_t b = 0; b < n_blocks; ++b) {
    const std::size_t begin = b * block;
    const std::size_t end = std::min(n, begin + block);
    auto out = pooled.row(static_cast<int>(b));
    for (std::size_t i = begin; i < end; ++i) {
      const auto row = embeddings.row(static_cast<int>(i));
      for (int c = 0; c < embeddings.cols; ++c) out[c] += row[c];
      block_labels[b] |= labels[i] ? 1 : 0;
    }
    for (auto& v : out) v /= static_cast<float>(end - begin);
    block_lines[b] = {begin + 1, end};
  }

  BagDataset ds;
  ds.window = per_bag;
  ds.d = embeddings.cols;
  for (std::size_t start = 0; start < n_blocks; start += per_bag) {
    const std::size_t count = std::min<std::size_t>(per_bag, n_blocks - start);
    ds.bags.push_back(make_bag(pooled, block_labels, start, count, per_bag,
                               {block_lines[start].first, block_lines[start + count - 1].second}));
  }
  return ds;
}

std::array<BagDataset, 3> split_dataset(const BagDataset& ds, SplitRatios ratios, bool shuffled, std::uint64_t seed) {
  if (ratios.train <= 0 || ratios.val <= 0 || ratios.test <= 0 ||
      std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9)
    throw ConfigError("split ratios must be positive and sum to 1");
  const std::size_t n = ds.size();
  if (n < 3) throw TooFewBags("need at least 3 bags to split, have " + std::to_string(n));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (shuffled) {
    Rng rng(seed, Stream::Split);
    rng.shuffle(order);
  }

  auto n_train = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(n * ratios.train + 1e-9)));
  auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(n * ratios.val + 1e-9)));
  while (n_train + n_val > n - 1) {
    if (n_train >= n_val) {
      --n_train;
    } else {
      --n_val;
    }
  }
  const std::size_t cuts[4] = {0, n_train, n_train + n_val, n};
  const Split kinds[3] = {Split::Train, Split::Val, Split::Test};

  std::array<BagDataset, 3> out;
  for (int p = 0; p < 3; ++p) {
    out[p].window = ds.window;
    out[p].d = ds.d;
    out[p].split = kinds[p];
    for (std::size_t i = cuts[p]; i < cuts[p + 1]; ++i) out[p].bags.push_back(ds.bags[order[i]]);
  }
  return out;
}

void write_bag_cache(const std::filesystem::path& path, const BagDataset& ds) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw MissingArtifact("cannot write " + path.string());
  os << "LMBAG1\n";
  io::write_header(os, {{"count", std::to_string(ds.size())}, {"W", std::to_string(ds.window)}, {"d", std::to_string(ds.d)}});
  for (const auto& bag : ds.bags) {
    std::vector<char> bytes;
    for (auto m : bag.mask) bytes.push_back(static_cast<char>(m));
    bytes.push_back(static_cast<char>(bag.label));
    for (auto y : bag.instance_labels) bytes.push_back(static_cast<char>(y));
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    io::write_f32le(os, bag.embeddings.data);
  }
}

BagDataset read_bag_cache(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingArtifact("cannot open " + path.string());
  std::string magic;
  std::getline(is, magic);
  if (magic != "LMBAG1") throw FormatError("not a bag cache: " + path.string());
  const auto h = io::read_header(is);
  const auto count = io::header_int(h, "count");
  BagDataset ds;
  ds.window = static_cast<int>(io::header_int(h, "W"));
  ds.d = static_cast<int>(io::header_int(h, "d"));
  if (count < 0 || ds.window < 1 || ds.d < 1) throw FormatError("bad bag cache header");
  for (long long b = 0; b < count; ++b) {
    Bag bag;
    std::vector<char> bytes(2 * static_cast<std::size_t>(ds.window) + 1);
    is.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (static_cast<std::size_t>(is.gcount()) != bytes.size()) throw FormatError("truncated bag cache");
    bag.mask.assign(bytes.begin(), bytes.begin() + ds.window);
    bag.label = bytes[ds.window];
    bag.instance_labels.assign(bytes.begin() + ds.window + 1, bytes.end());
    bag.embeddings = Mat<float>(ds.window, ds.d);
    io::read_f32le(is, bag.embeddings.data);
    ds.bags.push_back(std::move(bag));
  }
  return ds;
}

}  // namespace logmilp::bagging
