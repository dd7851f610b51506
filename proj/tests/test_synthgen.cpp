#include <doctest.h>

#include <cmath>
#include <fstream>

#include "logmilp/errors.hpp"
#include "logmilp/ingest.hpp"
#include "logmilp/rng.hpp"
#include "logmilp/synthgen.hpp"
#include "test_util.hpp"

using namespace logmilp;
using namespace logmilp::synthgen;

namespace {

std::vector<std::size_t> runs_of_ones(const std::vector<unsigned char>& y) {
  std::vector<std::size_t> runs;
  std::size_t cur = 0;
  for (auto v : y) {
    if (v) ++cur;
    else if (cur) {
      runs.push_back(cur);
      cur = 0;
    }
  }
  if (cur) runs.push_back(cur);
  return runs;
}

}  // namespace

TEST_CASE("generation is deterministic per seed") {
  SynthSpec spec;
  spec.n_lines = 5000;
  const auto a = generate(spec);
  const auto b = generate(spec);
  CHECK(a.lines == b.lines);
  CHECK(a.labels == b.labels);
  spec.seed = 8;
  CHECK(generate(spec).lines != a.lines);
}

TEST_CASE("zero anomaly rate gives an all-normal corpus") {
  SynthSpec spec;
  spec.n_lines = 3000;
  spec.anomaly_rate = 0.0;
  const auto c = generate(spec);
  CHECK(c.lines.size() == 3000);
  for (auto l : c.labels) CHECK(l == 0);
  for (const auto& line : c.lines) CHECK(line.rfind("- ", 0) == 0);
}

TEST_CASE("anomalous line count lies in the binomial 99% interval") {
  SynthSpec spec;  // 50000 lines at rate 0.02
  for (std::uint64_t seed : {7u, 8u, 9u}) {
    spec.seed = seed;
    const auto c = generate(spec);
    std::size_t n = 0;
    for (auto l : c.labels) n += l;
    const double mean = spec.n_lines * spec.anomaly_rate;
    const double sd = std::sqrt(mean * (1 - spec.anomaly_rate));
    CHECK(std::abs(static_cast<double>(n) - mean) <= 2.576 * sd);
    CHECK(c.lines.size() == spec.n_lines);
  }
}

TEST_CASE("written corpus re-ingests to the ground-truth labels") {
  SynthSpec spec;
  spec.n_lines = 4000;
  spec.seed = 3;
  const auto c = generate(spec);
  const auto path = testutil::scratch("synth") / "corpus.log";
  write_corpus(c, path);
  const auto truth = read_ground_truth(path.string() + ".labels");
  CHECK(truth == c.labels);

  std::ifstream in(path);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  CHECK(lines == c.lines);
  const auto r = ingest::ingest_lines(lines, {});
  CHECK(r.labels == truth);
  CHECK(r.malformed_lines == 0);
  CHECK_THROWS_AS(read_ground_truth(path.parent_path() / "missing.labels"), MissingArtifact);
}

TEST_CASE("single-line corpus") {
  SynthSpec spec;
  spec.n_lines = 1;
  spec.anomaly_rate = 1.0;
  const auto c = generate(spec);
  REQUIRE(c.lines.size() == 1);
  CHECK(c.labels == std::vector<unsigned char>{1});
  CHECK(c.lines[0].rfind("- ", 0) != 0);
  CHECK(oracle_bags(spec, 20, 20) == std::vector<int>{1});
}

TEST_CASE("oracle bag labels on a hand example") {
  const std::vector<unsigned char> y{0, 0, 1, 0, 0, 0, 0};
  // Windows [0,3) [2,5) [4,7): the first two hold the anomaly.
  CHECK(oracle_bags(y, 3, 2) == std::vector<int>{1, 1, 0});
  // Windows [0,3) [3,6) then the leftover line 7.
  CHECK(oracle_bags(y, 3, 3) == std::vector<int>{1, 0, 0});
  CHECK(oracle_bags(y, 10, 10) == std::vector<int>{1});
}

TEST_CASE("structural invariants over 20 random specs") {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    SynthSpec spec;
    spec.seed = rng.below(1000);
    spec.n_lines = 50 + rng.below(3000);
    spec.vocab_normal = 3 + static_cast<int>(rng.below(40));
    spec.vocab_anom = 1 + static_cast<int>(rng.below(8));
    spec.anomaly_rate = rng.uniform(0.0, 0.2);
    spec.burst_min = 1 + static_cast<int>(rng.below(3));
    spec.burst_max = spec.burst_min + static_cast<int>(rng.below(3));
    spec.distractor_rate = rng.uniform();
    const auto c = generate(spec);
    INFO("trial " << trial);
    CHECK(c.lines.size() == spec.n_lines);
    CHECK(c.labels.size() == spec.n_lines);
    CHECK(c.normal_templates.size() == static_cast<std::size_t>(spec.vocab_normal));
    CHECK(c.anomalous_templates.size() == static_cast<std::size_t>(spec.vocab_anom));
    for (std::size_t i = 0; i < c.lines.size(); ++i) CHECK((c.lines[i].rfind("- ", 0) == 0) == (c.labels[i] == 0));
    // Bursts never touch; only the final cut can fall short of burst_min.
    int short_runs = 0;
    for (auto r : runs_of_ones(c.labels)) {
      CHECK(r <= static_cast<std::size_t>(spec.burst_max));
      short_runs += r < static_cast<std::size_t>(spec.burst_min);
    }
    CHECK(short_runs <= 1);
  }
}

TEST_CASE("three normal templates is enough") {
  SynthSpec spec;
  spec.n_lines = 500;
  spec.vocab_normal = 3;
  spec.distractor_rate = 0.0;
  const auto c = generate(spec);
  CHECK(c.lines.size() == 500);
}

TEST_CASE("invalid specs") {
  SynthSpec s;
  s.anomaly_rate = 1.5;
  CHECK_THROWS_AS(generate(s), InvalidSpec);
  s = SynthSpec{};
  s.burst_min = 3;
  s.burst_max = 2;
  CHECK_THROWS_AS(generate(s), InvalidSpec);
  s = SynthSpec{};
  s.n_lines = 0;
  CHECK_THROWS_AS(generate(s), InvalidSpec);
  s = SynthSpec{};
  s.vocab_normal = 2;
  CHECK_THROWS_AS(generate(s), InvalidSpec);
}
