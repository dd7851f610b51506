#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "logmilp/cli.hpp"
#include "test_util.hpp"

using namespace logmilp;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) parts.push_back(cur);
  return parts;
}

}  // namespace

TEST_CASE("synth requires --out") {
  const auto r = run({"synth", "--seed", "1"});
  CHECK(r.code == cli::kConfigError);
}

TEST_CASE("synth twice with one seed gives identical files") {
  const auto dir = testutil::scratch("cli_synth");
  const auto a = (dir / "a.log").string(), b = (dir / "b.log").string();
  CHECK(run({"synth", "--seed", "5", "--lines", "2000", "--out", a}).code == cli::kOk);
  CHECK(run({"synth", "--seed", "5", "--lines", "2000", "--out", b}).code == cli::kOk);
  CHECK(slurp(a) == slurp(b));
  CHECK(slurp(a + ".labels") == slurp(b + ".labels"));
  CHECK(run({"synth", "--seed", "6", "--lines", "2000", "--out", b}).code == cli::kOk);
  CHECK(slurp(a) != slurp(b));
}

TEST_CASE("unknown config keys are rejected by name") {
  const auto dir = testutil::scratch("cli_keys");
  const auto r = run({"synth", "--out", (dir / "x.log").string(), "--set", "lambda_q=0.3"});
  CHECK(r.code == cli::kConfigError);
  CHECK(r.err.find("lambda_q") != std::string::npos);

  std::ofstream(dir / "bad.cfg") << "# comment\nseed = 3\nwindow_size = 9\n";
  const auto f = run({"synth", "--out", (dir / "x.log").string(), "--config", (dir / "bad.cfg").string()});
  CHECK(f.code == cli::kConfigError);
  CHECK(f.err.find("window_size") != std::string::npos);

  const auto v = run({"synth", "--out", (dir / "x.log").string(), "--set", "anomaly_rate=2"});
  CHECK(v.code == cli::kConfigError);
}

TEST_CASE("unknown subcommand or flag is a usage error") {
  CHECK(run({"frobnicate"}).code == cli::kConfigError);
  CHECK(run({"synth", "--bogus"}).code == cli::kConfigError);
}

TEST_CASE("eval and localize without a checkpoint report a missing artifact") {
  const auto dir = testutil::scratch("cli_missing");
  CHECK(run({"eval", "--run-dir", dir.string(), "--input", (dir / "none.log").string()}).code == cli::kMissingArtifact);
  CHECK(run({"localize", "--checkpoint", (dir / "none.ckpt").string()}).code == cli::kMissingArtifact);
  CHECK(run({"ingest", "--input", (dir / "none.log").string(), "--out", (dir / "e").string()}).code ==
        cli::kMissingArtifact);
}

TEST_CASE("full pipeline: synth, ingest, bag, train, eval, localize") {
  const auto dir = testutil::scratch("cli_pipeline");
  const auto log = (dir / "c.log").string();
  const auto run_dir = (dir / "run").string();
  REQUIRE(run({"synth", "--seed", "3", "--lines", "4000", "--anomaly-rate", "0.03", "--out", log}).code == cli::kOk);
  REQUIRE(run({"ingest", "--input", log, "--out", (dir / "emb").string()}).code == cli::kOk);
  REQUIRE(run({"bag", "--embeddings", (dir / "emb").string(), "--out", (dir / "bags.bin").string()}).code == cli::kOk);

  const std::vector<std::string> common{"--cache", (dir / "bags.bin").string(), "--run-dir", run_dir, "--seed", "3"};
  auto with = [&](std::vector<std::string> head) {
    head.insert(head.end(), common.begin(), common.end());
    return head;
  };
  const auto t = run(with({"train", "--set", "epochs=2"}));
  REQUIRE(t.code == cli::kOk);
  CHECK(fs::exists(fs::path(run_dir) / "model.ckpt"));
  CHECK(fs::exists(fs::path(run_dir) / "train.log"));
  CHECK(fs::exists(fs::path(run_dir) / "effective.train.cfg"));

  const auto e1 = run(with({"eval"}));
  REQUIRE(e1.code == cli::kOk);
  const auto e2 = run(with({"eval"}));
  REQUIRE(e2.code == cli::kOk);
  const auto csv = split(slurp(fs::path(run_dir) / "metrics.csv"), '\n');
  REQUIRE(csv.size() == 3);  // one header, two rows
  CHECK(csv[0] == "dataset,seed,auc,precision,recall,f1,loc_at_k,sr,tau,k,delta_sr");
  CHECK(csv[1] == csv[2]);
  CHECK(split(csv[1], ',').size() == 11);

  const auto l = run(with({"localize"}));
  REQUIRE(l.code == cli::kOk);
  const auto rows = split(l.out, '\n');
  REQUIRE(rows.size() >= 2);
  CHECK(rows[0] == "bag\tk_star\ttop\tp_orig\tp_pert\tdrop");
  double prev = 2;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto cols = split(rows[i], '\t');
    REQUIRE(cols.size() == 6);
    const int head = std::stoi(cols[1]);
    CHECK(head >= 1);
    CHECK(head <= 4);
    const auto top = split(cols[2], ',');
    CHECK(top.size() >= 1);
    CHECK(top.size() <= 3);
    for (const auto& entry : top) {
      const int pos = std::stoi(entry.substr(0, entry.find(':')));
      CHECK(pos >= 1);
      CHECK(pos <= 20);
    }
    const double drop = std::stod(cols[5]);
    // Each column is rounded to six places on its own.
    CHECK(std::abs(drop - (std::stod(cols[3]) - std::stod(cols[4]))) <= 2e-6);
    CHECK(drop <= prev + 1e-12);
    prev = drop;
  }
}
