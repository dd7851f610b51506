#include "logmilp/synthgen.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <numeric>
#include <span>
#include <set>
#include <string_view>

#include "logmilp/errors.hpp"
#include "logmilp/rng.hpp"

namespace logmilp::synthgen {

namespace {

constexpr std::array<std::string_view, 72> kNormalWords = {
    "instruction", "cache",      "generating", "core",      "ciod",       "connection", "established", "job",
    "started",     "completed",  "node",       "card",      "link",       "up",         "ddr",         "memory",
    "allocated",   "scrub",      "temperature", "sensor",   "reading",    "fan",        "speed",       "service",
    "heartbeat",   "session",    "opened",     "closed",    "user",       "login",      "disk",        "mounted",
    "write",       "read",       "request",    "received",  "sent",       "packet",     "queue",       "scheduler",
    "task",        "thread",     "process",    "checkpoint", "sync",      "flush",      "buffer",      "power",
    "supply",      "voltage",    "clock",      "ticks",     "torus",      "dma",        "boot",        "loaded",
    "kernel",      "image",      "ras",        "info",      "network",    "interface",  "address",     "configured",
    "registered",  "controller", "device",     "block",     "channel",    "partition",  "monitor",     "state"};

constexpr std::array<std::string_view, 24> kAnomalyWords = {
    "error",     "failed",   "parity",     "exception", "fatal",   "timeout",   "corrupted", "panic",
    "denied",    "unreachable", "overflow", "machine",  "check",   "interrupt", "lost",      "severe",
    "abort",     "mismatch", "unrecoverable", "crash",  "refused", "invalid",   "segfault",  "halted"};

constexpr std::array<std::string_view, 6> kAlertTags = {"KERNDTLB", "APPSEV", "KERNMC", "KERNPANIC", "APPREAD", "MMCS"};

constexpr std::int64_t kEpochStart = 1117838570;

// Variable slots are filled per line so masking has something to do.
std::string fill_variable(int kind, Rng& rng) {
  switch (kind) {
    case 0:
      return std::to_string(rng.below(100000));
    case 1: {
      static constexpr char hex[] = "0123456789abcdef";
      std::string s = "0x";
      for (int i = 0; i < 8; ++i) s += hex[rng.below(16)];
      return s;
    }
    case 2:
      return "10." + std::to_string(rng.below(256)) + "." + std::to_string(rng.below(256)) + "." +
             std::to_string(rng.below(256));
    default:
      return "/var/log/node" + std::to_string(rng.below(64)) + "/app.log";
  }
}

// A template is a list of words; "$N" marks a variable slot of kind N.
std::vector<std::string> make_template(Rng& rng, std::span<const std::string_view> bank, int min_words, int max_words) {
  const int n = min_words + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_words - min_words + 1)));
  std::vector<std::string> t;
  for (int i = 0; i < n; ++i) t.emplace_back(bank[rng.below(bank.size())]);
  const int slots = static_cast<int>(rng.below(3));
  for (int s = 0; s < slots; ++s) {
    const auto pos = rng.below(t.size() + 1);
    t.insert(t.begin() + static_cast<std::ptrdiff_t>(pos), "$" + std::to_string(rng.below(4)));
  }
  return t;
}

std::string render(const std::vector<std::string>& tmpl, Rng& rng) {
  std::string msg;
  for (const auto& w : tmpl) {
    if (!msg.empty()) msg += ' ';
    msg += w.starts_with('$') ? fill_variable(w[1] - '0', rng) : w;
  }
  return msg;
}

}  // namespace

void SynthSpec::validate() const {
  if (n_lines < 1 || vocab_normal < 1 || vocab_anom < 1) throw InvalidSpec("counts must be >= 1");
  if (vocab_normal < 3) throw InvalidSpec("vocab_normal must be >= 3 (three distractor templates)");
  if (!(anomaly_rate >= 0 && anomaly_rate <= 1) || !(distractor_rate >= 0 && distractor_rate <= 1))
    throw InvalidSpec("rates must lie in [0, 1]");
  if (burst_min < 1 || burst_max < burst_min) throw InvalidSpec("need 1 <= burst_min <= burst_max");
}

SynthCorpus generate(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed, Stream::Synth);
  SynthCorpus corpus;

  std::set<std::vector<std::string>> seen;
  while (static_cast<int>(corpus.normal_templates.size()) < spec.vocab_normal) {
    auto t = make_template(rng, kNormalWords, 3, 7);
    if (seen.insert(t).second) corpus.normal_templates.push_back(std::move(t));
  }
  while (static_cast<int>(corpus.anomalous_templates.size()) < spec.vocab_anom) {
    auto t = make_template(rng, kAnomalyWords, 2, 4);
    // Every anomalous template borrows at least one normal word.
    const int shared = 1 + static_cast<int>(rng.below(2));
    for (int i = 0; i < shared; ++i) {
      const auto pos = rng.below(t.size() + 1);
      t.insert(t.begin() + static_cast<std::ptrdiff_t>(pos), std::string(kNormalWords[rng.below(kNormalWords.size())]));
    }
    if (seen.insert(t).second) corpus.anomalous_templates.push_back(std::move(t));
  }

  // Anomalous line count ~ Binomial(n, rate), cut into bursts.
  std::size_t n_anom = 0;
  for (std::size_t i = 0; i < spec.n_lines; ++i) n_anom += rng.uniform() < spec.anomaly_rate;
  std::vector<std::size_t> bursts;
  for (std::size_t left = n_anom; left > 0;) {
    const auto span = static_cast<std::size_t>(spec.burst_max - spec.burst_min + 1);
    const std::size_t len = std::min<std::size_t>(left, spec.burst_min + rng.below(span));
    bursts.push_back(len);
    left -= len;
  }
  // Each burst goes into a distinct gap of the normal stream, so bursts never touch.
  const std::size_t n_normal = spec.n_lines - n_anom;
  std::vector<std::size_t> gaps(n_normal + 1);
  std::iota(gaps.begin(), gaps.end(), std::size_t{0});
  bursts.resize(std::min(bursts.size(), gaps.size()));
  for (std::size_t i = 0; i < bursts.size(); ++i) std::swap(gaps[i], gaps[i + rng.below(gaps.size() - i)]);
  gaps.resize(bursts.size());
  std::vector<std::size_t> burst_at(n_normal + 1, 0);
  for (std::size_t i = 0; i < bursts.size(); ++i) burst_at[gaps[i]] = bursts[i];

  std::vector<unsigned char> labels;
  labels.reserve(spec.n_lines);
  for (std::size_t g = 0; g <= n_normal; ++g) {
    for (std::size_t j = 0; j < burst_at[g]; ++j) labels.push_back(1);
    if (g < n_normal) labels.push_back(0);
  }

  const std::array<std::string, 8> nodes = {"R00-M0-N1", "R01-M1-N4", "R02-M1-N0", "R03-M0-NC",
                                            "R10-M1-N8", "R11-M0-N2", "R21-M1-NF", "R33-M0-N6"};
  corpus.lines.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::string tag;
    const std::vector<std::string>* tmpl;
    if (labels[i]) {
      tag = std::string(kAlertTags[rng.below(kAlertTags.size())]);
      tmpl = &corpus.anomalous_templates[rng.below(corpus.anomalous_templates.size())];
    } else {
      tag = "-";
      const std::size_t rest = corpus.normal_templates.size() - 3;
      const bool distractor = rng.uniform() < spec.distractor_rate || rest == 0;
      tmpl = distractor ? &corpus.normal_templates[rng.below(3)] : &corpus.normal_templates[3 + rng.below(rest)];
    }
    corpus.lines.push_back(tag + ' ' + std::to_string(kEpochStart + static_cast<std::int64_t>(i)) + ' ' +
                           nodes[rng.below(nodes.size())] + ' ' + render(*tmpl, rng));
  }
  corpus.labels = std::move(labels);
  return corpus;
}

void write_corpus(const SynthCorpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MissingArtifact("cannot write " + path.string());
  for (const auto& l : corpus.lines) out << l << '\n';
  std::ofstream gt(path.string() + ".labels", std::ios::binary);
  for (auto l : corpus.labels) gt << static_cast<int>(l) << '\n';
}

std::vector<unsigned char> read_ground_truth(const std::filesystem::path& labels_path) {
  std::ifstream in(labels_path);
  if (!in) throw MissingArtifact("cannot open " + labels_path.string());
  std::vector<unsigned char> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(line == "1" ? 1 : 0);
  return out;
}

std::vector<int> oracle_bags(const std::vector<unsigned char>& line_labels, int window, int stride) {
  const long n = static_cast<long>(line_labels.size());
  std::vector<int> out;
  long last_end = -1;  // exclusive end of the last full window
  long start = 0;
  while (start + window <= n) {
    int y = 0;
    for (long i = start; i < start + window; ++i) y = y || line_labels[i];
    out.push_back(y);
    last_end = start + window;
    start += stride;
  }
  if (last_end < n) {
    // One trailing partial window over whatever the full windows missed.
    const long tail = last_end < 0 ? 0 : start;
    int y = 0;
    for (long i = tail; i < n; ++i) y = y || line_labels[i];
    out.push_back(y);
  }
  return out;
}

std::vector<int> oracle_bags(const SynthSpec& spec, int window, int stride) {
  return oracle_bags(generate(spec).labels, window, stride);
}

}  // namespace logmilp::synthgen
