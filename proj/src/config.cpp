#include "logmilp/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>

#include "logmilp/errors.hpp"

namespace logmilp {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("bad value for " + key + ": '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("bad boolean for " + key + ": '" + v + "'");
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Entry {
  const char* key;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T>
Entry num(const char* key, T RunConfig::*field) {
  return {key, [field](RunConfig& c, const std::string& k, const std::string& v) { c.*field = parse_number<T>(k, v); },
          [field](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return fmt(c.*field);
            else return std::to_string(c.*field);
          }};
}

template <class T, class S>
Entry sub_num(const char* key, S RunConfig::*outer, T S::*field) {
  return {key,
          [outer, field](RunConfig& c, const std::string& k, const std::string& v) { (c.*outer).*field = parse_number<T>(k, v); },
          [outer, field](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return fmt((c.*outer).*field);
            else return std::to_string((c.*outer).*field);
          }};
}

Entry str(const char* key, std::string RunConfig::*field) {
  return {key, [field](RunConfig& c, const std::string&, const std::string& v) { c.*field = v; },
          [field](const RunConfig& c) { return c.*field; }};
}

const std::vector<Entry>& entries() {
  using M = model::ModelConfig;
  using T = training::TrainConfig;
  static const std::vector<Entry> table = {
      {"seed",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.seed = parse_number<std::uint64_t>(k, v);
         c.model.seed = c.seed;
         c.train.seed = c.seed;
       },
       [](const RunConfig& c) { return std::to_string(c.seed); }},
      str("dataset", &RunConfig::dataset),
      num("lines", &RunConfig::lines),
      num("anomaly_rate", &RunConfig::anomaly_rate),
      num("vocab_normal", &RunConfig::vocab_normal),
      num("vocab_anom", &RunConfig::vocab_anom),
      num("distractor_rate", &RunConfig::distractor_rate),
      str("format", &RunConfig::format),
      str("bagging", &RunConfig::bagging),
      num("W", &RunConfig::W),
      num("s", &RunConfig::s),
      num("block", &RunConfig::block),
      num("per_bag", &RunConfig::per_bag),
      num("split_train", &RunConfig::split_train),
      num("split_val", &RunConfig::split_val),
      num("split_test", &RunConfig::split_test),
      {"shuffle", [](RunConfig& c, const std::string& k, const std::string& v) { c.shuffle = parse_bool(k, v); },
       [](const RunConfig& c) { return std::string(c.shuffle ? "true" : "false"); }},
      {"d",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.model.d = parse_number<int>(k, v); },
       [](const RunConfig& c) { return std::to_string(c.model.d); }},
      sub_num("d_h", &RunConfig::model, &M::d_h),
      sub_num("N_p", &RunConfig::model, &M::n_proto),
      sub_num("K", &RunConfig::model, &M::pool_heads),
      sub_num("d_a", &RunConfig::model, &M::d_a),
      sub_num("heads_enc", &RunConfig::model, &M::heads_enc),
      sub_num("h_c", &RunConfig::model, &M::h_c),
      sub_num("lambda_p", &RunConfig::train, &T::lambda_p),
      sub_num("lambda_a", &RunConfig::train, &T::lambda_a),
      sub_num("lambda_c", &RunConfig::train, &T::lambda_c),
      sub_num("delta_p", &RunConfig::train, &T::delta_p),
      sub_num("delta_e", &RunConfig::train, &T::delta_e),
      sub_num("w_ent", &RunConfig::train, &T::w_ent),
      sub_num("delta_c", &RunConfig::train, &T::delta_c),
      sub_num("eps", &RunConfig::train, &T::eps),
      sub_num("focal_gamma", &RunConfig::train, &T::focal_gamma),
      sub_num("focal_alpha", &RunConfig::train, &T::focal_alpha),
      {"use_consistency",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.use_consistency = parse_bool(k, v); },
       [](const RunConfig& c) { return std::string(c.train.use_consistency ? "true" : "false"); }},
      sub_num("epochs", &RunConfig::train, &T::epochs),
      sub_num("batch_size", &RunConfig::train, &T::batch_size),
      sub_num("lr", &RunConfig::train, &T::lr),
      sub_num("patience", &RunConfig::train, &T::patience),
      num("k", &RunConfig::k),
      num("delta_sr", &RunConfig::delta_sr),
      str("input", &RunConfig::input),
      str("embeddings", &RunConfig::embeddings),
      str("cache", &RunConfig::cache),
      str("checkpoint", &RunConfig::checkpoint),
      str("metrics", &RunConfig::metrics),
      str("run_dir", &RunConfig::run_dir),
  };
  return table;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& e : entries()) {
    if (key == e.key) {
      e.set(*this, key, value);
      return;
    }
  }
  throw ConfigError("unknown config key: " + key);
}

std::vector<std::pair<std::string, std::string>> RunConfig::items() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& e : entries()) out.emplace_back(e.key, e.get(*this));
  return out;
}

void RunConfig::validate() const {
  synth_spec().validate();
  ingest::parse_format(format);
  if (bagging != "sliding" && bagging != "block") throw ConfigError("bagging must be 'sliding' or 'block'");
  if (W < 1 || s < 1 || s > W) throw ConfigError("require W >= 1 and 1 <= s <= W");
  if (block < 1 || per_bag < 1) throw ConfigError("block and per_bag must be >= 1");
  if (k < 1) throw ConfigError("k must be >= 1");
  if (!(delta_sr >= 0)) throw ConfigError("delta_sr must be >= 0");
  model.validate();
  train.validate();
}

synthgen::SynthSpec RunConfig::synth_spec() const {
  synthgen::SynthSpec spec;
  spec.seed = seed;
  spec.n_lines = lines;
  spec.anomaly_rate = anomaly_rate;
  spec.vocab_normal = vocab_normal;
  spec.vocab_anom = vocab_anom;
  spec.distractor_rate = distractor_rate;
  return spec;
}

std::filesystem::path RunConfig::checkpoint_path() const {
  return checkpoint.empty() ? std::filesystem::path(run_dir) / "model.ckpt" : std::filesystem::path(checkpoint);
}

void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": expected key=value");
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

RunConfig load_config(const std::filesystem::path& path) {
  RunConfig cfg;
  apply_config_file(cfg, path);
  return cfg;
}

void write_config(const RunConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw MissingArtifact("cannot write " + path.string());
  for (const auto& [k, v] : cfg.items()) out << k << " = " << v << '\n';
}

}  // namespace logmilp
