#include "logmilp/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>

#include <CLI11.hpp>

#include "logmilp/errors.hpp"
#include "logmilp/eval.hpp"
#include "logmilp/ingest.hpp"
#include "logmilp/model.hpp"
#include "logmilp/synthgen.hpp"
#include "logmilp/training.hpp"

namespace logmilp::cli {

namespace fs = std::filesystem;

namespace {

struct Flags {
  std::string config;
  std::string seed;
  std::string out;
  std::string input;
  std::string embeddings;
  std::string cache;
  std::string checkpoint;
  std::string metrics;
  std::string run_dir;
  std::string lines;
  std::string anomaly_rate;
  bool no_consistency = false;
  std::vector<std::string> sets;
};

// Config file first, then flags in a fixed order.
RunConfig resolve(const Flags& f) {
  RunConfig cfg;
  if (!f.config.empty()) apply_config_file(cfg, f.config);
  const std::pair<const char*, const std::string*> direct[] = {
      {"seed", &f.seed},         {"input", &f.input},     {"embeddings", &f.embeddings}, {"cache", &f.cache},
      {"checkpoint", &f.checkpoint}, {"metrics", &f.metrics}, {"run_dir", &f.run_dir},   {"lines", &f.lines},
      {"anomaly_rate", &f.anomaly_rate}};
  for (const auto& [key, value] : direct)
    if (!value->empty()) cfg.set(key, *value);
  for (const auto& kv : f.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (f.no_consistency) cfg.train.use_consistency = false;
  cfg.validate();
  return cfg;
}

void echo_config(const RunConfig& cfg, const std::string& command) {
  fs::create_directories(cfg.run_dir);
  write_config(cfg, fs::path(cfg.run_dir) / ("effective." + command + ".cfg"));
}

bagging::BagDataset make_bags(const Mat<float>& x, std::span<const unsigned char> labels, const RunConfig& cfg) {
  return cfg.bagging == "block" ? bagging::block_bags(x, labels, cfg.block, cfg.per_bag)
                                : bagging::sliding_bags(x, labels, cfg.W, cfg.s);
}

bagging::BagDataset load_bags(const RunConfig& cfg) {
  if (!cfg.cache.empty() && fs::exists(cfg.cache)) return bagging::read_bag_cache(cfg.cache);
  if (!cfg.embeddings.empty()) {
    const auto set = ingest::read_embeddings(cfg.embeddings);
    return make_bags(set.embeddings, set.labels, cfg);
  }
  if (cfg.input.empty()) throw MissingArtifact("no input: set input, embeddings or an existing cache");
  if (!fs::exists(cfg.input)) throw MissingArtifact("input not found: " + cfg.input);
  ingest::IngestOptions opts;
  opts.format = ingest::parse_format(cfg.format);
  opts.d = cfg.model.d;
  const auto res = ingest::ingest_file(cfg.input, opts);
  return make_bags(res.embeddings, res.labels, cfg);
}

model::ModelParams<float> checkpoint_for(const RunConfig& cfg) {
  const auto path = cfg.checkpoint_path();
  if (!fs::exists(path)) throw MissingArtifact("checkpoint not found: " + path.string());
  return model::load_checkpoint(path);
}

int cmd_synth(const RunConfig& cfg, const Flags& f, std::ostream& out) {
  const auto corpus = synthgen::generate(cfg.synth_spec());
  synthgen::write_corpus(corpus, f.out);
  std::size_t anomalous = 0;
  for (auto l : corpus.labels) anomalous += l;
  out << "wrote " << corpus.lines.size() << " lines (" << anomalous << " anomalous) to " << f.out << '\n';
  return kOk;
}

int cmd_ingest(const RunConfig& cfg, const Flags& f, std::ostream& out) {
  if (cfg.input.empty()) throw ConfigError("ingest needs --input");
  if (!fs::exists(cfg.input)) throw MissingArtifact("input not found: " + cfg.input);
  ingest::IngestOptions opts;
  opts.format = ingest::parse_format(cfg.format);
  opts.d = cfg.model.d;
  auto res = ingest::ingest_file(cfg.input, opts);
  ingest::write_embeddings(f.out, {std::move(res.embeddings), std::move(res.labels)});
  out << "ingested " << res.records.size() << " records, " << res.templates.size() << " templates, "
      << res.malformed_lines << " malformed, " << res.blank_lines << " blank\n";
  return kOk;
}

int cmd_bag(const RunConfig& cfg, const Flags& f, std::ostream& out) {
  RunConfig src = cfg;
  src.cache.clear();  // always rebuild
  const auto ds = load_bags(src);
  bagging::write_bag_cache(f.out, ds);
  int positive = 0;
  for (const auto& b : ds.bags) positive += b.label;
  out << "wrote " << ds.size() << " bags (" << positive << " positive) to " << f.out << '\n';
  return kOk;
}

int cmd_train(RunConfig cfg, const Flags& f, std::ostream& out) {
  if (!f.out.empty()) cfg.run_dir = f.out;
  echo_config(cfg, "train");
  const auto splits = load_splits(cfg);
  const auto init = model::init_params<float>(cfg.model);
  std::ofstream log(fs::path(cfg.run_dir) / "train.log", std::ios::binary);
  if (!log) throw MissingArtifact("cannot write train.log in " + cfg.run_dir);
  const auto result = training::fit(init, splits[0], splits[1], cfg.train, &log);
  model::save_checkpoint(cfg.checkpoint_path(), result.best);
  char buf[160];
  std::snprintf(buf, sizeof buf, "trained %zu epochs, best epoch %d, val F1 %.6f\n", result.history.size(),
                result.best_epoch, result.best_val_f1);
  out << buf << "checkpoint " << cfg.checkpoint_path().string() << '\n';
  return kOk;
}

int cmd_eval(RunConfig cfg, const Flags& f, std::ostream& out) {
  if (!f.out.empty()) cfg.metrics = f.out;
  if (cfg.metrics.empty()) cfg.metrics = (fs::path(cfg.run_dir) / "metrics.csv").string();
  const auto params = checkpoint_for(cfg);
  echo_config(cfg, "eval");
  const auto splits = load_splits(cfg);
  auto result = eval::evaluate(params, splits[1], splits[2], cfg.k, cfg.delta_sr);
  result.report.dataset = cfg.dataset;
  result.report.seed = cfg.seed;
  const bool fresh = !fs::exists(cfg.metrics) || fs::file_size(cfg.metrics) == 0;
  std::ofstream csv(cfg.metrics, std::ios::binary | std::ios::app);
  if (!csv) throw MissingArtifact("cannot write " + cfg.metrics);
  if (fresh) csv << eval::kMetricsHeader << '\n';
  const auto row = eval::metrics_csv_row(result.report);
  csv << row << '\n';
  out << eval::kMetricsHeader << '\n' << row << '\n';
  return kOk;
}

int cmd_localize(RunConfig cfg, const Flags& f, std::ostream& out) {
  const auto params = checkpoint_for(cfg);
  echo_config(cfg, "localize");
  const auto splits = load_splits(cfg);
  const auto& test = splits[2];
  std::vector<eval::Localization> rows;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (test.bags[i].label != 1) continue;
    auto loc = eval::localize(test.bags[i], params, cfg.k);
    loc.bag_index = i;
    rows.push_back(std::move(loc));
  }
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    return a.p_orig - a.p_pert > b.p_orig - b.p_pert;
  });

  std::unique_ptr<std::ofstream> file;
  std::ostream* os = &out;
  if (!f.out.empty()) {
    file = std::make_unique<std::ofstream>(f.out, std::ios::binary);
    if (!*file) throw MissingArtifact("cannot write " + f.out);
    os = file.get();
  }
  // Positions and heads are printed 1-based.
  *os << "bag\tk_star\ttop\tp_orig\tp_pert\tdrop\n";
  char buf[64];
  for (const auto& r : rows) {
    *os << r.bag_index << '\t' << r.head + 1 << '\t';
    for (std::size_t j = 0; j < r.top.size(); ++j) {
      std::snprintf(buf, sizeof buf, "%s%d:%.6f", j ? "," : "", r.top[j] + 1, r.top_attention[j]);
      *os << buf;
    }
    std::snprintf(buf, sizeof buf, "\t%.6f\t%.6f\t%.6f\n", r.p_orig, r.p_pert, r.p_orig - r.p_pert);
    *os << buf;
  }
  return kOk;
}

}  // namespace

std::array<bagging::BagDataset, 3> load_splits(const RunConfig& cfg) {
  const auto all = load_bags(cfg);
  return bagging::split_dataset(all, {cfg.split_train, cfg.split_val, cfg.split_test}, cfg.shuffle, cfg.seed);
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"logmilp: weakly supervised log anomaly detection and localization"};
  app.require_subcommand(1, 1);
  Flags f;
  const char* names[] = {"synth", "ingest", "bag", "train", "eval", "localize"};
  for (const char* name : names) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", f.config, "flat key=value config file");
    sub->add_option("--seed", f.seed);
    auto* out_opt = sub->add_option("--out", f.out);
    sub->add_option("--input", f.input);
    sub->add_option("--embeddings", f.embeddings, "precomputed embedding prefix");
    sub->add_option("--cache", f.cache, "bag cache file");
    sub->add_option("--checkpoint", f.checkpoint);
    sub->add_option("--metrics", f.metrics);
    sub->add_option("--run-dir", f.run_dir);
    sub->add_option("--lines", f.lines);
    sub->add_option("--anomaly-rate", f.anomaly_rate);
    sub->add_flag("--no-consistency", f.no_consistency, "disable the consistency loss");
    sub->add_option("--set", f.sets, "override any config key: key=value")->take_all();
    const std::string n = name;
    if (n == "synth" || n == "ingest" || n == "bag") out_opt->required();
  }

  std::vector<std::string> argv_store{"logmilp"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_store) argv.push_back(s.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return kOk;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kConfigError;
  }

  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    const RunConfig cfg = resolve(f);
    if (cmd == "synth") return cmd_synth(cfg, f, out);
    if (cmd == "ingest") return cmd_ingest(cfg, f, out);
    if (cmd == "bag") return cmd_bag(cfg, f, out);
    if (cmd == "train") return cmd_train(cfg, f, out);
    if (cmd == "eval") return cmd_eval(cfg, f, out);
    return cmd_localize(cfg, f, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const InvalidSpec& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const InvalidWindow& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const InvalidDimension& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const MissingArtifact& e) {
    err << "missing artifact: " << e.what() << '\n';
    return kMissingArtifact;
  } catch (const FormatError& e) {
    err << "unreadable artifact: " << e.what() << '\n';
    return kMissingArtifact;
  } catch (const NonFiniteLoss& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kNumericFailure;
  } catch (const DegenerateVector& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kNumericFailure;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kNumericFailure;
  } catch (const fs::filesystem_error& e) {
    err << "missing artifact: " << e.what() << '\n';
    return kMissingArtifact;
  }
}

}  // namespace logmilp::cli
