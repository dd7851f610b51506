#include "logmilp/model.hpp"

#include <fstream>
#include <sstream>

#include "logmilp/binary_io.hpp"

namespace logmilp::model {

namespace {
constexpr int kCheckpointVersion = 1;
}

void ModelConfig::validate() const {
  if (d < 2) throw ConfigError("d must be >= 2");
  if (d_h < 4) throw ConfigError("d_h must be >= 4");
  if (n_proto < 1) throw ConfigError("n_proto must be >= 1");
  if (pool_heads < 1) throw ConfigError("pool_heads must be >= 1");
  if (heads_enc < 1 || d_h % heads_enc != 0) throw ConfigError("heads_enc must divide d_h");
  if (attn_width() < 1) throw ConfigError("d_a must be >= 1");
  if (h_c < 1) throw ConfigError("h_c must be >= 1");
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw MissingArtifact("cannot write checkpoint " + path.string());
  const auto& c = params.config;
  os << "LMCKPT1\n";
  io::write_header(os, {{"version", std::to_string(kCheckpointVersion)},
                        {"d", std::to_string(c.d)},
                        {"d_h", std::to_string(c.d_h)},
                        {"N_p", std::to_string(c.n_proto)},
                        {"K", std::to_string(c.pool_heads)},
                        {"d_a", std::to_string(c.attn_width())},
                        {"heads_enc", std::to_string(c.heads_enc)},
                        {"h_c", std::to_string(c.h_c)},
                        {"seed", std::to_string(c.seed)}});
  zip_slots(
      [&](const std::string& name, const Mat<float>& m) {
        os << "param " << name << ' ' << m.rows << ' ' << m.cols << '\n';
        io::write_f32le(os, m.data);
      },
      params.w);
  if (!os) throw MissingArtifact("failed writing checkpoint " + path.string());
}

ModelParams<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingArtifact("cannot open checkpoint " + path.string());
  std::string magic;
  std::getline(is, magic);
  if (magic != "LMCKPT1") throw FormatError("not a checkpoint: " + path.string());
  const auto h = io::read_header(is);
  if (io::header_int(h, "version") != kCheckpointVersion) throw FormatError("unsupported checkpoint version");
  ModelConfig cfg;
  cfg.d = static_cast<int>(io::header_int(h, "d"));
  cfg.d_h = static_cast<int>(io::header_int(h, "d_h"));
  cfg.n_proto = static_cast<int>(io::header_int(h, "N_p"));
  cfg.pool_heads = static_cast<int>(io::header_int(h, "K"));
  cfg.d_a = static_cast<int>(io::header_int(h, "d_a"));
  cfg.heads_enc = static_cast<int>(io::header_int(h, "heads_enc"));
  cfg.h_c = static_cast<int>(io::header_int(h, "h_c"));
  cfg.seed = std::stoull(h.at("seed"));
  cfg.validate();

  // Initialize for layout only; every tensor is then overwritten from the file.
  auto params = init_params<float>(cfg);
  zip_slots(
      [&](const std::string& name, Mat<float>& m) {
        std::string line;
        if (!std::getline(is, line)) throw FormatError("checkpoint truncated before " + name);
        std::istringstream ss(line);
        std::string tag, got;
        int rows = 0, cols = 0;
        ss >> tag >> got >> rows >> cols;
        if (tag != "param" || got != name) throw FormatError("checkpoint expected " + name + ", found '" + line + "'");
        if (rows != m.rows || cols != m.cols) throw FormatError("checkpoint shape mismatch for " + name);
        io::read_f32le(is, m.data);
      },
      params.w);
  return params;
}

}  // namespace logmilp::model
