#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "logmilp/tensor.hpp"

namespace logmilp::ingest {

enum class Format { BglStyle, CsvLabeled };

Format parse_format(std::string_view name);
std::string_view format_name(Format f);

struct LogRecord {
  std::size_t line_no = 0;
  std::string raw;
  int label = 0;  // 0 = normal
  std::optional<std::int64_t> timestamp;
  std::vector<std::string> tokens;  // after variable masking
};

/// Sentinel replacing variable fields.
inline constexpr std::string_view kVariableToken = "<*>";

/// Parses one newline-free line. bgl_style: `<tag> [epoch] message...`, where tag
/// "-" means normal; csv_labeled: `label,timestamp,message`.
/// Throws MalformedLine on empty or unsplittable input.
LogRecord parse_labeled_line(std::string_view line, Format format, std::size_t line_no = 1);

std::vector<std::string> tokenize(std::string_view message);

/// True for pure integers, hex strings of at least 4 characters, IPv4 dotted
/// quads (optional :port), and paths containing '/'.
bool is_variable(std::string_view token);

std::vector<std::string> mask_variables(std::vector<std::string> tokens);

// Feature-hash constants. Both hashes are 64-bit FNV-1a over the token bytes;
// they differ only in the initial state:
//   bucket hash  h1: kFnvOffset ^ seed
//   sign hash    h2: kFnvOffset ^ seed ^ kSignSalt
// A token adds sign(h2) = (top bit of h2 set ? -1 : +1) at index h1 mod d.
inline constexpr std::uint64_t kFnvOffset = 14695981039346656037ULL;
inline constexpr std::uint64_t kFnvPrime = 1099511628211ULL;
inline constexpr std::uint64_t kSignSalt = 0x5BD1E9955BD1E995ULL;

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t basis);

struct InstanceEmbedding {
  std::vector<float> vector;
  int d = 0;
};

/// L2-normalized signed feature-hash embedding; zero vector for an empty list.
/// Throws InvalidDimension for d < 2.
InstanceEmbedding embed_tokens(std::span<const std::string> tokens, int d, std::uint64_t seed = 0);

struct Template {
  std::size_t template_id = 0;
  std::vector<std::string> masked_tokens;
};

/// Append-only exact-match template table; ids are dense in first-seen order.
class TemplateTable {
 public:
  const Template& extract(const std::vector<std::string>& masked_tokens);
  std::size_t size() const { return templates_.size(); }
  const Template& at(std::size_t id) const { return templates_.at(id); }
  const std::vector<Template>& all() const { return templates_; }

  friend bool operator==(const TemplateTable& a, const TemplateTable& b) { return a.templates_ == b.templates_; }

 private:
  static std::string key(const std::vector<std::string>& tokens);
  std::vector<Template> templates_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline bool operator==(const Template& a, const Template& b) {
  return a.template_id == b.template_id && a.masked_tokens == b.masked_tokens;
}

Template extract_template(const std::vector<std::string>& masked_tokens, TemplateTable& table);

struct IngestOptions {
  Format format = Format::BglStyle;
  int d = 64;
  std::uint64_t hash_seed = 0;
};

struct IngestResult {
  std::vector<LogRecord> records;
  Mat<float> embeddings;  // N×d, one row per record
  std::vector<unsigned char> labels;
  std::vector<std::size_t> template_ids;
  TemplateTable templates;
  std::size_t blank_lines = 0;
  std::size_t malformed_lines = 0;
};

/// Sequential ingestion. Blank lines are dropped; malformed lines are counted and skipped.
IngestResult ingest_lines(std::span<const std::string> lines, const IngestOptions& opts);

/// Parses and embeds `chunks` contiguous slices on separate threads, then merges in
/// line order and assigns templates sequentially. Output equals ingest_lines().
IngestResult ingest_lines_parallel(std::span<const std::string> lines, const IngestOptions& opts, int chunks);

std::vector<std::string> read_lines(const std::filesystem::path& path);
IngestResult ingest_file(const std::filesystem::path& path, const IngestOptions& opts);

/// Precomputed embeddings plus one label per row.
struct EmbeddingSet {
  Mat<float> embeddings;
  std::vector<unsigned char> labels;
};

// Embedding cache layout for a prefix P:
//   P.meta    key=value lines: version=1, count=N, d=D
//   P.f32     N·D little-endian float32 values, row-major
//   P.labels  one 0/1 label per line
void write_embeddings(const std::filesystem::path& prefix, const EmbeddingSet& set);
EmbeddingSet read_embeddings(const std::filesystem::path& prefix);

}  // namespace logmilp::ingest
