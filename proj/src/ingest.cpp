#include "logmilp/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <thread>

#include "logmilp/binary_io.hpp"
#include "logmilp/errors.hpp"

namespace logmilp::ingest {

namespace {

bool all_of(std::string_view s, int (*pred)(int)) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [pred](char c) { return pred(static_cast<unsigned char>(c)) != 0; });
}

bool is_integer(std::string_view s) { return all_of(s, ::isdigit); }

// At least 4 characters counting an optional 0x prefix.
bool is_hex(std::string_view s) {
  if (s.size() < 4) return false;
  bool prefixed = false;
  if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
    s.remove_prefix(2);
    prefixed = true;
  }
  if (s.empty() || !all_of(s, ::isxdigit)) return false;
  // Plain words such as "added" or "face" are spelled with hex letters only.
  return prefixed || std::any_of(s.begin(), s.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
}

bool is_ipv4(std::string_view s) {
  if (const auto colon = s.find(':'); colon != std::string_view::npos) {
    if (!is_integer(s.substr(colon + 1))) return false;
    s = s.substr(0, colon);
  }
  int parts = 0;
  while (true) {
    const auto dot = s.find('.');
    const std::string_view part = s.substr(0, dot);
    if (part.empty() || part.size() > 3 || !is_integer(part)) return false;
    int v = 0;
    std::from_chars(part.data(), part.data() + part.size(), v);
    if (v > 255) return false;
    ++parts;
    if (dot == std::string_view::npos) break;
    s.remove_prefix(dot + 1);
  }
  return parts == 4;
}

std::optional<std::int64_t> parse_epoch(std::string_view s) {
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool is_blank(std::string_view s) { return trim(s).empty(); }

}  // namespace

Format parse_format(std::string_view name) {
  if (name == "bgl_style") return Format::BglStyle;
  if (name == "csv_labeled") return Format::CsvLabeled;
  throw ConfigError("unknown log format: " + std::string(name));
}

std::string_view format_name(Format f) { return f == Format::BglStyle ? "bgl_style" : "csv_labeled"; }

std::vector<std::string> tokenize(std::string_view message) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < message.size()) {
    while (i < message.size() && std::isspace(static_cast<unsigned char>(message[i]))) ++i;
    const std::size_t start = i;
    while (i < message.size() && !std::isspace(static_cast<unsigned char>(message[i]))) ++i;
    if (i > start) out.emplace_back(message.substr(start, i - start));
  }
  return out;
}

bool is_variable(std::string_view token) {
  return is_integer(token) || is_hex(token) || is_ipv4(token) || token.find('/') != std::string_view::npos;
}

std::vector<std::string> mask_variables(std::vector<std::string> tokens) {
  for (auto& t : tokens)
    if (is_variable(t)) t = std::string(kVariableToken);
  return tokens;
}

LogRecord parse_labeled_line(std::string_view line, Format format, std::size_t line_no) {
  if (is_blank(line)) throw MalformedLine("empty line " + std::to_string(line_no));
  LogRecord rec;
  rec.line_no = line_no;
  rec.raw = std::string(line);

  if (format == Format::BglStyle) {
    auto fields = tokenize(line);
    if (fields.size() < 2) throw MalformedLine("line " + std::to_string(line_no) + ": no message after tag");
    rec.label = fields[0] == "-" ? 0 : 1;
    std::size_t first = 1;
    if (auto ts = parse_epoch(fields[1]); ts && fields.size() > 2) {
      rec.timestamp = ts;
      first = 2;
    }
    fields.erase(fields.begin(), fields.begin() + static_cast<std::ptrdiff_t>(first));
    rec.tokens = mask_variables(std::move(fields));
    return rec;
  }

  const auto c1 = line.find(',');
  const auto c2 = c1 == std::string_view::npos ? c1 : line.find(',', c1 + 1);
  if (c2 == std::string_view::npos) throw MalformedLine("line " + std::to_string(line_no) + ": expected label,timestamp,message");
  const std::string_view label = trim(line.substr(0, c1));
  const std::string_view ts = trim(line.substr(c1 + 1, c2 - c1 - 1));
  if (label == "0") {
    rec.label = 0;
  } else if (label == "1") {
    rec.label = 1;
  } else {
    throw MalformedLine("line " + std::to_string(line_no) + ": label must be 0 or 1");
  }
  if (!ts.empty()) {
    rec.timestamp = parse_epoch(ts);
    if (!rec.timestamp) throw MalformedLine("line " + std::to_string(line_no) + ": bad timestamp");
  }
  rec.tokens = mask_variables(tokenize(line.substr(c2 + 1)));
  if (rec.tokens.empty()) throw MalformedLine("line " + std::to_string(line_no) + ": empty message");
  return rec;
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

InstanceEmbedding embed_tokens(std::span<const std::string> tokens, int d, std::uint64_t seed) {
  if (d < 2) throw InvalidDimension("embedding dimension must be >= 2, got " + std::to_string(d));
  std::vector<double> acc(static_cast<std::size_t>(d), 0.0);
  for (const auto& t : tokens) {
    const std::uint64_t h1 = fnv1a(t, kFnvOffset ^ seed);
    const std::uint64_t h2 = fnv1a(t, kFnvOffset ^ seed ^ kSignSalt);
    acc[h1 % static_cast<std::uint64_t>(d)] += (h2 >> 63) ? -1.0 : 1.0;
  }
  double ss = 0.0;
  for (double v : acc) ss += v * v;
  InstanceEmbedding out{std::vector<float>(static_cast<std::size_t>(d), 0.0f), d};
  // Colliding tokens with opposite signs can cancel to zero; that row stays zero.
  if (ss > 0.0) {
    const double inv = 1.0 / std::sqrt(ss);
    for (int i = 0; i < d; ++i) out.vector[i] = static_cast<float>(acc[i] * inv);
  }
  return out;
}

std::string TemplateTable::key(const std::vector<std::string>& tokens) {
  std::string k;
  for (const auto& t : tokens) {
    k += t;
    k += '\x1f';
  }
  return k;
}

const Template& TemplateTable::extract(const std::vector<std::string>& masked_tokens) {
  auto [it, inserted] = index_.try_emplace(key(masked_tokens), templates_.size());
  if (inserted) templates_.push_back(Template{it->second, masked_tokens});
  return templates_[it->second];
}

Template extract_template(const std::vector<std::string>& masked_tokens, TemplateTable& table) {
  return table.extract(masked_tokens);
}

namespace {

struct ChunkOutput {
  std::vector<LogRecord> records;
  std::vector<std::vector<float>> rows;
  std::size_t blank = 0;
  std::size_t malformed = 0;
};

ChunkOutput process_chunk(std::span<const std::string> lines, std::size_t first_line_no, const IngestOptions& opts) {
  ChunkOutput out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string& line = lines[i];
    const std::size_t line_no = first_line_no + i;
    if (is_blank(line)) {
      ++out.blank;
      continue;
    }
    // Header row of a CSV file.
    if (opts.format == Format::CsvLabeled && line_no == 1 && trim(line).starts_with("label,")) continue;
    try {
      LogRecord rec = parse_labeled_line(line, opts.format, line_no);
      out.rows.push_back(embed_tokens(rec.tokens, opts.d, opts.hash_seed).vector);
      out.records.push_back(std::move(rec));
    } catch (const MalformedLine&) {
      ++out.malformed;
    }
  }
  return out;
}

IngestResult merge(std::vector<ChunkOutput>& chunks, int d) {
  IngestResult res;
  std::size_t n = 0;
  for (const auto& c : chunks) n += c.records.size();
  res.embeddings = Mat<float>(static_cast<int>(n), d);
  res.records.reserve(n);
  std::size_t row = 0;
  for (auto& c : chunks) {
    res.blank_lines += c.blank;
    res.malformed_lines += c.malformed;
    for (std::size_t i = 0; i < c.records.size(); ++i, ++row) {
      std::copy(c.rows[i].begin(), c.rows[i].end(), res.embeddings.row(static_cast<int>(row)).begin());
      res.labels.push_back(static_cast<unsigned char>(c.records[i].label));
      res.template_ids.push_back(res.templates.extract(c.records[i].tokens).template_id);
      res.records.push_back(std::move(c.records[i]));
    }
  }
  return res;
}

}  // namespace

IngestResult ingest_lines(std::span<const std::string> lines, const IngestOptions& opts) {
  std::vector<ChunkOutput> chunks;
  chunks.push_back(process_chunk(lines, 1, opts));
  return merge(chunks, opts.d);
}

IngestResult ingest_lines_parallel(std::span<const std::string> lines, const IngestOptions& opts, int chunks) {
  chunks = std::max(1, chunks);
  const std::size_t per = (lines.size() + chunks - 1) / static_cast<std::size_t>(chunks);
  std::vector<ChunkOutput> outputs(static_cast<std::size_t>(chunks));
  std::vector<std::thread> workers;
  for (int c = 0; c < chunks; ++c) {
    const std::size_t begin = std::min(lines.size(), per * c);
    const std::size_t end = std::min(lines.size(), begin + per);
    workers.emplace_back([&, c, begin, end] { outputs[c] = process_chunk(lines.subspan(begin, end - begin), begin + 1, opts); });
  }
  for (auto& w : workers) w.join();
  return merge(outputs, opts.d);
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

IngestResult ingest_file(const std::filesystem::path& path, const IngestOptions& opts) {
  const auto lines = read_lines(path);
  return ingest_lines(lines, opts);
}

namespace {
std::filesystem::path with_suffix(const std::filesystem::path& prefix, const char* suffix) {
  return std::filesystem::path(prefix.string() + suffix);
}
}  // namespace

void write_embeddings(const std::filesystem::path& prefix, const EmbeddingSet& set) {
  if (set.labels.size() != static_cast<std::size_t>(set.embeddings.rows))
    throw FormatError("label count does not match embedding rows");
  {
    std::ofstream meta(with_suffix(prefix, ".meta"));
    if (!meta) throw MissingArtifact("cannot write " + with_suffix(prefix, ".meta").string());
    meta << "version=1\ncount=" << set.embeddings.rows << "\nd=" << set.embeddings.cols << '\n';
  }
  {
    std::ofstream raw(with_suffix(prefix, ".f32"), std::ios::binary);
    io::write_f32le(raw, set.embeddings.data);
  }
  std::ofstream labels(with_suffix(prefix, ".labels"));
  for (auto l : set.labels) labels << static_cast<int>(l) << '\n';
}

EmbeddingSet read_embeddings(const std::filesystem::path& prefix) {
  std::ifstream meta(with_suffix(prefix, ".meta"));
  if (!meta) throw MissingArtifact("cannot open " + with_suffix(prefix, ".meta").string());
  io::Header h;
  std::string line;
  while (std::getline(meta, line)) {
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("bad metadata line: " + line);
    h[std::string(trim(line.substr(0, eq)))] = std::string(trim(std::string_view(line).substr(eq + 1)));
  }
  if (io::header_int(h, "version") != 1) throw FormatError("unsupported embedding metadata version");
  const auto count = io::header_int(h, "count");
  const auto d = io::header_int(h, "d");
  if (count < 0 || d < 2) throw FormatError("bad embedding metadata shape");

  EmbeddingSet set;
  set.embeddings = Mat<float>(static_cast<int>(count), static_cast<int>(d));
  std::ifstream raw(with_suffix(prefix, ".f32"), std::ios::binary);
  if (!raw) throw MissingArtifact("cannot open " + with_suffix(prefix, ".f32").string());
  io::read_f32le(raw, set.embeddings.data);
  if (raw.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes in float32 payload");

  for (const auto& l : read_lines(with_suffix(prefix, ".labels"))) {
    if (trim(l).empty()) continue;
    if (trim(l) != "0" && trim(l) != "1") throw FormatError("label must be 0 or 1: " + l);
    set.labels.push_back(trim(l) == "1" ? 1 : 0);
  }
  if (set.labels.size() != static_cast<std::size_t>(count)) throw FormatError("label count does not match metadata");
  return set;
}

}  // namespace logmilp::ingest
