#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "logmilp/errors.hpp"

namespace logmilp::io {

/// Writes IEEE-754 binary32 values in little-endian byte order.
inline void write_f32le(std::ostream& os, std::span<const float> values) {
  std::vector<char> buf(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) buf[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xFFu);
  }
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

inline void read_f32le(std::istream& is, std::span<float> out) {
  std::vector<unsigned char> buf(out.size() * 4);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(is.gcount()) != buf.size()) throw FormatError("truncated float32 payload");
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(buf[i * 4 + b]) << (8 * b);
    out[i] = std::bit_cast<float>(bits);
  }
}

/// Ordered key=value header block. Lines are `key=value`; a blank line or `end`
/// terminates the block when reading from a stream that continues with binary data.
using Header = std::map<std::string, std::string>;

inline void write_header(std::ostream& os, const std::vector<std::pair<std::string, std::string>>& kv) {
  for (const auto& [k, v] : kv) os << k << '=' << v << '\n';
  os << "end\n";
}

inline Header read_header(std::istream& is) {
  Header h;
  std::string line;
  while (std::getline(is, line)) {
    if (line == "end") return h;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("header line without '=': " + line);
    h[line.substr(0, eq)] = line.substr(eq + 1);
  }
  throw FormatError("header not terminated");
}

inline long long header_int(const Header& h, const std::string& key) {
  const auto it = h.find(key);
  if (it == h.end()) throw FormatError("header missing key: " + key);
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(it->second, &pos);
    if (pos != it->second.size()) throw FormatError("bad integer for " + key);
    return v;
  } catch (const std::logic_error&) {
    throw FormatError("bad integer for " + key);
  }
}

}  // namespace logmilp::io
