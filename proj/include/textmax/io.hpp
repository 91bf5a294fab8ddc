#pragma once

// Shared plumbing for the text-header + binary-payload files.

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <zlib.h>

#include "textmax/errors.hpp"
#include "textmax/tensor.hpp"

namespace textmax::io {

inline std::uint32_t crc32(std::span<const unsigned char> bytes) {
  uLong c = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    c = ::crc32(c, bytes.data() + off, n);
    off += n;
  }
  return static_cast<std::uint32_t>(c);
}

/// Little-endian encoding of 32-bit reals.
inline std::vector<unsigned char> encode_f32(std::span<const float> values) {
  std::vector<unsigned char> out(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto u = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) out[i * 4 + b] = static_cast<unsigned char>(u >> (8 * b));
  }
  return out;
}

inline std::vector<float> decode_f32(std::span<const unsigned char> bytes) {
  std::vector<float> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= std::uint32_t(bytes[i * 4 + b]) << (8 * b);
    out[i] = std::bit_cast<float>(u);
  }
  return out;
}

inline std::vector<unsigned char> encode_u32(std::span<const std::uint32_t> values) {
  std::vector<unsigned char> out(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i)
    for (int b = 0; b < 4; ++b) out[i * 4 + b] = static_cast<unsigned char>(values[i] >> (8 * b));
  return out;
}

inline std::vector<std::uint32_t> decode_u32(std::span<const unsigned char> bytes) {
  std::vector<std::uint32_t> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i)
    for (int b = 0; b < 4; ++b) out[i] |= std::uint32_t(bytes[i * 4 + b]) << (8 * b);
  return out;
}

inline std::string hex32(std::uint32_t v) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline Shape parse_shape(std::string_view s) {
  Shape out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    auto comma = s.find(',', pos);
    if (comma == std::string_view::npos) comma = s.size();
    std::size_t v = 0;
    auto part = s.substr(pos, comma - pos);
    auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
    if (ec != std::errc() || p != part.data() + part.size()) {
      throw FormatError(FormatError::Kind::kMalformed, "shape", "bad shape '" + std::string(s) + "'");
    }
    out.push_back(v);
    pos = comma + 1;
  }
  return out;
}

inline std::string format_shape(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out;
}

inline std::size_t parse_size(std::string_view s, std::string_view field) {
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw FormatError(FormatError::Kind::kMalformed, std::string(field),
                      "field '" + std::string(field) + "' is not an unsigned integer: '" +
                          std::string(s) + "'");
  }
  return v;
}

inline double parse_real(std::string_view s, std::string_view field) {
  try {
    std::size_t used = 0;
    double v = std::stod(std::string(s), &used);
    if (used != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw FormatError(FormatError::Kind::kMalformed, std::string(field),
                      "field '" + std::string(field) + "' is not a number: '" + std::string(s) + "'");
  }
}

/// Flat key=value lines. Keys may repeat only when collected by the caller.
class KeyValues {
 public:
  void set(std::string key, std::string value) { values_[std::move(key)] = std::move(value); }
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) {
      throw FormatError(FormatError::Kind::kMalformed, key, "missing header field '" + key + "'");
    }
    return it->second;
  }
  std::size_t get_size(const std::string& key) const { return parse_size(get(key), key); }
  double get_real(const std::string& key) const { return parse_real(get(key), key); }

 private:
  std::map<std::string, std::string> values_;
};

/// Reads a whole stream as bytes.
inline std::vector<unsigned char> read_rest(std::istream& in) {
  std::vector<unsigned char> out;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    out.insert(out.end(), buf, buf + in.gcount());
  }
  return out;
}

}  // namespace textmax::io
