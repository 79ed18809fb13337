#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "iln/errors.hpp"
#include "iln/range_core.hpp"

/**
 * \file
 * \brief Little-endian binary helpers, the range-image file format and
 * key=value text files.
 *
 * Range-image file layout:
 *
 *     "ILNR" | u32 version=1 | u32 H | u32 W |
 *     f32 v_min | f32 v_max | f32 h_min | f32 h_max | f32 r_max |
 *     H*W f32 depths, row-major
 */

namespace iln {

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

inline constexpr char kRangeImageMagic[4] = {'I', 'L', 'N', 'R'};
inline constexpr std::uint32_t kRangeImageVersion = 1;

/// Append-only little-endian byte sink.
class ByteWriter {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    buffer_.insert(buffer_.end(), p, p + n);
  }
  void u32(std::uint32_t v) { bytes(&v, sizeof v); }
  void f32(float v) { bytes(&v, sizeof v); }

  [[nodiscard]] const std::vector<unsigned char>& buffer() const noexcept { return buffer_; }

 private:
  std::vector<unsigned char> buffer_;
};

/// Bounds-checked reader; every failure reports the byte offset.
class ByteReader {
 public:
  explicit ByteReader(std::vector<unsigned char> data) : data_(std::move(data)) {}

  void bytes(void* out, std::size_t n, const char* what) {
    if (data_.size() - pos_ < n) {
      throw FormatError(std::string("truncated file while reading ") + what + ": need " + std::to_string(n) +
                            " bytes, " + std::to_string(data_.size() - pos_) + " left",
                        pos_);
    }
    std::memcpy(out, data_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32(const char* what) {
    std::uint32_t v = 0;
    bytes(&v, sizeof v, what);
    return v;
  }
  float f32(const char* what) {
    float v = 0;
    bytes(&v, sizeof v, what);
    return v;
  }
  void expect_magic(const char (&magic)[4]) {
    char got[4];
    const std::size_t at = pos_;
    bytes(got, 4, "magic");
    if (std::memcmp(got, magic, 4) != 0) {
      throw FormatError("bad magic: expected '" + std::string(magic, 4) + "', found '" + std::string(got, 4) + "'",
                        at);
    }
  }

  [[nodiscard]] std::size_t offset() const noexcept { return pos_; }
  [[nodiscard]] bool at_end() const noexcept { return pos_ == data_.size(); }

 private:
  std::vector<unsigned char> data_;
  std::size_t pos_ = 0;
};

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::vector<unsigned char>(text.begin(), text.end()));
}

[[nodiscard]] inline std::vector<unsigned char> encode_range_image(const RangeImage& img) {
  ByteWriter w;
  w.bytes(kRangeImageMagic, 4);
  w.u32(kRangeImageVersion);
  w.u32(static_cast<std::uint32_t>(img.rows()));
  w.u32(static_cast<std::uint32_t>(img.cols()));
  const SensorSpec& s = img.spec();
  for (const double v : {s.v_min, s.v_max, s.h_min, s.h_max, s.r_max}) w.f32(static_cast<float>(v));
  w.bytes(img.depths().data(), img.depths().size() * sizeof(float));
  return w.buffer();
}

[[nodiscard]] inline RangeImage decode_range_image(std::vector<unsigned char> bytes) {
  ByteReader r(std::move(bytes));
  r.expect_magic(kRangeImageMagic);
  const std::size_t version_at = r.offset();
  if (const auto version = r.u32("version"); version != kRangeImageVersion) {
    throw FormatError("unsupported range image version " + std::to_string(version), version_at);
  }
  const std::size_t dims_at = r.offset();
  const std::uint32_t rows = r.u32("rows");
  const std::uint32_t cols = r.u32("cols");
  if (rows == 0 || cols == 0) throw FormatError("zero image dimension", dims_at);
  SensorSpec spec;
  spec.v_min = r.f32("v_min");
  spec.v_max = r.f32("v_max");
  spec.h_min = r.f32("h_min");
  spec.h_max = r.f32("h_max");
  spec.r_max = r.f32("r_max");
  std::vector<float> depths(static_cast<std::size_t>(rows) * cols);
  r.bytes(depths.data(), depths.size() * sizeof(float), "depths");
  if (!r.at_end()) throw FormatError("trailing bytes after depth payload", r.offset());
  try {
    return {spec, rows, cols, std::move(depths)};
  } catch (const Error& e) {
    throw FormatError(std::string("invalid range image content: ") + e.what(), dims_at);
  }
}

inline void write_range_image(const std::filesystem::path& path, const RangeImage& img) {
  write_file(path, encode_range_image(img));
}

[[nodiscard]] inline RangeImage read_range_image(const std::filesystem::path& path) {
  try {
    return decode_range_image(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.offset());
  }
}

/// ASCII PLY with float x, y, z vertices.
[[nodiscard]] inline std::string encode_ply(const PointCloud& points) {
  std::string out = "ply\nformat ascii 1.0\nelement vertex " + std::to_string(points.size()) +
                    "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
  char buf[96];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof buf, "%.6f %.6f %.6f\n", p.x, p.y, p.z);
    out += buf;
  }
  return out;
}

/// Ordered key=value pairs. Blank lines and lines starting with '#' are ignored.
using KeyValues = std::map<std::string, std::string>;

[[nodiscard]] inline std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

[[nodiscard]] inline KeyValues parse_key_values(const std::string& text, const std::string& origin = "<text>") {
  KeyValues out;
  std::istringstream in(text);
  std::string line;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    const std::size_t line_start = offset;
    offset += line.size() + 1;
    const std::string body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw FormatError(origin + ": expected key=value, got '" + body + "'", line_start);
    std::string key = trim(std::string_view(body).substr(0, eq));
    if (key.empty()) throw FormatError(origin + ": empty key", line_start);
    if (out.contains(key)) throw FormatError(origin + ": duplicate key '" + key + "'", line_start);
    out.emplace(std::move(key), trim(std::string_view(body).substr(eq + 1)));
  }
  return out;
}

[[nodiscard]] inline KeyValues read_key_values(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return parse_key_values(std::string(bytes.begin(), bytes.end()), path.string());
}

[[nodiscard]] inline std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

[[nodiscard]] inline std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

/// Shortest decimal text that parses back to the same double.
[[nodiscard]] inline std::string format_double(double v) {
  char buf[32];
  for (int precision = 1; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

[[nodiscard]] inline double parse_double(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw ConfigError("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("value of '" + key + "' is not a number: '" + text + "'");
  }
}

[[nodiscard]] inline std::uint64_t parse_uint(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    if (!text.empty() && text.front() == '-') throw ConfigError("");
    const auto v = std::stoull(text, &used);
    if (used != text.size()) throw ConfigError("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("value of '" + key + "' is not a non-negative integer: '" + text + "'");
  }
}

}  // namespace iln
