#pragma once

// Small file helpers shared by the geometry, model and data modules:
// atomic writes, little-endian encoding and 8-bit / 16-bit PGM output.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "eacnet/error.hpp"

namespace eacnet::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

/// Writes `bytes` to `path` via a temporary sibling file and a rename, so an
/// interrupted run never leaves a partially written file behind.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot rename temporary file onto '" + path.string() + "'");
  }
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Append-only little-endian byte sink.
class ByteWriter {
 public:
  template <typename V>
  void put(V v) {
    char raw[sizeof(V)];
    std::memcpy(raw, &v, sizeof(V));
    buf_.append(raw, sizeof(V));
  }
  void put_bytes(std::string_view s) { buf_.append(s); }
  void put_string(std::string_view s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    put_bytes(s);
  }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

/// Bounds-checked little-endian reader. Running past the end throws
/// `Truncated`, supplied by the caller so each format reports its own error.
template <typename Truncated>
class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  template <typename V>
  V get() {
    need(sizeof(V));
    V v;
    std::memcpy(&v, data_.data() + pos_, sizeof(V));
    pos_ += sizeof(V);
    return v;
  }
  std::string_view get_bytes(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string get_string() { return std::string(get_bytes(get<std::uint32_t>())); }
  bool at_end() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw Truncated("unexpected end of data");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

/// Binary PGM (P5). maxval <= 255 stores one byte per pixel, larger maxvals
/// store big-endian 16-bit samples as the format requires.
inline std::string encode_pgm(std::size_t width, std::size_t height, unsigned maxval,
                              std::span<const std::uint16_t> pixels) {
  if (pixels.size() != width * height) throw ShapeError("PGM pixel count does not match size");
  std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n" +
                    std::to_string(maxval) + "\n";
  const bool wide = maxval > 255;
  out.reserve(out.size() + pixels.size() * (wide ? 2 : 1));
  for (std::uint16_t p : pixels) {
    if (wide) {
      out.push_back(static_cast<char>(p >> 8));
      out.push_back(static_cast<char>(p & 0xFF));
    } else {
      out.push_back(static_cast<char>(p));
    }
  }
  return out;
}

}  // namespace eacnet::io
