#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bass/error.hpp"

namespace bass::io {

// Little-endian encoding is done byte-by-byte so files are identical on any host.
template <typename U>
inline void put_le(std::string& out, U value) {
  static_assert(std::is_unsigned_v<U>);
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xFFu));
  }
}

inline void put_f64(std::string& out, double v) { put_le(out, std::bit_cast<std::uint64_t>(v)); }
inline void put_f32(std::string& out, float v) { put_le(out, std::bit_cast<std::uint32_t>(v)); }

// Bounds-checked cursor over an in-memory byte buffer.
class Reader {
 public:
  Reader(std::string_view bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

  template <typename U>
  U get_le() {
    static_assert(std::is_unsigned_v<U>);
    need(sizeof(U));
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      value |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return value;
  }

  double get_f64() { return std::bit_cast<double>(get_le<std::uint64_t>()); }
  float get_f32() { return std::bit_cast<float>(get_le<std::uint32_t>()); }

  std::string_view get_bytes(std::size_t n) {
    need(n);
    auto view = bytes_.substr(pos_, n);
    pos_ += n;
    return view;
  }

  // Reads up to (and consumes) the next '\n'.
  std::string_view get_line() {
    auto end = bytes_.find('\n', pos_);
    if (end == std::string_view::npos) fail(ErrorKind::data, source_ + ": missing header line terminator");
    auto line = bytes_.substr(pos_, end - pos_);
    pos_ = end + 1;
    return line;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      fail(ErrorKind::data, source_ + ": truncated (needed " + std::to_string(n) + " more bytes at offset " +
                                std::to_string(pos_) + ")");
    }
  }

  std::string_view bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::data, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

// Writes to a sibling temp file and renames over the target, so readers never see partial output.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::data, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::data, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::data, "cannot rename " + tmp.string() + " -> " + path.string() + ": " + ec.message());
}

}  // namespace bass::io
