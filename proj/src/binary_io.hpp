#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "hesscope/errors.hpp"

namespace hesscope::io {

inline std::vector<uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(in), {});
}

/// Bounds-checked cursor over a byte buffer.
class Reader {
 public:
  Reader(const std::vector<uint8_t>& bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  void need(size_t n) const {
    if (pos_ + n > bytes_.size()) {
      throw TruncatedFile(what_ + ": expected " + std::to_string(n) + " more bytes at offset " + std::to_string(pos_) +
                          ", file has " + std::to_string(bytes_.size()));
    }
  }
  uint32_t u32_be() {
    need(4);
    const uint8_t* p = bytes_.data() + pos_;
    pos_ += 4;
    return (uint32_t{p[0]} << 24) | (uint32_t{p[1]} << 16) | (uint32_t{p[2]} << 8) | uint32_t{p[3]};
  }
  template <typename U>
  U le() {
    need(sizeof(U));
    U v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(U));  // little-endian host
    pos_ += sizeof(U);
    return v;
  }
  const uint8_t* take(size_t n) {
    need(n);
    const uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  size_t pos() const { return pos_; }
  size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::vector<uint8_t>& bytes_;
  std::string what_;
  size_t pos_ = 0;
};

class Writer {
 public:
  template <typename U>
  void le(U v) {
    const auto* p = reinterpret_cast<const uint8_t*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(U));
  }
  void raw(const void* data, size_t n) {
    const auto* p = static_cast<const uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  const std::vector<uint8_t>& bytes() const { return bytes_; }

 private:
  std::vector<uint8_t> bytes_;
};

/// Writes to a sibling temp file and renames it into place.
void write_atomic(const std::filesystem::path& path, const void* data, size_t size);
inline void write_atomic(const std::filesystem::path& path, const std::string& text) {
  write_atomic(path, text.data(), text.size());
}
inline void write_atomic(const std::filesystem::path& path, const std::vector<uint8_t>& bytes) {
  write_atomic(path, bytes.data(), bytes.size());
}

}  // namespace hesscope::io
