#pragma once

// Little-endian encode/decode helpers shared by the binary file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "slm/errors.hpp"

namespace slm::detail {

class ByteWriter {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f32s(std::span<const float> v) {
    buf_.reserve(buf_.size() + 4 * v.size());
    for (float x : v) f32(x);
  }
  const std::vector<char>& buffer() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  ByteReader(std::istream& in, std::string what) : in_(in), what_(std::move(what)) {}

  void bytes(void* out, std::size_t n) {
    in_.read(static_cast<char*>(out), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw LengthError(what_ + ": truncated file (expected " + std::to_string(n) +
                        " more bytes at offset " + std::to_string(offset_) + ")");
    }
    offset_ += n;
  }
  std::uint32_t u32() {
    unsigned char b[4];
    bytes(b, 4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }
  std::uint64_t u64() {
    unsigned char b[8];
    bytes(b, 8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  void f32s(std::span<float> out) {
    std::vector<unsigned char> raw(out.size() * 4);
    bytes(raw.data(), raw.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      const unsigned char* b = raw.data() + 4 * i;
      const std::uint32_t v = std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
                              (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
      out[i] = std::bit_cast<float>(v);
    }
  }
  /// True when the stream has no bytes left.
  bool at_end() {
    return in_.peek() == std::char_traits<char>::eof();
  }
  std::uint64_t offset() const { return offset_; }

 private:
  std::istream& in_;
  std::string what_;
  std::uint64_t offset_ = 0;
};

void write_file_bytes(const std::string& path, const std::vector<char>& bytes);

}  // namespace slm::detail
