#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "saelab/error.hpp"

namespace saelab::io {

static_assert(std::endian::native == std::endian::little ||
                  std::endian::native == std::endian::big,
              "mixed-endian platforms are not supported");

template <typename T>
T to_little(T value) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  } else {
    return value;
  }
}

// Appends little-endian scalars to an in-memory buffer; flushed in one write
// so identical inputs always produce identical bytes.
inline void write_file(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::IoError, "short write to '" + path + "'");
}

class Writer {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }

  template <typename T>
  void scalar(T value) {
    static_assert(std::is_arithmetic_v<T>);
    const T le = to_little(value);
    bytes(&le, sizeof(T));
  }

  void u8(std::uint8_t v) { scalar(v); }
  void u32(std::uint32_t v) { scalar(v); }
  void u64(std::uint64_t v) { scalar(v); }
  void f32(float v) { scalar(v); }
  void f64(double v) { scalar(v); }

  void magic(std::string_view tag) { bytes(tag.data(), tag.size()); }

  // UTF-8 string with a 32-bit length prefix.
  void string(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

  template <typename T>
  void array(std::span<const T> values) {
    if constexpr (std::endian::native == std::endian::little) {
      bytes(values.data(), values.size_bytes());
    } else {
      for (T v : values) scalar(v);
    }
  }

  const std::vector<unsigned char>& buffer() const { return buf_; }

  void save(const std::string& path) const { write_file(path, buf_); }

 private:
  std::vector<unsigned char> buf_;
};

// Bounds-checked cursor over a fully loaded file. Running past the end is
// reported as CorruptFile.
class Reader {
 public:
  explicit Reader(std::vector<unsigned char> data, std::string origin = {})
      : data_(std::move(data)), origin_(std::move(origin)) {}

  static Reader from_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::IoError, "cannot open '" + path + "'");
    std::vector<unsigned char> data((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return Reader(std::move(data), path);
  }

  void bytes(void* out, std::size_t n) {
    require(n);
    std::memcpy(out, data_.data() + pos_, n);
    pos_ += n;
  }

  template <typename T>
  T scalar() {
    T value;
    bytes(&value, sizeof(T));
    return to_little(value);
  }

  std::uint8_t u8() { return scalar<std::uint8_t>(); }
  std::uint32_t u32() { return scalar<std::uint32_t>(); }
  std::uint64_t u64() { return scalar<std::uint64_t>(); }
  float f32() { return scalar<float>(); }
  double f64() { return scalar<double>(); }

  // Returns false if the next bytes differ from `tag`; does not consume them.
  bool has_magic(std::string_view tag) const {
    return remaining() >= tag.size() &&
           std::memcmp(data_.data() + pos_, tag.data(), tag.size()) == 0;
  }

  void expect_magic(std::string_view tag) {
    if (!has_magic(tag)) {
      fail(ErrorCode::FormatError,
           "bad magic in '" + origin_ + "', expected " + std::string(tag));
    }
    pos_ += tag.size();
  }

  std::string string() {
    const std::uint32_t n = u32();
    require(n);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  template <typename T>
  void array(std::span<T> out) {
    require(out.size_bytes());
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(out.data(), data_.data() + pos_, out.size_bytes());
      pos_ += out.size_bytes();
    } else {
      for (T& v : out) v = scalar<T>();
    }
  }

  std::size_t remaining() const { return data_.size() - pos_; }
  bool at_end() const { return pos_ == data_.size(); }

  // Guards element counts read from headers before allocating for them.
  void require(std::size_t n) const {
    if (n > remaining()) {
      fail(ErrorCode::CorruptFile, "truncated data in '" + origin_ + "'");
    }
  }

 private:
  std::vector<unsigned char> data_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace saelab::io
