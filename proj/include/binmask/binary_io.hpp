// Copyright 2026 The binmask Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

// Little-endian record helpers shared by the mask, feature and model files.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "binmask/audio_io.hpp"
#include "binmask/error.hpp"

namespace binmask {

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[std::size_t(i)] = digits[v & 0xf];
  return s;
}

class ByteWriter {
 public:
  template <class T>
  ByteWriter& put(T v) {
    detail::put<T>(buf_, v);
    return *this;
  }
  ByteWriter& raw(std::string_view s) {
    buf_.append(s);
    return *this;
  }
  const std::string& bytes() const { return buf_; }
  void save(const std::filesystem::path& path) const { detail::write_bytes(path, buf_); }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(std::vector<unsigned char> bytes, std::string name)
      : bytes_(std::move(bytes)), name_(std::move(name)) {}

  static ByteReader open(const std::filesystem::path& path) {
    return ByteReader(detail::slurp(path), path.string());
  }

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string raw(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  void expect_magic(std::string_view magic) {
    if (bytes_.size() < magic.size() || raw(magic.size()) != magic)
      throw FormatError(name_ + ": bad magic, expected " + std::string(magic));
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }
  const std::string& name() const { return name_; }

  void expect_end() const {
    if (pos_ != bytes_.size()) throw FormatError(name_ + ": trailing bytes after payload");
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError(name_ + ": truncated file");
  }

  std::vector<unsigned char> bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

}  // namespace binmask
