// SPDX-FileCopyrightText: (c) 2026 dflow authors
// SPDX-License-Identifier: Apache-2.0

// Little-endian byte streams shared by the dataset cache and checkpoints.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace dflow::binio {

class Writer {
 public:
  template <class U>
  void put(U v) {
    static_assert(std::is_integral_v<U>);
    using UU = std::make_unsigned_t<U>;
    UU u = static_cast<UU>(v);
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      buf_.push_back(static_cast<char>(u & 0xFFu));
      if constexpr (sizeof(U) > 1) u = static_cast<UU>(u >> 8);
    }
  }
  void put_f32(float f) { put(std::bit_cast<std::uint32_t>(f)); }
  void put_bytes(const void* p, std::size_t n) {
    const char* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    put_bytes(s.data(), s.size());
  }
  const std::vector<char>& bytes() const { return buf_; }

 private:
  std::vector<char> buf_;
};

struct Truncated : std::runtime_error {
  Truncated() : std::runtime_error("unexpected end of data") {}
};

class Reader {
 public:
  explicit Reader(const std::vector<char>& buf) : buf_(buf) {}

  template <class U>
  U get() {
    static_assert(std::is_integral_v<U>);
    need(sizeof(U));
    using UU = std::make_unsigned_t<U>;
    UU u = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      u = static_cast<UU>(u | (static_cast<UU>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i)));
    }
    pos_ += sizeof(U);
    return static_cast<U>(u);
  }
  float get_f32() { return std::bit_cast<float>(get<std::uint32_t>()); }
  void get_bytes(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw Truncated();
  }
  const std::vector<char>& buf_;
  std::size_t pos_ = 0;
};

inline std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace dflow::binio
