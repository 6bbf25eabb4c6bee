#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "errors.hpp"

namespace uniprofile::io {

template <typename T>
T byteswap_if_big(T v) {
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

class LeWriter {
 public:
  explicit LeWriter(std::ostream& out) : out_(out) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T v) {
    v = byteswap_if_big(v);
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }

  void put_bytes(const void* data, std::size_t n) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  }

  // u32 length prefix + bytes.
  void put_string(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    put_bytes(s.data(), s.size());
  }

  void put_floats(const float* data, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
      put_bytes(data, n * sizeof(float));
    } else {
      for (std::size_t i = 0; i < n; ++i) put(data[i]);
    }
  }

  bool ok() const { return static_cast<bool>(out_); }

 private:
  std::ostream& out_;
};

class LeReader {
 public:
  LeReader(std::istream& in, std::string what) : in_(in), what_(std::move(what)) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    T v;
    get_bytes(&v, sizeof(T));
    return byteswap_if_big(v);
  }

  void get_bytes(void* data, std::size_t n) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n)
      throw ParseError(what_ + ": unexpected end of file");
  }

  std::string get_string(std::uint32_t max_len = 1u << 30) {
    const auto n = get<std::uint32_t>();
    if (n > max_len) throw ParseError(what_ + ": string length out of range");
    std::string s(n, '\0');
    get_bytes(s.data(), n);
    return s;
  }

  void get_floats(float* data, std::size_t n) {
    get_bytes(data, n * sizeof(float));
    if constexpr (std::endian::native == std::endian::big)
      for (std::size_t i = 0; i < n; ++i) data[i] = byteswap_if_big(data[i]);
  }

  bool at_eof() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  std::istream& in_;
  std::string what_;
};

}  // namespace uniprofile::io
