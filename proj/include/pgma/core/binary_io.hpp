// Copyright (c) 2026, The pgma Authors
// SPDX-License-Identifier: Apache-2.0
//
// Little-endian primitive readers/writers shared by the episode container and
// the checkpoint file.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pgma::io {

class FormatError : public std::runtime_error {
 public:
  enum class Kind { MagicMismatch, UnsupportedVersion, Truncated, UnknownDtype, BadRecord, MissingRecord, Io };

  FormatError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

inline const char* kind_name(FormatError::Kind k) {
  switch (k) {
    case FormatError::Kind::MagicMismatch: return "MagicMismatch";
    case FormatError::Kind::UnsupportedVersion: return "UnsupportedVersion";
    case FormatError::Kind::Truncated: return "Truncated";
    case FormatError::Kind::UnknownDtype: return "UnknownDtype";
    case FormatError::Kind::BadRecord: return "BadRecord";
    case FormatError::Kind::MissingRecord: return "MissingRecord";
    case FormatError::Kind::Io: return "Io";
  }
  return "?";
}

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}

  void bytes(const void* p, std::size_t n) { os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u16(std::uint16_t v) { le(v); }
  void u32(std::uint32_t v) { le(v); }
  void u64(std::uint64_t v) { le(v); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str16(const std::string& s) {
    if (s.size() > 0xFFFF) throw std::invalid_argument("name too long: " + s);
    u16(static_cast<std::uint16_t>(s.size()));
    bytes(s.data(), s.size());
  }

 private:
  template <typename U>
  void le(U v) {
    unsigned char buf[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(buf, sizeof(U));
  }

  std::ostream& os_;
};

class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}

  bool at_eof() { return is_.peek() == std::char_traits<char>::eof(); }

  void bytes(void* p, std::size_t n, const char* what) {
    is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) {
      throw FormatError(FormatError::Kind::Truncated, std::string("truncated while reading ") + what);
    }
  }
  std::uint8_t u8(const char* what) {
    std::uint8_t v;
    bytes(&v, 1, what);
    return v;
  }
  std::uint16_t u16(const char* what) { return le<std::uint16_t>(what); }
  std::uint32_t u32(const char* what) { return le<std::uint32_t>(what); }
  std::uint64_t u64(const char* what) { return le<std::uint64_t>(what); }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  std::string str16(const char* what) {
    const std::uint16_t n = u16(what);
    std::string s(n, '\0');
    bytes(s.data(), n, what);
    return s;
  }

 private:
  template <typename U>
  U le(const char* what) {
    unsigned char buf[sizeof(U)];
    bytes(buf, sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
    return v;
  }

  std::istream& is_;
};

}  // namespace pgma::io
