#pragma once

// Little-endian primitives for the on-disk formats.

#include <array>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "ltsrepr/common.hpp"

namespace ltsrepr::binio {

inline void write_u32(std::ostream& out, std::uint32_t v) {
  std::array<char, 4> b{};
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b.data(), 4);
}

inline void write_f32(std::ostream& out, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, sizeof v);
  write_u32(out, v);
}

inline void write_magic(std::ostream& out, std::string_view magic) {
  out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

inline std::uint32_t read_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  in.read(reinterpret_cast<char*>(b.data()), 4);
  require(in.gcount() == 4, ErrorCode::kFormat, "unexpected end of file");
  return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) |
         (std::uint32_t{b[2]} << 16) | (std::uint32_t{b[3]} << 24);
}

inline float read_f32(std::istream& in) {
  const std::uint32_t v = read_u32(in);
  float f;
  std::memcpy(&f, &v, sizeof f);
  return f;
}

inline std::string read_bytes(std::istream& in, std::size_t n) {
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  require(static_cast<std::size_t>(in.gcount()) == n, ErrorCode::kFormat,
          "unexpected end of file");
  return s;
}

inline void expect_magic(std::istream& in, std::string_view magic) {
  const std::string got = read_bytes(in, magic.size());
  require(got == magic, ErrorCode::kFormat,
          "bad magic: expected " + std::string(magic));
}

}  // namespace ltsrepr::binio
