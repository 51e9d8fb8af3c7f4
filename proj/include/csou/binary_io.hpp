#pragma once

// Little-endian primitives for the on-disk formats.

#include <array>
#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>

namespace csou::le {

template <typename U>
void put_uint(std::ostream& out, U v) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  }
  out.write(bytes.data(), bytes.size());
}

inline void put_u16(std::ostream& out, std::uint16_t v) { put_uint(out, v); }
inline void put_u32(std::ostream& out, std::uint32_t v) { put_uint(out, v); }
inline void put_f32(std::ostream& out, float v) { put_uint(out, std::bit_cast<std::uint32_t>(v)); }

// Returns false on short read.
template <typename U>
bool get_uint(std::istream& in, U& v) {
  std::array<unsigned char, sizeof(U)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) return false;
  v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[i]) << (8 * i);
  return true;
}

inline bool get_u16(std::istream& in, std::uint16_t& v) { return get_uint(in, v); }
inline bool get_u32(std::istream& in, std::uint32_t& v) { return get_uint(in, v); }
inline bool get_f32(std::istream& in, float& v) {
  std::uint32_t bits = 0;
  if (!get_uint(in, bits)) return false;
  v = std::bit_cast<float>(bits);
  return true;
}

}  // namespace csou::le
