#pragma once

// Little-endian framing shared by the block and network weight formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "volnet/volume.hpp"

namespace volnet::detail {

using volnet::FormatError;

inline std::uint32_t byteswap32(std::uint32_t v) {
  return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
}

inline void write_u32(std::ostream& out, std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) v = byteswap32(v);
  out.write(reinterpret_cast<const char*>(&v), 4);
}

inline std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 4)) throw FormatError("truncated stream");
  if constexpr (std::endian::native == std::endian::big) v = byteswap32(v);
  return v;
}

inline void write_f32(std::ostream& out, const float* data, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * 4));
  } else {
    for (std::size_t i = 0; i < n; ++i) write_u32(out, std::bit_cast<std::uint32_t>(data[i]));
  }
}

inline void read_f32(std::istream& in, float* data, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    if (!in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * 4))) {
      throw FormatError("truncated weight payload");
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) data[i] = std::bit_cast<float>(read_u32(in));
  }
}

inline void write_framed_header(std::ostream& out, const char (&magic)[9], const nlohmann::json& header) {
  const std::string text = header.dump();
  out.write(magic, 8);
  write_u32(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

inline nlohmann::json read_framed_header(std::istream& in, const char (&magic)[9]) {
  char got[8];
  if (!in.read(got, 8)) throw FormatError("truncated stream: missing magic");
  if (std::memcmp(got, magic, 8) != 0) {
    throw FormatError(std::string("bad magic, expected ") + magic);
  }
  const std::uint32_t len = read_u32(in);
  if (len > (1u << 26)) throw FormatError("header length out of range");
  std::string text(len, '\0');
  if (!in.read(text.data(), len)) throw FormatError("truncated header");
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed header JSON: ") + e.what());
  }
}

}  // namespace volnet::detail
