#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <zlib.h>

#include "weightscape/error.hpp"

namespace weightscape {

namespace detail {

inline void put_be32(std::string& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) {
    out.push_back(static_cast<char>((v >> shift) & 0xff));
  }
}

inline void put_png_chunk(std::string& out, std::string_view type, std::string_view body) {
  put_be32(out, static_cast<std::uint32_t>(body.size()));
  const std::size_t crc_start = out.size();
  out.append(type);
  out.append(body);
  const auto* bytes = reinterpret_cast<const Bytef*>(out.data() + crc_start);
  put_be32(out, static_cast<std::uint32_t>(crc32(0L, bytes, static_cast<uInt>(out.size() - crc_start))));
}

}  // namespace detail

/// Encodes 8-bit RGB pixels (row-major, interleaved) as a PNG. No filtering,
/// fixed zlib level and no timestamps, so equal pixels give equal bytes.
inline std::string encode_png(std::size_t width, std::size_t height,
                              std::span<const std::uint8_t> rgb) {
  if (rgb.size() != width * height * 3) throw Error("png: pixel buffer size mismatch");
  std::string raw;
  raw.reserve(height * (width * 3 + 1));
  for (std::size_t y = 0; y < height; ++y) {
    raw.push_back('\0');  // filter type None
    raw.append(reinterpret_cast<const char*>(rgb.data() + y * width * 3), width * 3);
  }
  uLongf packed_size = compressBound(static_cast<uLong>(raw.size()));
  std::string packed(packed_size, '\0');
  if (compress2(reinterpret_cast<Bytef*>(packed.data()), &packed_size,
                reinterpret_cast<const Bytef*>(raw.data()), static_cast<uLong>(raw.size()),
                6) != Z_OK) {
    throw Error("png: zlib compression failed");
  }
  packed.resize(packed_size);

  std::string out("\x89PNG\r\n\x1a\n", 8);
  std::string header;
  detail::put_be32(header, static_cast<std::uint32_t>(width));
  detail::put_be32(header, static_cast<std::uint32_t>(height));
  header += std::string("\x08\x02\x00\x00\x00", 5);  // depth 8, RGB, deflate, no filter, no interlace
  detail::put_png_chunk(out, "IHDR", header);
  detail::put_png_chunk(out, "IDAT", packed);
  detail::put_png_chunk(out, "IEND", "");
  return out;
}

}  // namespace weightscape
