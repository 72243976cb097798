#pragma once

#include <array>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "streamtopics/errors.hpp"

namespace stm {

/// 8-bit RGB raster, row major.
struct Frame {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<std::array<std::uint8_t, 3>> pixels;

  const std::array<std::uint8_t, 3>& at(std::uint32_t x, std::uint32_t y) const {
    return pixels[static_cast<std::size_t>(y) * width + x];
  }
  std::array<std::uint8_t, 3>& at(std::uint32_t x, std::uint32_t y) {
    return pixels[static_cast<std::size_t>(y) * width + x];
  }
};

namespace detail {

inline int pnm_token(std::istream& in, const std::string& what) {
  // skip whitespace and '#' comments between header fields
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (std::isspace(c)) {
      c = in.get();
      continue;
    } else {
      break;
    }
    c = in.get();
  }
  if (c == EOF || c < '0' || c > '9') throw ParseError("image: missing " + what);
  long value = 0;
  while (c >= '0' && c <= '9') {
    value = value * 10 + (c - '0');
    if (value > 1 << 30) throw ParseError("image: " + what + " out of range");
    c = in.get();
  }
  if (c != EOF && !std::isspace(c)) throw ParseError("image: malformed " + what);
  return static_cast<int>(value);
}

}  // namespace detail

/// Reads binary PPM (P6) or PGM (P5) with 8-bit samples.
inline Frame read_image(std::istream& in) {
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6'))
    throw ParseError("image: not a binary PPM/PGM file");
  const bool color = magic[1] == '6';
  const int width = detail::pnm_token(in, "width");
  const int height = detail::pnm_token(in, "height");
  const int maxval = detail::pnm_token(in, "maxval");
  if (width <= 0 || height <= 0) throw ParseError("image: empty raster");
  if (maxval <= 0 || maxval > 255) throw ParseError("image: only 8-bit samples supported");

  Frame frame;
  frame.width = static_cast<std::uint32_t>(width);
  frame.height = static_cast<std::uint32_t>(height);
  const std::size_t count = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  frame.pixels.resize(count);
  std::vector<char> raw(count * (color ? 3 : 1));
  in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size())
    throw ParseError("image: truncated pixel data");
  for (std::size_t i = 0; i < count; ++i) {
    if (color) {
      frame.pixels[i] = {static_cast<std::uint8_t>(raw[3 * i]),
                         static_cast<std::uint8_t>(raw[3 * i + 1]),
                         static_cast<std::uint8_t>(raw[3 * i + 2])};
    } else {
      const auto g = static_cast<std::uint8_t>(raw[i]);
      frame.pixels[i] = {g, g, g};
    }
  }
  return frame;
}

inline Frame read_image_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("image: cannot open '" + path + "'");
  return read_image(in);
}

inline void write_ppm(std::ostream& out, const Frame& frame) {
  if (frame.pixels.size() != static_cast<std::size_t>(frame.width) * frame.height)
    throw ConfigError("image: pixel buffer does not match dimensions");
  out << "P6\n" << frame.width << ' ' << frame.height << "\n255\n";
  for (const auto& p : frame.pixels)
    out.write(reinterpret_cast<const char*>(p.data()), 3);
}

inline void write_ppm_file(const std::string& path, const Frame& frame) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("image: cannot open '" + path + "' for writing");
  write_ppm(out, frame);
}

}  // namespace stm
