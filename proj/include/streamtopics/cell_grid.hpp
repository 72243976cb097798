#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "streamtopics/errors.hpp"

namespace stm {

/// A spatiotemporal cell: fixed-size pixel block at one frame.
struct CellIndex {
  std::uint32_t cx = 0;
  std::uint32_t cy = 0;
  std::uint32_t t = 0;

  bool operator==(const CellIndex&) const = default;
  auto operator<=>(const CellIndex&) const = default;
};

struct CellIndexHash {
  std::size_t operator()(const CellIndex& c) const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (std::uint64_t v : {std::uint64_t(c.cx), std::uint64_t(c.cy), std::uint64_t(c.t)}) {
      h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    }
    return static_cast<std::size_t>(h);
  }
};

/// L-infinity ball in cell units plus a symmetric frame window.
struct NeighborhoodSpec {
  std::uint32_t spatial_radius = 1;
  std::uint32_t temporal_radius = 1;
};

/// Inclusive grid extent used to clip neighborhood enumeration.
struct GridBounds {
  std::uint32_t max_cx = 0;
  std::uint32_t max_cy = 0;
  std::uint32_t max_t = 0;
};

inline CellIndex cell_of(std::uint32_t x, std::uint32_t y, std::uint32_t t,
                         std::uint32_t cell_size) {
  if (cell_size == 0) throw ConfigError("cell_size must be positive");
  return {x / cell_size, y / cell_size, t};
}

// Cells within the spec's spatial ball and temporal window around c,
// clipped to bounds. Includes c itself. Enumeration order is t, cy, cx
// ascending.
inline std::vector<CellIndex> neighbors(const CellIndex& c, const NeighborhoodSpec& spec,
                                        const GridBounds& bounds) {
  const std::uint64_t rs = spec.spatial_radius;
  const std::uint64_t rt = spec.temporal_radius;
  const std::uint64_t x0 = c.cx > rs ? c.cx - rs : 0;
  const std::uint64_t x1 = std::min<std::uint64_t>(bounds.max_cx, c.cx + rs);
  const std::uint64_t y0 = c.cy > rs ? c.cy - rs : 0;
  const std::uint64_t y1 = std::min<std::uint64_t>(bounds.max_cy, c.cy + rs);
  const std::uint64_t t0 = c.t > rt ? c.t - rt : 0;
  const std::uint64_t t1 = std::min<std::uint64_t>(bounds.max_t, c.t + rt);

  std::vector<CellIndex> out;
  if (x0 > x1 || y0 > y1 || t0 > t1) return out;
  out.reserve(std::size_t(x1 - x0 + 1) * (y1 - y0 + 1) * (t1 - t0 + 1));
  for (std::uint64_t t = t0; t <= t1; ++t)
    for (std::uint64_t cy = y0; cy <= y1; ++cy)
      for (std::uint64_t cx = x0; cx <= x1; ++cx)
        out.push_back({static_cast<std::uint32_t>(cx), static_cast<std::uint32_t>(cy),
                       static_cast<std::uint32_t>(t)});
  return out;
}

}  // namespace stm
