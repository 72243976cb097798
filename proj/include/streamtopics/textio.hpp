#pragma once

#include <cstdio>
#include <string>

namespace stm::detail {

/// Shortest text form that round-trips a double exactly.
inline std::string format_g17(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  double back = 0.0;
  std::sscanf(buf, "%lf", &back);
  if (back == value) {
    for (int prec = 1; prec < 17; ++prec) {
      char probe[64];
      std::snprintf(probe, sizeof(probe), "%.*g", prec, value);
      std::sscanf(probe, "%lf", &back);
      if (back == value) return probe;
    }
  }
  return buf;
}

}  // namespace stm::detail
