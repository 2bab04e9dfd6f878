#pragma once

#include <cstdio>
#include <ostream>
#include <span>
#include <string>

namespace tfh::csv {

/// 17 significant digits so that values round-trip exactly.
inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void row(std::ostream& os, std::span<const double> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) os << ',';
    os << num(values[i]);
  }
}

/// Comma-joined names followed by a newline.
inline void header(std::ostream& os, std::span<const std::string> names) {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (i) os << ',';
    os << names[i];
  }
  os << '\n';
}

}  // namespace tfh::csv
