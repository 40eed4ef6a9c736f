#include "mempert/format.hpp"

#include <cmath>
#include <cstdio>

namespace mempert {

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", value == 0.0 ? 0.0 : value);
  return buf;
}

std::string join_doubles(std::span<const double> values, char sep) {
  std::string out;
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (k) out.push_back(sep);
    out += format_double(values[k]);
  }
  return out;
}

}  // namespace mempert
