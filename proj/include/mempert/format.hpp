#pragma once
// Round-trippable number formatting shared by every writer, so repeated runs
// produce byte-identical files.

#include <span>
#include <string>

namespace mempert {

// %.17g; non-finite values print as nan / inf / -inf.
std::string format_double(double value);

// Values joined by `sep` with format_double.
std::string join_doubles(std::span<const double> values, char sep = ';');

}  // namespace mempert
