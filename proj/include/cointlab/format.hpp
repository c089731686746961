#pragma once

#include <string>

namespace cointlab {

// Shortest stable text for report files; NaN becomes an empty field.
std::string format_number(double v, int precision = 10);

}  // namespace cointlab
