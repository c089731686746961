#include "cointlab/format.hpp"

#include <cmath>
#include <cstdio>

namespace cointlab {

std::string format_number(double v, int precision) {
    if (std::isnan(v)) return "";
    if (v == 0.0) return "0";  // folds -0 into 0
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    return buf;
}

}  // namespace cointlab
