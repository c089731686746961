#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "cointlab/panel.hpp"

namespace cointlab {

struct AdfResult {
    double statistic = 0.0;  // t-ratio on the lagged level
    std::size_t lags_used = 0;
    std::size_t n_obs = 0;  // observations in the final regression
    bool reject_1pct = false;
    bool reject_5pct = false;
    bool reject_10pct = false;
};

// Constant-only asymptotic critical values.
inline constexpr double kAdfCritical1 = -3.43;
inline constexpr double kAdfCritical5 = -2.86;
inline constexpr double kAdfCritical10 = -2.57;

enum class LagSelection { aic, fixed };

// floor(12 * (n/100)^(1/4))
std::size_t schwert_max_lag(std::size_t n);

// Regression dy_t = c + rho*y_{t-1} + sum_i phi_i dy_{t-i} + e_t. With
// LagSelection::aic the lag is chosen over 0..max_lag on a common sample and
// then refitted on its full sample; LagSelection::fixed uses max_lag as is.
AdfResult adf_test(const Eigen::VectorXd& series, std::optional<std::size_t> max_lag = std::nullopt,
                   LagSelection selection = LagSelection::aic);

// Row indices of tickers whose level does not reject at 5% and whose first
// difference does.
std::vector<std::size_t> screen_i1(const PricePanel& panel, std::optional<std::size_t> max_lag = std::nullopt);

}  // namespace cointlab
