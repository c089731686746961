#pragma once

#include <cstddef>
#include <cstdint>

#include <Eigen/Dense>
#include <json.hpp>

#include "cointlab/date.hpp"
#include "cointlab/panel.hpp"

namespace cointlab {

struct VecmSpec {
    std::size_t p = 0;
    std::size_t r_true = 0;
    std::size_t T = 0;
    Eigen::MatrixXd loading;  // p x r_true
    Eigen::MatrixXd coint;    // r_true x p
    double noise_std = 1.0;
    // Standard deviation of a common shock added to every asset each day.
    // Zero keeps the noise covariance diagonal.
    double market_std = 0.0;
    Eigen::VectorXd y0;      // initial prices
    Eigen::VectorXd anchor;  // attractor; empty means y0
    std::uint64_t seed = 0;
    Date start = Date{std::chrono::year{2021}, std::chrono::January, std::chrono::day{4}};

    Eigen::MatrixXd pi() const { return loading * coint; }
};

struct SpecOptions {
    double noise_std = 1.0;
    double market_std = 0.0;
    // Magnitude of the non-loading cointegration weights.
    double coint_scale = 8.0;
    // Speed of error correction, drawn uniformly.
    double kappa_lo = 0.1;
    double kappa_hi = 0.4;
    double y0 = 10000.0;
};

struct Simulation {
    PricePanel panel;
    Eigen::MatrixXd pi_true;
};

// Spectral radius of I + coint*loading, which governs the spreads coint*Y.
double correction_radius(const VecmSpec& spec);

// Y_t = Y_{t-1} + Pi (Y_{t-1} - anchor) + noise_std*z_t + market_std*f_t*1.
Simulation generate(const VecmSpec& spec);

// One loading asset per relation with speed kappa; cointegration vectors are
// dense, sum to zero (neutral to the common shock) and put weight 1 on their
// own loading asset, so coint*loading = -diag(kappa).
VecmSpec random_spec(std::size_t p, std::size_t r_true, std::size_t T, std::uint64_t seed,
                     const SpecOptions& options = {});

nlohmann::json spec_to_json(const VecmSpec& spec);

}  // namespace cointlab
