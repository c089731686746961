#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cointlab/date.hpp"
#include "cointlab/panel.hpp"

namespace cointlab {

inline constexpr double kTradingDays = 252.0;

struct StationaryPortfolio {
    Eigen::VectorXd weights;  // L1 norm 1
    std::size_t source_row = 0;
    int fold = -1;
};

struct PerfSeries {
    std::vector<Date> dates;
    std::vector<double> daily_returns;
    std::vector<double> cumulative;  // growth of 1
};

struct RiskMetrics {
    double ann_vol_pct = 0.0;
    double sharpe = 0.0;
    double max_drawdown_pct = 0.0;
};

std::vector<StationaryPortfolio> extract_portfolios(const Eigen::MatrixXd& pi_hat, double zero_tol = 1e-8,
                                                    int fold = -1);

PerfSeries make_series(std::vector<Date> dates, std::vector<double> daily_returns);
PerfSeries portfolio_returns(const Eigen::VectorXd& weights, const ReturnsPanel& returns);

double annualized_volatility(const PerfSeries& series);
// Arithmetic: mean daily return * 252, in percent.
double annualized_return(const PerfSeries& series);
double sharpe_ratio(const PerfSeries& series);
double max_drawdown(const PerfSeries& series);
RiskMetrics risk_metrics(const PerfSeries& series);

Eigen::VectorXd random_portfolio(std::size_t p, std::uint64_t seed);
Eigen::VectorXd equal_weight(std::size_t p);

struct PortfolioMetricsRow {
    int fold = 0;
    std::size_t portfolio_id = 0;
    RiskMetrics metrics;
};

// Columns: fold,portfolio_id,vol,sharpe,mdd
std::string metrics_csv(const std::vector<PortfolioMetricsRow>& rows);

}  // namespace cointlab
