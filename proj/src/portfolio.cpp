#include "cointlab/portfolio.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "cointlab/errors.hpp"
#include "cointlab/format.hpp"
#include "cointlab/rng.hpp"

namespace cointlab {

std::vector<StationaryPortfolio> extract_portfolios(const Eigen::MatrixXd& pi_hat, double zero_tol, int fold) {
    std::vector<StationaryPortfolio> out;
    for (Eigen::Index i = 0; i < pi_hat.rows(); ++i) {
        const double l1 = pi_hat.row(i).lpNorm<1>();
        if (!(l1 > zero_tol)) continue;
        StationaryPortfolio sp;
        sp.weights = pi_hat.row(i).transpose() / l1;
        sp.source_row = static_cast<std::size_t>(i);
        sp.fold = fold;
        out.push_back(std::move(sp));
    }
    return out;
}

PerfSeries make_series(std::vector<Date> dates, std::vector<double> daily_returns) {
    if (dates.size() != daily_returns.size()) throw DimensionError("dates and returns differ in length");
    PerfSeries s;
    s.dates = std::move(dates);
    s.daily_returns = std::move(daily_returns);
    s.cumulative.reserve(s.daily_returns.size());
    double level = 1.0;
    for (double r : s.daily_returns) {
        if (!(1.0 + r > 0.0)) throw DomainError("daily return of -100% or worse");
        level *= 1.0 + r;
        s.cumulative.push_back(level);
    }
    return s;
}

PerfSeries portfolio_returns(const Eigen::VectorXd& weights, const ReturnsPanel& returns) {
    if (weights.size() != returns.returns.rows())
        throw DimensionError("weights have " + std::to_string(weights.size()) + " entries, panel has " +
                             std::to_string(returns.returns.rows()) + " assets");
    const Eigen::VectorXd r = returns.returns.transpose() * weights;
    return make_series(returns.dates, std::vector<double>(r.data(), r.data() + r.size()));
}

namespace {

struct Moments {
    double mean = 0.0;
    double sd = 0.0;
    bool constant = true;
};

Moments moments(const std::vector<double>& x) {
    Moments m;
    const double n = static_cast<double>(x.size());
    for (double v : x) m.mean += v;
    m.mean /= n;
    double ss = 0.0;
    for (double v : x) {
        ss += (v - m.mean) * (v - m.mean);
        if (v != x.front()) m.constant = false;
    }
    m.sd = m.constant ? 0.0 : std::sqrt(ss / (n - 1.0));
    return m;
}

}  // namespace

double annualized_volatility(const PerfSeries& series) {
    if (series.daily_returns.size() < 2) throw DimensionError("volatility needs at least two returns");
    return moments(series.daily_returns).sd * std::sqrt(kTradingDays) * 100.0;
}

double annualized_return(const PerfSeries& series) {
    if (series.daily_returns.empty()) throw DimensionError("empty series");
    double sum = 0.0;
    for (double r : series.daily_returns) sum += r;
    return sum / static_cast<double>(series.daily_returns.size()) * kTradingDays * 100.0;
}

double sharpe_ratio(const PerfSeries& series) {
    if (series.daily_returns.size() < 2) throw DimensionError("Sharpe needs at least two returns");
    const Moments m = moments(series.daily_returns);
    if (m.constant || !(m.sd > 0.0)) throw DomainError("Sharpe ratio undefined for zero volatility");
    return (m.mean * kTradingDays) / (m.sd * std::sqrt(kTradingDays));
}

double max_drawdown(const PerfSeries& series) {
    if (series.cumulative.empty()) throw DimensionError("empty series");
    double peak = series.cumulative.front();
    double worst = 0.0;
    for (double c : series.cumulative) {
        if (c > peak) peak = c;
        worst = std::max(worst, 1.0 - c / peak);
    }
    return worst * 100.0;
}

RiskMetrics risk_metrics(const PerfSeries& series) {
    RiskMetrics m;
    m.ann_vol_pct = annualized_volatility(series);
    try {
        m.sharpe = sharpe_ratio(series);
    } catch (const DomainError&) {
        m.sharpe = std::numeric_limits<double>::quiet_NaN();
    }
    m.max_drawdown_pct = max_drawdown(series);
    return m;
}

Eigen::VectorXd random_portfolio(std::size_t p, std::uint64_t seed) {
    if (p < 1) throw DimensionError("random_portfolio needs p >= 1");
    Rng rng(seed);
    Eigen::VectorXd w(p);
    do {
        for (std::size_t i = 0; i < p; ++i) w(i) = rng.normal();
    } while (w.lpNorm<1>() == 0.0);
    return w / w.lpNorm<1>();
}

Eigen::VectorXd equal_weight(std::size_t p) {
    if (p < 1) throw DimensionError("equal_weight needs p >= 1");
    return Eigen::VectorXd::Constant(p, 1.0 / static_cast<double>(p));
}

std::string metrics_csv(const std::vector<PortfolioMetricsRow>& rows) {
    std::ostringstream out;
    out << "fold,portfolio_id,vol,sharpe,mdd\n";
    for (const auto& r : rows)
        out << r.fold << ',' << r.portfolio_id << ',' << format_number(r.metrics.ann_vol_pct) << ','
            << format_number(r.metrics.sharpe) << ',' << format_number(r.metrics.max_drawdown_pct) << '\n';
    return out.str();
}

}  // namespace cointlab
