#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "cointlab/errors.hpp"
#include "cointlab/portfolio.hpp"
#include "cointlab/rng.hpp"
#include "support.hpp"

using namespace cointlab;

namespace {

std::vector<Date> days(std::size_t n) {
    return business_days(Date{std::chrono::year{2023}, std::chrono::January, std::chrono::day{2}}, n);
}

PerfSeries series_of(const std::vector<double>& r) { return make_series(days(r.size()), r); }

// O(n^2) drawdown: largest relative fall from any earlier point.
double brute_drawdown(const std::vector<double>& c) {
    double worst = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i)
        for (std::size_t j = i; j < c.size(); ++j) worst = std::max(worst, 1.0 - c[j] / c[i]);
    return 100.0 * worst;
}

}  // namespace

TEST(Extract, NormalizesRowsToUnitL1) {
    Eigen::MatrixXd pi(3, 3);
    pi << 2, -2, 0,  //
        0, 0, 0,     //
        1, 3, -4;
    const auto ports = extract_portfolios(pi, 1e-8, 5);
    ASSERT_EQ(ports.size(), 2u);
    EXPECT_EQ(ports[0].source_row, 0u);
    EXPECT_EQ(ports[1].source_row, 2u);
    EXPECT_EQ(ports[0].fold, 5);
    EXPECT_DOUBLE_EQ(ports[0].weights(0), 0.5);
    EXPECT_DOUBLE_EQ(ports[0].weights(1), -0.5);
    EXPECT_DOUBLE_EQ(ports[0].weights(2), 0.0);
    for (const auto& sp : ports) EXPECT_NEAR(sp.weights.lpNorm<1>(), 1.0, 1e-15);
}

TEST(Extract, ScaleInvariantAndTolerance) {
    const Eigen::MatrixXd pi = testsupport::normal_matrix(6, 6, 3);
    const auto a = extract_portfolios(pi);
    const auto b = extract_portfolios(37.5 * pi);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_LT((a[i].weights - b[i].weights).cwiseAbs().maxCoeff(), 1e-15);

    Eigen::MatrixXd tiny = Eigen::MatrixXd::Zero(2, 2);
    tiny(0, 0) = 1e-9;
    tiny(1, 1) = 1e-7;
    const auto c = extract_portfolios(tiny, 1e-8);
    ASSERT_EQ(c.size(), 1u);
    EXPECT_EQ(c[0].source_row, 1u);
}

TEST(Series, PortfolioReturnsAreLinear) {
    const ReturnsPanel r = testsupport::normal_returns(4, 50, 9);
    Eigen::VectorXd w1(4), w2(4);
    w1 << 0.25, -0.25, 0.3, -0.2;
    w2 << -0.1, 0.4, 0.1, -0.4;
    const PerfSeries s1 = portfolio_returns(w1, r), s2 = portfolio_returns(w2, r);
    const PerfSeries s = portfolio_returns(2.0 * w1 - 0.5 * w2, r);
    for (std::size_t t = 0; t < 50; ++t) {
        EXPECT_NEAR(s.daily_returns[t], 2.0 * s1.daily_returns[t] - 0.5 * s2.daily_returns[t], 1e-15);
        EXPECT_NEAR(s.daily_returns[t], r.returns.col(static_cast<Eigen::Index>(t)).dot(2.0 * w1 - 0.5 * w2), 1e-15);
    }
    EXPECT_EQ(s.dates, r.dates);
    EXPECT_THROW(portfolio_returns(Eigen::VectorXd::Ones(3), r), DimensionError);
}

TEST(Series, CumulativeCompounds) {
    const PerfSeries s = series_of({0.1, -0.5, 0.2});
    EXPECT_NEAR(s.cumulative[0], 1.1, 1e-15);
    EXPECT_NEAR(s.cumulative[1], 0.55, 1e-15);
    EXPECT_NEAR(s.cumulative[2], 0.66, 1e-15);
    EXPECT_THROW(series_of({0.1, -1.0}), DomainError);
    EXPECT_THROW(make_series(days(2), {0.1}), DimensionError);
}

TEST(Metrics, VolatilityOfOnePercentDailyNoise) {
    Rng rng(1);
    std::vector<double> r(5000);
    for (double& x : r) x = 0.01 * rng.normal();
    EXPECT_NEAR(annualized_volatility(series_of(r)), 100.0 * 0.01 * std::sqrt(252.0), 0.5);
}

TEST(Metrics, SharpeOfKnownMoments) {
    // Alternating mean +/- sd has sample mean 0.0005 exactly and sample sd
    // 0.01 * sqrt(T / (T - 1)).
    const std::size_t T = 50000;
    std::vector<double> r(T);
    for (std::size_t t = 0; t < T; ++t) r[t] = 0.0005 + (t % 2 ? 0.01 : -0.01);
    const double expected = 0.0005 * std::sqrt(252.0) / 0.01;
    EXPECT_NEAR(expected, 0.7937, 1e-4);
    EXPECT_NEAR(sharpe_ratio(series_of(r)), expected * std::sqrt((T - 1.0) / T), 1e-9);
    EXPECT_NEAR(annualized_return(series_of(r)), 0.0005 * 252.0 * 100.0, 1e-9);
}

TEST(Metrics, ZeroMeanAlternatingHasZeroSharpe) {
    std::vector<double> r(100);
    for (std::size_t t = 0; t < r.size(); ++t) r[t] = t % 2 ? 0.01 : -0.01;
    EXPECT_NEAR(sharpe_ratio(series_of(r)), 0.0, 1e-12);
}

TEST(Metrics, ConstantSeriesHasNoSharpe) {
    const PerfSeries s = series_of(std::vector<double>(30, 0.001));
    EXPECT_THROW(sharpe_ratio(s), DomainError);
    EXPECT_EQ(annualized_volatility(s), 0.0);
    const RiskMetrics m = risk_metrics(s);
    EXPECT_TRUE(std::isnan(m.sharpe));
    EXPECT_EQ(m.max_drawdown_pct, 0.0);
    EXPECT_THROW(sharpe_ratio(series_of({0.01})), DimensionError);
}

TEST(Metrics, SharpeIsScaleInvariant) {
    Rng rng(2);
    std::vector<double> r(300), r3(300);
    for (std::size_t t = 0; t < r.size(); ++t) {
        r[t] = 0.0002 + 0.005 * rng.normal();
        r3[t] = 3.0 * r[t];
    }
    EXPECT_NEAR(sharpe_ratio(series_of(r)), sharpe_ratio(series_of(r3)), 1e-12);
    EXPECT_NEAR(3.0 * annualized_volatility(series_of(r)), annualized_volatility(series_of(r3)), 1e-10);
}

TEST(Metrics, DrawdownWorkedPath) {
    // Cumulative 1, 1.2, 0.9, 1.3: the fall from 1.2 to 0.9 is 25%.
    const PerfSeries s = series_of({0.0, 0.2, -0.25, 1.3 / 0.9 - 1.0});
    EXPECT_NEAR(max_drawdown(s), 25.0, 1e-12);
}

TEST(Metrics, DrawdownMatchesBruteForce) {
    Rng rng(3);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<double> r(200);
        for (double& x : r) x = 0.02 * rng.normal();
        const PerfSeries s = series_of(r);
        const double mdd = max_drawdown(s);
        EXPECT_NEAR(mdd, brute_drawdown(s.cumulative), 1e-10);
        EXPECT_GE(mdd, 0.0);
        EXPECT_LT(mdd, 100.0);
    }
    std::vector<double> up(20, 0.01);
    EXPECT_EQ(max_drawdown(series_of(up)), 0.0);
}

TEST(RandomPortfolio, UnitL1AndReproducible) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Eigen::VectorXd w = random_portfolio(50, seed);
        EXPECT_NEAR(w.lpNorm<1>(), 1.0, 1e-14);
        EXPECT_EQ(w, random_portfolio(50, seed));
    }
    EXPECT_NE(random_portfolio(50, 1), random_portfolio(50, 2));
    EXPECT_THROW(random_portfolio(0, 1), DimensionError);
    const Eigen::VectorXd ew = equal_weight(4);
    EXPECT_EQ(ew, Eigen::VectorXd::Constant(4, 0.25));
}

TEST(MetricsCsv, HeaderAndRows) {
    std::vector<PortfolioMetricsRow> rows(2);
    rows[0] = {0, 1, {12.5, 0.75, 3.25}};
    rows[1] = {1, 0, {1.0, std::numeric_limits<double>::quiet_NaN(), 0.0}};
    const std::string csv = metrics_csv(rows);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "fold,portfolio_id,vol,sharpe,mdd");
    EXPECT_NE(csv.find("\n0,1,12.5,0.75,3.25\n"), std::string::npos) << csv;
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}
