#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "cointlab/backtest.hpp"
#include "cointlab/errors.hpp"
#include "support.hpp"

using namespace cointlab;
namespace fs = std::filesystem;
using testsupport::read_file;
using testsupport::write_file;

namespace {

// Two simulated panels plus a config file in a fresh directory.
fs::path setup(const std::string& name, const std::string& config, std::size_t T = 360) {
    const fs::path dir = testsupport::fresh_dir(name);
    testsupport::write_two_panels(dir, 40, T, 21);
    write_file(dir / "run.cfg", config);
    return dir;
}

BacktestConfig config_in(const fs::path& dir) { return load_config((dir / "run.cfg").string()); }

const SpaceFold& space_of(const FoldReport& f, const std::string& name) {
    return *std::find_if(f.spaces.begin(), f.spaces.end(), [&](const SpaceFold& s) { return s.space == name; });
}

std::vector<std::string> lines(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

// Multiplies every price in columns [first, last] by a small wiggle, about the
// size of one day of noise.
PricePanel perturb(const PricePanel& panel, std::size_t first, std::size_t last) {
    Eigen::MatrixXd y = panel.prices();
    for (std::size_t t = first; t <= last; ++t)
        for (Eigen::Index i = 0; i < y.rows(); ++i)
            y(i, static_cast<Eigen::Index>(t)) *= 1.0 + 0.001 * std::sin(static_cast<double>(3 * t + i));
    return PricePanel(panel.dates(), panel.tickers(), y);
}

void expect_same_training(const FoldReport& a, const FoldReport& b) {
    ASSERT_EQ(a.spaces.size(), b.spaces.size());
    for (std::size_t s = 0; s < a.spaces.size(); ++s) {
        const SpaceFold &x = a.spaces[s], &y = b.spaces[s];
        EXPECT_EQ(x.rank, y.rank);
        ASSERT_EQ(x.portfolios.size(), y.portfolios.size());
        for (std::size_t k = 0; k < x.portfolios.size(); ++k) {
            EXPECT_EQ(x.portfolios[k].tickers, y.portfolios[k].tickers);
            EXPECT_EQ(x.portfolios[k].weights, y.portfolios[k].weights);
            EXPECT_EQ(x.portfolios[k].in_sample.ann_vol_pct, y.portfolios[k].in_sample.ann_vol_pct);
        }
    }
    ASSERT_EQ(a.strategies.size(), b.strategies.size());
    for (std::size_t k = 0; k < a.strategies.size(); ++k) {
        EXPECT_EQ(a.strategies[k].theta, b.strategies[k].theta);
        EXPECT_EQ(a.strategies[k].objective_value, b.strategies[k].objective_value);
    }
}

}  // namespace

TEST(Config, ParsesKeys) {
    const fs::path dir = setup("cfg_keys", "");
    const BacktestConfig c = parse_config(testsupport::two_panel_config() +
                                              "ssl.lambda1 = 2\nadf.max_lag = 4\nscreen = false\n"
                                              "optimize.benchmarks = US, European\nn_starts = 5\n",
                                          dir.string());
    ASSERT_EQ(c.panels.size(), 2u);
    EXPECT_EQ(c.panels[0].first, "US");
    EXPECT_EQ(c.panels[0].second.p(), 20u);
    ASSERT_EQ(c.joint_spaces.size(), 1u);
    EXPECT_EQ(c.joint_spaces[0].second, (std::vector<std::string>{"US", "EU"}));
    ASSERT_EQ(c.benchmarks.size(), 2u);
    EXPECT_EQ(c.benchmarks[1].name, "European");
    EXPECT_EQ(c.benchmarks[1].space, "EU");
    EXPECT_EQ(c.train_months, 12);
    EXPECT_EQ(c.folds, 3);
    EXPECT_EQ(c.preset, Preset::joint);
    EXPECT_EQ(c.objective, Objective::sharpe_max);
    ASSERT_EQ(c.strategies.size(), 2u);
    EXPECT_EQ(c.strategies[0].name, "SR Optimised I");
    EXPECT_EQ(c.strategies[0].spaces.size(), 3u);
    EXPECT_EQ(c.ssl.lambda1, 2.0);
    EXPECT_EQ(c.ssl.seed, 11u);
    EXPECT_EQ(c.adf_max_lag, 4u);
    EXPECT_FALSE(c.screen);
    EXPECT_EQ(c.optimize_benchmarks, (std::vector<std::string>{"US", "European"}));
    EXPECT_EQ(c.n_starts, 5);
    EXPECT_EQ(c.echo.at("panel.US"), "us.csv");
}

TEST(Config, Errors) {
    const fs::path dir = setup("cfg_errors", "");
    const std::string base = "panel.US = us.csv\n";
    auto bad = [&](const std::string& text) {
        EXPECT_THROW(parse_config(text, dir.string()), ConfigError) << text;
    };
    bad("");
    bad(base + "bogus = 1\n");
    bad(base + "folds = 3\nfolds = 4\n");
    bad(base + "folds = three\n");
    bad(base + "screen = maybe\n");
    bad(base + "objective = fastest\n");
    bad(base + "missing = interpolate\n");
    bad(base + "layout = tall\n");
    bad(base + "benchmark.A,B = US\n");
    bad(base + "panel. = eu.csv\n");
    bad(base + "just text\n");
    bad(base + "constraints = loose\n");
    EXPECT_THROW(parse_config("panel.US = nowhere.csv\n", dir.string()), IngestError);
    EXPECT_THROW(load_config((dir / "absent.cfg").string()), ConfigError);
}

TEST(Config, RunTimeChecks) {
    const fs::path dir = setup("cfg_run", "");
    auto bad = [&](const std::string& text) {
        EXPECT_THROW(run(parse_config(text, dir.string())), ConfigError) << text;
    };
    bad("panel.US = us.csv\npanel.X = us.csv\n");  // duplicate tickers
    bad("panel.US = us.csv\njoint.J = US + NOPE\n");
    bad("panel.US = us.csv\nbenchmark.B = NOPE\n");
    bad("panel.US = us.csv\nbenchmark.B = US:ZZZ\n");
    bad("panel.US = us.csv\nbenchmark.B = US\nobjective = sharpe_max\nstrategy.S = NOPE\n");
    bad("panel.US = us.csv\nobjective = sharpe_max\n");  // nothing to mix with
    bad("panel.US = us.csv\nbenchmark.B = US\nstrategy.S = US\n");
    bad("panel.US = us.csv\nbenchmark.B = US\nobjective = sharpe_max\noptimize.benchmarks = C\n");
    bad("panel.US = us.csv\nbenchmark.B = US\nobjective = sharpe_max\nconstraints = joint\n");
    bad("panel.US = us.csv\nbenchmark.B = US\nbenchmark.B Benchmark = US\nobjective = sharpe_max\n"
        "strategy.B Benchmark = US\n");
    EXPECT_THROW(run(parse_config("panel.US = us.csv\ntrain_months = 20\nfolds = 3\n", dir.string())),
                 ScheduleError);
}

TEST(Backtest, ObjectiveNoneHasOnlyBenchmarks) {
    const fs::path dir = setup("bt_none", testsupport::two_panel_config("none", 2));
    const BacktestReport r = run(config_in(dir));
    EXPECT_EQ(r.strategies, (std::vector<std::string>{"US Benchmark", "European Benchmark"}));
    for (const auto& f : r.folds) EXPECT_TRUE(f.strategies.empty());
    const auto rows = lines(summary_csv(summarize(r)));
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[0], kSummaryHeader);
    EXPECT_EQ(rows[1].rfind("US Benchmark,", 0), 0u);
    EXPECT_EQ(rows[2].rfind("European Benchmark,", 0), 0u);
    EXPECT_EQ(lines(returns_table_csv(r, true)).size(), 3u);
}

TEST(Backtest, StationaryPortfoliosAreCalmerThanBenchmarks) {
    std::string cfg = testsupport::two_panel_config("sharpe_max", 2);
    cfg.replace(cfg.find("train_months = 12"), 17, "train_months = 14");
    const fs::path dir = setup("bt_calm", cfg);
    const BacktestReport r = run(config_in(dir));
    EXPECT_EQ(exit_code(r), 0);
    ASSERT_EQ(r.folds.size(), 2u);
    for (const auto& f : r.folds) {
        // The simulated relations span both panels, so only the joint space
        // is cointegrated.
        const SpaceFold& s = space_of(f, "JOINT");
        EXPECT_EQ(s.status, SpaceStatus::ok);
        ASSERT_FALSE(s.portfolios.empty());
        EXPECT_EQ(s.portfolios.size(), s.rank);
        const double bench = std::min(f.benchmarks[0].out_of_sample.ann_vol_pct, f.benchmarks[1].out_of_sample.ann_vol_pct);
        for (const auto& p : s.portfolios) {
            double l1 = 0.0;
            for (double w : p.weights) l1 += std::abs(w);
            EXPECT_NEAR(l1, 1.0, 1e-12);
            EXPECT_LT(p.out_of_sample.ann_vol_pct, bench);
        }
        EXPECT_LT(s.median_vol_out_of_sample, 0.25 * bench);
        for (const auto& st : f.strategies) {
            EXPECT_TRUE(st.ok) << st.message;
            double l1 = 0.0;
            for (double t : st.theta) l1 += std::abs(t);
            EXPECT_NEAR(l1, 1.0, 1e-10);
            // Joint preset: two benchmark weights in (1/4, 1/2).
            ASSERT_GE(st.theta.size(), 2u);
            for (std::size_t k = st.theta.size() - 2; k < st.theta.size(); ++k) {
                EXPECT_GT(st.theta[k], 0.25);
                EXPECT_LT(st.theta[k], 0.5);
            }
        }
    }
}

TEST(Backtest, SeriesAndSummaryAgree) {
    const fs::path dir = setup("bt_series", testsupport::two_panel_config("sharpe_max", 3));
    const BacktestReport r = run(config_in(dir));
    ASSERT_EQ(r.series.size(), r.strategies.size());
    std::size_t expected_days = 0;
    for (const auto& f : r.folds)
        if (!f.flagged) expected_days += f.fold.test_last - f.fold.test_first + 1;
    const auto summary = summarize(r);
    for (std::size_t k = 0; k < r.series.size(); ++k) {
        const PerfSeries& s = r.series[k].series;
        EXPECT_EQ(s.daily_returns.size(), expected_days);
        EXPECT_TRUE(std::is_sorted(s.dates.begin(), s.dates.end()));
        EXPECT_EQ(std::adjacent_find(s.dates.begin(), s.dates.end()), s.dates.end());
        EXPECT_EQ(summary[k].strategy, r.strategies[k]);
        EXPECT_NEAR(summary[k].sharpe, sharpe_ratio(s), 1e-10);
        EXPECT_NEAR(summary[k].max_drawdown_pct, max_drawdown(s), 1e-10);
    }
    // Each fold's slice of a strategy series carries that fold's out-of-sample metrics.
    const std::size_t nb = r.folds.front().benchmarks.size();
    std::size_t offset = 0;
    for (const auto& f : r.folds) {
        const std::size_t n = f.fold.test_last - f.fold.test_first + 1;
        for (std::size_t k = 0; k < f.strategies.size(); ++k) {
            const PerfSeries& s = r.series[nb + k].series;
            const PerfSeries slice = make_series(
                std::vector<Date>(s.dates.begin() + static_cast<long>(offset), s.dates.begin() + static_cast<long>(offset + n)),
                std::vector<double>(s.daily_returns.begin() + static_cast<long>(offset),
                                    s.daily_returns.begin() + static_cast<long>(offset + n)));
            EXPECT_EQ(slice.dates.front(), f.fold.test_start);
            EXPECT_NEAR(annualized_volatility(slice), f.strategies[k].out_of_sample.ann_vol_pct, 1e-10);
            EXPECT_NEAR(sharpe_ratio(slice), f.strategies[k].out_of_sample.sharpe, 1e-10);
        }
        offset += n;
    }
}

TEST(Backtest, DeterministicAndJsonRoundTrip) {
    const fs::path dir = setup("bt_json", testsupport::two_panel_config("vol_min", 2));
    const BacktestConfig cfg = config_in(dir);
    const BacktestReport a = run(cfg), b = run(cfg);
    const nlohmann::json ja = report_to_json(a);
    EXPECT_EQ(ja, report_to_json(b));
    EXPECT_EQ(report_to_json(report_from_json(ja)), ja);
    EXPECT_EQ(report_to_json(report_from_json(nlohmann::json::parse(ja.dump()))), ja);
    EXPECT_EQ(ja.at("seed"), 11u);
    EXPECT_EQ(ja.at("exit_code"), 0);
    EXPECT_EQ(ja.at("config").at("objective"), "vol_min");
}

TEST(Backtest, NoLookAhead) {
    const fs::path dir = setup("bt_lookahead", testsupport::two_panel_config("sharpe_max", 3));
    const BacktestConfig cfg = config_in(dir);
    const BacktestReport base = run(cfg);
    ASSERT_EQ(base.folds.size(), 3u);

    // Changing the last test month leaves every training result alone and
    // every earlier fold untouched.
    const Fold& last = base.folds.back().fold;
    BacktestConfig moved = cfg;
    for (auto& [name, panel] : moved.panels) panel = perturb(panel, last.test_first, last.test_last);
    const BacktestReport r = run(moved);
    for (std::size_t f = 0; f < 3; ++f) expect_same_training(base.folds[f], r.folds[f]);
    for (std::size_t f = 0; f < 2; ++f)
        EXPECT_EQ(report_to_json(base).at("folds")[f], report_to_json(r).at("folds")[f]) << "fold " << f;
    EXPECT_NE(base.folds[2].benchmarks[0].out_of_sample.ann_vol_pct, r.folds[2].benchmarks[0].out_of_sample.ann_vol_pct);
}

TEST(Backtest, FoldIndependence) {
    const fs::path dir = setup("bt_independent", testsupport::two_panel_config("sharpe_max", 3));
    const BacktestConfig cfg = config_in(dir);
    const BacktestReport base = run(cfg);

    // The middle fold's test month feeds only the last fold's training window.
    const Fold& mid = base.folds[1].fold;
    BacktestConfig moved = cfg;
    for (auto& [name, panel] : moved.panels) panel = perturb(panel, mid.test_first, mid.test_last);
    const BacktestReport r = run(moved);
    EXPECT_EQ(report_to_json(base).at("folds")[0], report_to_json(r).at("folds")[0]);
    expect_same_training(base.folds[1], r.folds[1]);
    EXPECT_NE(base.folds[1].benchmarks[0].out_of_sample.ann_vol_pct, r.folds[1].benchmarks[0].out_of_sample.ann_vol_pct);
}

TEST(Backtest, FlaggedFoldsAreExcluded) {
    // A two-ticker space that is flat through the first training window and a
    // random walk afterwards: fold 0 has nothing I(1) in it.
    const fs::path dir = setup("bt_flagged", "", 420);
    const BacktestConfig probe = parse_config("panel.US = us.csv\n", dir.string());
    const auto& dates = probe.panels[0].second.dates();
    const PricePanel us = probe.panels[0].second;
    const std::size_t flat_until = make_schedule(us, 12, 5).folds[0].train_last;
    Eigen::MatrixXd y = Eigen::MatrixXd::Constant(2, static_cast<Eigen::Index>(dates.size()), 100.0);
    Rng rng(3);
    for (Eigen::Index t = static_cast<Eigen::Index>(flat_until) + 1; t < y.cols(); ++t)
        for (Eigen::Index i = 0; i < 2; ++i) y(i, t) = y(i, t - 1) + rng.normal();
    write_csv(PricePanel(dates, {"F0", "F1"}, y), (dir / "flat.csv").string());
    std::string cfg = testsupport::two_panel_config("sharpe_max", 5) + "panel.FLAT = flat.csv\n";

    const BacktestReport r = run(parse_config(cfg, dir.string()));
    ASSERT_EQ(r.folds.size(), 5u);
    EXPECT_TRUE(r.folds[0].flagged);
    EXPECT_NE(space_of(r.folds[0], "FLAT").status, SpaceStatus::ok);
    EXPECT_EQ(exit_code(r), 2);
    EXPECT_FALSE(r.warnings.empty());

    std::size_t expected_days = 0, flagged = 0;
    for (const auto& f : r.folds) {
        if (f.flagged) ++flagged;
        else expected_days += f.fold.test_last - f.fold.test_first + 1;
    }
    EXPECT_LT(flagged, 5u);
    for (const auto& s : r.series) {
        EXPECT_EQ(s.series.daily_returns.size(), expected_days) << s.name;
        EXPECT_GT(s.series.dates.front(), r.folds[0].fold.test_end);
    }
    const auto rows = lines(volatility_table_csv(r, "FLAT", true));
    EXPECT_EQ(rows[1].rfind(std::string(kRowPortfolios) + ",", 0), 0u);
}

TEST(Backtest, EveryFoldFailing) {
    const fs::path dir = setup("bt_allfail", testsupport::two_panel_config("sharpe_max", 2) + "ssl.ceiling_factor = 1.01\n");
    const BacktestReport r = run(config_in(dir));
    EXPECT_EQ(exit_code(r), 2);
    for (const auto& f : r.folds) {
        EXPECT_TRUE(f.flagged);
        for (const auto& s : f.spaces) EXPECT_EQ(s.status, SpaceStatus::failed);
        for (const auto& s : f.strategies) EXPECT_FALSE(s.ok);
    }
    for (const auto& s : r.series) EXPECT_TRUE(s.series.daily_returns.empty());
    for (const auto& row : summarize(r)) EXPECT_TRUE(std::isnan(row.sharpe));
    // Failed cells stay blank in the tables.
    const auto rows = lines(volatility_table_csv(r, "US", false));
    EXPECT_EQ(rows[1], std::string(kRowPortfolios) + ",,");
}

TEST(Backtest, EmittedTables) {
    const fs::path dir = setup("bt_emit", testsupport::two_panel_config("sharpe_max", 3));
    const BacktestReport r = run(config_in(dir));
    const fs::path out = dir / "out";
    const auto files = emit(r, out.string());
    for (const auto& f : files) EXPECT_TRUE(fs::exists(out / f)) << f;
    for (const char* name : {"volatility_in_sample_us.csv", "volatility_out_of_sample_joint.csv", "portfolio_metrics_eu.csv",
                             "returns_in_sample.csv", "returns_out_of_sample.csv", "summary.csv",
                             "series_sr_optimised_i.csv", "series_us_benchmark.csv", "plot.csv", "report.json"})
        EXPECT_NE(std::find(files.begin(), files.end(), name), files.end()) << name;

    const auto vin = lines(read_file(out / "volatility_in_sample_us.csv"));
    ASSERT_EQ(vin.size(), 6u);
    EXPECT_EQ(vin[0], std::string(kHeaderInSample) + "," + month_label(r.folds[0].fold.train_end) + "," +
                          month_label(r.folds[1].fold.train_end) + "," + month_label(r.folds[2].fold.train_end));
    EXPECT_EQ(vin[1].rfind(kRowPortfolios, 0), 0u);
    EXPECT_EQ(vin[2].rfind(kRowMeanVol, 0), 0u);
    EXPECT_EQ(vin[3].rfind(kRowMedianVol, 0), 0u);
    EXPECT_EQ(vin[4].rfind("US Benchmark,", 0), 0u);
    EXPECT_EQ(vin[5].rfind("European Benchmark,", 0), 0u);
    const auto vout = lines(read_file(out / "volatility_out_of_sample_us.csv"));
    EXPECT_EQ(vout[0].rfind(std::string(kHeaderOutOfSample) + "," + month_label(r.folds[0].fold.test_start), 0), 0u);

    const auto ret = lines(read_file(out / "returns_out_of_sample.csv"));
    ASSERT_EQ(ret.size(), 5u);
    EXPECT_EQ(ret[3].rfind("SR Optimised I,", 0), 0u);
    EXPECT_EQ(ret[4].rfind("SR Optimised II,", 0), 0u);

    const auto series = lines(read_file(out / "series_sr_optimised_ii.csv"));
    EXPECT_EQ(series[0], "date,daily_return,cumulative");
    EXPECT_EQ(series.size(), r.series.back().series.daily_returns.size() + 1);
    EXPECT_EQ(lines(read_file(out / "plot.csv"))[0], "date,series,daily_return,cumulative,drawdown");
    EXPECT_EQ(lines(read_file(out / "portfolio_metrics_us.csv"))[0], "fold,portfolio_id,vol,sharpe,mdd");

    const nlohmann::json j = nlohmann::json::parse(read_file(out / "report.json"));
    EXPECT_EQ(j, report_to_json(r));
    EXPECT_EQ(j.at("summary").size(), 4u);
}
