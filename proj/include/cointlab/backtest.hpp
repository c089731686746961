#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cointlab/optimize.hpp"
#include "cointlab/panel.hpp"
#include "cointlab/portfolio.hpp"
#include "cointlab/vecm.hpp"

namespace cointlab {

struct BenchmarkSpec {
    std::string name;    // reported as "<name> Benchmark"
    std::string space;
    std::string ticker;  // empty: equal weight over the space's constituents
};

struct StrategySpec {
    std::string name;
    std::vector<std::string> spaces;  // candidate portfolios are pooled from these
};

struct BacktestConfig {
    // Named input panels; each one is an asset space.
    std::vector<std::pair<std::string, PricePanel>> panels;
    // Unions of other spaces, e.g. JOINT = US + EU.
    std::vector<std::pair<std::string, std::vector<std::string>>> joint_spaces;
    std::vector<BenchmarkSpec> benchmarks;

    std::optional<FillPolicy> fill;  // empty: gaps are an error
    int train_months = 24;
    int folds = 14;
    bool screen = true;
    std::optional<std::size_t> adf_max_lag;
    SslConfig ssl;

    std::optional<Objective> objective;  // empty: no optimization
    Preset preset = Preset::relaxed;
    std::vector<std::string> optimize_benchmarks;  // empty: all benchmarks
    std::vector<StrategySpec> strategies;          // empty: one strategy over all spaces
    int n_starts = 16;
    std::uint64_t seed = 0;

    // Raw key/value pairs as read, echoed into the report.
    std::map<std::string, std::string> echo;
};

// Flat "key = value" text, '#' starts a comment. Relative panel paths are
// resolved against base_dir.
//
//   panel.<SPACE> = prices.csv          one or more
//   layout = wide | long
//   missing = error | forward_fill | drop_ticker
//   joint.<SPACE> = US + EU
//   benchmark.<Name> = <SPACE> | <SPACE>:<TICKER>
//   train_months = 24
//   folds = 14
//   screen = true | false
//   adf.max_lag = <n>
//   ssl.lambda1, ssl.lambda0_init, ssl.lambda_step, ssl.em_max_iter, ssl.em_tol,
//   ssl.zero_tol, ssl.phase2_patience, ssl.ceiling_factor
//   objective = sharpe_max | vol_min | none
//   constraints = us_only | joint | relaxed
//   optimize.benchmarks = US, EU
//   strategy.<Name> = US + EU + JOINT
//   n_starts = 16
//   seed = 0
BacktestConfig parse_config(const std::string& text, const std::string& base_dir = ".");
BacktestConfig load_config(const std::string& path);

struct PortfolioRecord {
    std::size_t id = 0;
    std::size_t source_row = 0;
    std::vector<std::string> tickers;
    std::vector<double> weights;
    RiskMetrics in_sample;
    RiskMetrics out_of_sample;
    double return_in_sample = 0.0;  // annualized, percent
    double return_out_of_sample = 0.0;
};

enum class SpaceStatus { ok, no_i1, failed };

struct SpaceFold {
    std::string space;
    SpaceStatus status = SpaceStatus::ok;
    std::string message;
    std::size_t n_constituents = 0;
    std::size_t n_i1 = 0;
    std::size_t rank = 0;
    std::vector<PortfolioRecord> portfolios;
    // NaN when there are no portfolios.
    double mean_vol_in_sample = 0.0, median_vol_in_sample = 0.0;
    double mean_vol_out_of_sample = 0.0, median_vol_out_of_sample = 0.0;
};

struct BenchmarkFold {
    std::string name;
    RiskMetrics in_sample, out_of_sample;
    double return_in_sample = 0.0, return_out_of_sample = 0.0;
};

struct StrategyFold {
    std::string name;
    bool ok = false;
    std::string message;
    std::size_t n_candidates = 0;
    std::vector<double> theta;
    double objective_value = 0.0;
    RiskMetrics in_sample, out_of_sample;
    double return_in_sample = 0.0, return_out_of_sample = 0.0;
};

struct FoldReport {
    std::size_t index = 0;
    Fold fold;
    std::vector<SpaceFold> spaces;
    std::vector<BenchmarkFold> benchmarks;
    std::vector<StrategyFold> strategies;
    bool flagged = false;
};

struct StrategySeries {
    std::string name;
    PerfSeries series;  // concatenated test periods of unflagged folds
};

struct SummaryRow {
    std::string strategy;
    double sharpe = 0.0;
    double max_drawdown_pct = 0.0;
};

struct BacktestReport {
    nlohmann::json config;
    std::uint64_t seed = 0;
    std::vector<std::string> spaces;
    std::vector<std::string> strategies;  // benchmark labels first, then optimized strategies
    std::vector<FoldReport> folds;
    std::vector<StrategySeries> series;
    std::vector<std::string> warnings;
};

BacktestReport run(const BacktestConfig& config);

std::vector<SummaryRow> summarize(const BacktestReport& report);

// 0 when every fold succeeded, 2 when some fold was flagged.
int exit_code(const BacktestReport& report);

nlohmann::json report_to_json(const BacktestReport& report);
BacktestReport report_from_json(const nlohmann::json& j);

// Writes the table CSVs, per-strategy daily series, plot data and report.json.
// Returns the file names written, relative to out_dir.
std::vector<std::string> emit(const BacktestReport& report, const std::string& out_dir);

// Row labels and column headers of the emitted tables.
inline constexpr const char* kRowPortfolios = "Number of Portfolios";
inline constexpr const char* kRowMeanVol = "Mean volatility";
inline constexpr const char* kRowMedianVol = "Median volatility";
inline constexpr const char* kHeaderInSample = "End of training period";
inline constexpr const char* kHeaderOutOfSample = "Testing period";
inline constexpr const char* kSummaryHeader = "Strategy,Sharpe ratio,Max Drawdown";

std::string volatility_table_csv(const BacktestReport& report, const std::string& space, bool out_of_sample);
std::string returns_table_csv(const BacktestReport& report, bool out_of_sample);
std::string summary_csv(const std::vector<SummaryRow>& rows);

}  // namespace cointlab
