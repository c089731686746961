#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cointlab/backtest.hpp"
#include "cointlab/errors.hpp"
#include "cointlab/format.hpp"
#include "cointlab/optimize.hpp"
#include "cointlab/panel.hpp"
#include "cointlab/portfolio.hpp"
#include "cointlab/simulate.hpp"
#include "cointlab/stationarity.hpp"
#include "cointlab/vecm.hpp"

using namespace cointlab;
using nlohmann::json;

namespace {

struct PanelArgs {
    std::string csv;
    std::string layout = "wide";
    std::string missing = "error";

    void add(CLI::App* app) {
        app->add_option("--csv", csv, "Price panel CSV")->required();
        app->add_option("--layout", layout, "wide or long")->check(CLI::IsMember({"wide", "long"}));
        app->add_option("--missing", missing, "error, forward_fill or drop_ticker")
            ->check(CLI::IsMember({"error", "forward_fill", "drop_ticker"}));
    }

    PricePanel load() const { return load_panel(csv); }

    PricePanel load_panel(const std::string& path) const {
        CsvOptions o;
        o.layout = layout == "long" ? CsvLayout::long_format : CsvLayout::wide;
        o.allow_gaps = missing != "error";
        PricePanel p = load_csv(path, o);
        if (missing == "forward_fill") p = fill_missing(p, FillPolicy::forward_fill);
        if (missing == "drop_ticker") p = fill_missing(p, FillPolicy::drop_ticker);
        return p;
    }
};

struct SslArgs {
    SslConfig c;
    void add(CLI::App* app) {
        app->add_option("--lambda1", c.lambda1, "Slab penalty");
        app->add_option("--lambda0-init", c.lambda0_init, "Initial spike penalty");
        app->add_option("--lambda-step", c.lambda_step, "Spike penalty increment");
        app->add_option("--em-max-iter", c.em_max_iter, "EM iteration cap per column");
        app->add_option("--em-tol", c.em_tol, "EM convergence tolerance");
        app->add_option("--zero-tol", c.zero_tol, "Coefficients below this are zero");
        app->add_option("--seed", c.seed, "Recorded in the output");
    }
};

void write_text(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream f(path, std::ios::binary);
    f << text;
    f.close();
    if (!f) throw Error("cannot write '" + path + "'");
}

json matrix_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(row);
    }
    return rows;
}

json metrics_json(const RiskMetrics& m) {
    auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
    return {{"vol", num(m.ann_vol_pct)}, {"sharpe", num(m.sharpe)}, {"mdd", num(m.max_drawdown_pct)}};
}

PricePanel screened(const PricePanel& panel, bool screen, std::optional<std::size_t> max_lag) {
    if (!screen) return panel;
    const auto keep = screen_i1(panel, max_lag);
    if (keep.empty()) throw EmptyPanelError("no ticker passed the I(1) screen");
    return panel.select(keep);
}

int cmd_adf(const PanelArgs& pa, const std::vector<std::string>& tickers, std::optional<std::size_t> max_lag,
            bool fixed) {
    const PricePanel panel = pa.load();
    json out = json::array();
    for (std::size_t i = 0; i < panel.p(); ++i) {
        const std::string& t = panel.tickers()[i];
        if (!tickers.empty() && std::find(tickers.begin(), tickers.end(), t) == tickers.end()) continue;
        json row = {{"ticker", t}};
        try {
            const Eigen::VectorXd y = panel.prices().row(static_cast<Eigen::Index>(i)).transpose();
            const AdfResult r = adf_test(y, max_lag, fixed ? LagSelection::fixed : LagSelection::aic);
            row["statistic"] = r.statistic;
            row["lags"] = r.lags_used;
            row["n_obs"] = r.n_obs;
            row["reject_1pct"] = r.reject_1pct;
            row["reject_5pct"] = r.reject_5pct;
            row["reject_10pct"] = r.reject_10pct;
        } catch (const TestError& e) {
            row["error"] = e.what();
        }
        out.push_back(row);
    }
    for (const auto& t : tickers)
        if (!panel.find(t)) throw Error("ticker '" + t + "' is not in the panel");
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_estimate(const PanelArgs& pa, const SslArgs& sa, bool screen, const std::string& out_path) {
    const PricePanel panel = screened(pa.load(), screen, std::nullopt);
    const CointegrationEstimate est = estimate(panel, sa.c);
    json j = estimate_to_json(est, panel.tickers());
    j["tickers"] = panel.tickers();
    j["pi_hat"] = matrix_json(est.pi_hat);
    write_text(out_path, j.dump(2) + "\n");
    return 0;
}

int cmd_portfolios(const PanelArgs& pa, const SslArgs& sa, bool screen, const std::string& test_csv,
                   const std::string& out_path, const std::string& metrics_path) {
    const PricePanel panel = screened(pa.load(), screen, std::nullopt);
    const CointegrationEstimate est = estimate(panel, sa.c);
    const auto ports = extract_portfolios(est.pi_hat);
    const ReturnsPanel train = simple_returns(panel);
    std::optional<ReturnsPanel> test;
    if (!test_csv.empty()) {
        const PricePanel tp = pa.load_panel(test_csv);
        if (tp.tickers() != std::vector<std::string>(panel.tickers()))
            throw DimensionError("test panel must carry the same tickers as the training panel");
        test = simple_returns(tp);
    }
    json list = json::array();
    std::vector<PortfolioMetricsRow> rows;
    for (std::size_t k = 0; k < ports.size(); ++k) {
        const auto& w = ports[k].weights;
        const RiskMetrics in = risk_metrics(portfolio_returns(w, train));
        json item = {{"id", k},
                     {"source_row", ports[k].source_row},
                     {"weights", std::vector<double>(w.data(), w.data() + w.size())},
                     {"in_sample", metrics_json(in)}};
        RiskMetrics shown = in;
        if (test) {
            shown = risk_metrics(portfolio_returns(w, *test));
            item["out_of_sample"] = metrics_json(shown);
        }
        rows.push_back({0, k, shown});
        list.push_back(item);
    }
    const json j = {{"tickers", panel.tickers()}, {"rank", est.rank}, {"portfolios", list}};
    write_text(out_path, j.dump(2) + "\n");
    if (!metrics_path.empty()) write_text(metrics_path, metrics_csv(rows));
    return 0;
}

Eigen::MatrixXd portfolio_matrix(const json& j, const PricePanel& panel) {
    const auto tickers = j.at("tickers").get<std::vector<std::string>>();
    const auto& list = j.at("portfolios");
    Eigen::MatrixXd alphas = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(list.size()),
                                                   static_cast<Eigen::Index>(panel.p()));
    for (std::size_t k = 0; k < list.size(); ++k) {
        const auto w = list[k].at("weights").get<std::vector<double>>();
        if (w.size() != tickers.size()) throw DimensionError("portfolio weights do not match the ticker list");
        for (std::size_t i = 0; i < w.size(); ++i) {
            const auto row = panel.find(tickers[i]);
            if (!row) throw DimensionError("ticker '" + tickers[i] + "' is not in the panel");
            alphas(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(*row)) = w[i];
        }
    }
    return alphas;
}

int cmd_optimize(const PanelArgs& pa, const std::string& portfolios_path, const std::vector<std::string>& benchmarks,
                 const std::string& objective, const std::string& preset, std::uint64_t seed, int n_starts,
                 const std::string& test_csv, const std::string& out_path, const std::string& series_path) {
    const PricePanel panel = pa.load();
    std::ifstream in(portfolios_path);
    if (!in) throw Error("cannot open '" + portfolios_path + "'");
    const json pj = json::parse(in);
    const Eigen::MatrixXd alphas = portfolio_matrix(pj, panel);

    Eigen::MatrixXd betas = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(benchmarks.size()),
                                                  static_cast<Eigen::Index>(panel.p()));
    for (std::size_t b = 0; b < benchmarks.size(); ++b) {
        if (benchmarks[b] == "ew") {
            betas.row(static_cast<Eigen::Index>(b)) = equal_weight(panel.p()).transpose();
        } else {
            const auto row = panel.find(benchmarks[b]);
            if (!row) throw Error("benchmark ticker '" + benchmarks[b] + "' is not in the panel");
            betas(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(*row)) = 1.0;
        }
    }
    const ConstraintSet cs =
        ConstraintSet::make(preset_from_string(preset), static_cast<std::size_t>(alphas.rows()), benchmarks.size());
    OptimizerOptions oo;
    oo.n_starts = n_starts;
    const ReturnsPanel train = simple_returns(panel);
    const OptimizationResult res = optimize(objective == "vol_min" ? Objective::vol_min : Objective::sharpe_max, alphas,
                                            betas, train, cs, seed, oo);
    json j = result_to_json(res);
    j["constraints"] = preset;
    PerfSeries series = combine(res.theta_star, alphas, betas, train);
    if (!test_csv.empty()) {
        const PricePanel tp = pa.load_panel(test_csv);
        if (tp.tickers() != std::vector<std::string>(panel.tickers()))
            throw DimensionError("test panel must carry the same tickers as the training panel");
        series = combine(res.theta_star, alphas, betas, simple_returns(tp));
        j["out_of_sample"] = metrics_json(risk_metrics(series));
    }
    write_text(out_path, j.dump(2) + "\n");
    if (!series_path.empty()) {
        std::ostringstream s;
        s << "date,daily_return,cumulative\n";
        for (std::size_t t = 0; t < series.dates.size(); ++t)
            s << format_date(series.dates[t]) << ',' << format_number(series.daily_returns[t], 17) << ','
              << format_number(series.cumulative[t], 17) << '\n';
        write_text(series_path, s.str());
    }
    return 0;
}

int cmd_backtest(const std::string& config_path, const std::string& out_dir) {
    const BacktestConfig config = load_config(config_path);
    const BacktestReport report = run(config);
    emit(report, out_dir);
    for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
    std::cout << summary_csv(summarize(report));
    return exit_code(report);
}

int cmd_simulate(std::size_t p, std::size_t r, std::size_t T, std::uint64_t seed, const SpecOptions& opts,
                 const std::string& out_csv, std::string sidecar) {
    const VecmSpec spec = random_spec(p, r, T, seed, opts);
    const Simulation sim = generate(spec);
    write_csv(sim.panel, out_csv);
    if (sidecar.empty()) sidecar = std::filesystem::path(out_csv).replace_extension(".json").string();
    json j = spec_to_json(spec);
    j["tickers"] = sim.panel.tickers();
    write_text(sidecar, j.dump(2) + "\n");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sparse cointegration estimation, stationary portfolios and rolling backtests"};
    app.require_subcommand(1);

    PanelArgs adf_panel;
    std::vector<std::string> adf_tickers;
    std::optional<std::size_t> adf_lag;
    bool adf_fixed = false;
    auto* adf = app.add_subcommand("adf", "Augmented Dickey-Fuller test on each ticker's price level");
    adf_panel.add(adf);
    adf->add_option("--ticker", adf_tickers, "Restrict to these tickers");
    adf->add_option("--max-lag", adf_lag, "Largest lag considered (default Schwert)");
    adf->add_flag("--fixed-lag", adf_fixed, "Use --max-lag as the lag instead of choosing by AIC");

    PanelArgs est_panel;
    SslArgs est_ssl;
    bool est_screen = false;
    std::string est_out;
    auto* est = app.add_subcommand("estimate", "Estimate the sparse error-correction matrix");
    est_panel.add(est);
    est_ssl.add(est);
    est->add_flag("--screen", est_screen, "Keep only tickers that pass the I(1) screen");
    est->add_option("--out", est_out, "Output JSON (default stdout)");

    PanelArgs port_panel;
    SslArgs port_ssl;
    bool port_screen = false;
    std::string port_test, port_out, port_metrics;
    auto* port = app.add_subcommand("portfolios", "Extract stationary portfolios from an estimate");
    port_panel.add(port);
    port_ssl.add(port);
    port->add_flag("--screen", port_screen, "Keep only tickers that pass the I(1) screen");
    port->add_option("--test-csv", port_test, "Out-of-sample prices, starting at the last training close");
    port->add_option("--out", port_out, "Output JSON (default stdout)");
    port->add_option("--metrics", port_metrics, "Per-portfolio metrics CSV");

    PanelArgs opt_panel;
    std::string opt_ports, opt_objective = "sharpe_max", opt_preset = "us_only", opt_test, opt_out, opt_series;
    std::vector<std::string> opt_bench;
    std::uint64_t opt_seed = 0;
    int opt_starts = 16;
    auto* opt = app.add_subcommand("optimize", "Optimize the mix of stationary portfolios and benchmarks");
    opt_panel.add(opt);
    opt->add_option("--portfolios", opt_ports, "JSON written by the portfolios subcommand")->required();
    opt->add_option("--benchmark", opt_bench, "Benchmark ticker, or 'ew' for equal weight (repeatable)")->required();
    opt->add_option("--objective", opt_objective, "sharpe_max or vol_min")
        ->check(CLI::IsMember({"sharpe_max", "vol_min"}));
    opt->add_option("--constraints", opt_preset, "us_only, joint or relaxed")
        ->check(CLI::IsMember({"us_only", "joint", "relaxed"}));
    opt->add_option("--seed", opt_seed, "Seed for the random starting points");
    opt->add_option("--n-starts", opt_starts, "Number of starting points");
    opt->add_option("--test-csv", opt_test, "Out-of-sample prices, starting at the last training close");
    opt->add_option("--out", opt_out, "Output JSON (default stdout)");
    opt->add_option("--series", opt_series, "CSV of the combined daily returns");

    std::string bt_config, bt_out;
    auto* bt = app.add_subcommand("backtest", "Rolling train/test backtest");
    bt->add_option("--config", bt_config, "key = value config file")->required();
    bt->add_option("--out", bt_out, "Output directory")->required();

    std::size_t sim_p = 50, sim_r = 3, sim_T = 500;
    std::uint64_t sim_seed = 0;
    SpecOptions sim_opts;
    std::string sim_out, sim_sidecar;
    auto* sim = app.add_subcommand("simulate", "Simulate a cointegrated price panel with known structure");
    sim->add_option("--p", sim_p, "Number of assets");
    sim->add_option("--r", sim_r, "Number of cointegrating relations");
    sim->add_option("--T", sim_T, "Number of daily steps");
    sim->add_option("--seed", sim_seed, "Seed");
    sim->add_option("--noise", sim_opts.noise_std, "Idiosyncratic noise sd");
    sim->add_option("--market", sim_opts.market_std, "Common shock sd");
    sim->add_option("--out", sim_out, "Wide CSV of prices")->required();
    sim->add_option("--sidecar", sim_sidecar, "JSON with the true structure (default: --out with .json)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*adf) return cmd_adf(adf_panel, adf_tickers, adf_lag, adf_fixed);
        if (*est) return cmd_estimate(est_panel, est_ssl, est_screen, est_out);
        if (*port) return cmd_portfolios(port_panel, port_ssl, port_screen, port_test, port_out, port_metrics);
        if (*opt)
            return cmd_optimize(opt_panel, opt_ports, opt_bench, opt_objective, opt_preset, opt_seed, opt_starts,
                                opt_test, opt_out, opt_series);
        if (*bt) return cmd_backtest(bt_config, bt_out);
        if (*sim) return cmd_simulate(sim_p, sim_r, sim_T, sim_seed, sim_opts, sim_out, sim_sidecar);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
