#include "cointlab/backtest.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "cointlab/errors.hpp"
#include "cointlab/format.hpp"
#include "cointlab/stationarity.hpp"

namespace cointlab {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, sep)) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

void check_name(const std::string& key, const std::string& name) {
    if (name.empty()) throw ConfigError("key '" + key + "' needs a name after the dot");
    for (char c : name)
        if (c == ',' || c == '"' || c == '+' || c == ':')
            throw ConfigError("name '" + name + "' in key '" + key + "' contains a reserved character");
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
    std::istringstream in(value);
    T v{};
    in >> v;
    if (in.fail() || !in.eof()) throw ConfigError("key '" + key + "': cannot parse '" + value + "'");
    return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    throw ConfigError("key '" + key + "': expected true or false, got '" + value + "'");
}

std::string slug(const std::string& name) {
    std::string s;
    for (char c : name) s += std::isalnum(static_cast<unsigned char>(c)) ? static_cast<char>(std::tolower(c)) : '_';
    return s;
}

std::string benchmark_label(const std::string& name) { return name + " Benchmark"; }

double median(std::vector<double> v) {
    if (v.empty()) return kNaN;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mean(const std::vector<double>& v) {
    if (v.empty()) return kNaN;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

// Seeds for the per-fold optimizer runs.
std::uint64_t derive_seed(std::uint64_t seed, std::size_t fold, std::size_t strategy) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (fold * 1024 + strategy + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

BacktestConfig parse_config(const std::string& text, const std::string& base_dir) {
    std::map<std::string, std::string> kv;
    std::vector<std::string> order;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        if (kv.count(key)) throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
        kv[key] = value;
        order.push_back(key);
    }

    BacktestConfig c;
    c.echo = kv;
    CsvOptions csv;
    std::vector<std::pair<std::string, std::string>> panel_paths;
    std::optional<std::string> missing;

    for (const std::string& key : order) {
        const std::string& value = kv[key];
        const auto dot = key.find('.');
        const std::string head = key.substr(0, dot);
        const std::string tail = dot == std::string::npos ? "" : key.substr(dot + 1);
        if (dot != std::string::npos && head != "ssl" && head != "adf" && head != "optimize") check_name(key, tail);

        if (head == "panel" && dot != std::string::npos) {
            panel_paths.emplace_back(tail, value);
        } else if (head == "joint" && dot != std::string::npos) {
            c.joint_spaces.emplace_back(tail, split(value, '+'));
        } else if (head == "benchmark" && dot != std::string::npos) {
            BenchmarkSpec b;
            b.name = tail;
            const auto colon = value.find(':');
            b.space = trim(value.substr(0, colon));
            if (colon != std::string::npos) b.ticker = trim(value.substr(colon + 1));
            if (b.space.empty()) throw ConfigError("benchmark '" + tail + "' needs a space");
            c.benchmarks.push_back(b);
        } else if (head == "strategy" && dot != std::string::npos) {
            c.strategies.push_back({tail, split(value, '+')});
        } else if (key == "layout") {
            if (value == "wide") csv.layout = CsvLayout::wide;
            else if (value == "long") csv.layout = CsvLayout::long_format;
            else throw ConfigError("layout must be wide or long");
        } else if (key == "missing") {
            missing = value;
        } else if (key == "train_months") {
            c.train_months = parse_number<int>(key, value);
        } else if (key == "folds") {
            c.folds = parse_number<int>(key, value);
        } else if (key == "screen") {
            c.screen = parse_bool(key, value);
        } else if (key == "adf.max_lag") {
            c.adf_max_lag = parse_number<std::size_t>(key, value);
        } else if (key == "ssl.lambda1") {
            c.ssl.lambda1 = parse_number<double>(key, value);
        } else if (key == "ssl.lambda0_init") {
            c.ssl.lambda0_init = parse_number<double>(key, value);
        } else if (key == "ssl.lambda_step") {
            c.ssl.lambda_step = parse_number<double>(key, value);
        } else if (key == "ssl.em_max_iter") {
            c.ssl.em_max_iter = parse_number<int>(key, value);
        } else if (key == "ssl.em_tol") {
            c.ssl.em_tol = parse_number<double>(key, value);
        } else if (key == "ssl.zero_tol") {
            c.ssl.zero_tol = parse_number<double>(key, value);
        } else if (key == "ssl.phase2_patience") {
            c.ssl.phase2_patience = parse_number<int>(key, value);
        } else if (key == "ssl.ceiling_factor") {
            c.ssl.ceiling_factor = parse_number<double>(key, value);
        } else if (key == "objective") {
            if (value == "sharpe_max") c.objective = Objective::sharpe_max;
            else if (value == "vol_min") c.objective = Objective::vol_min;
            else if (value == "none") c.objective.reset();
            else throw ConfigError("objective must be sharpe_max, vol_min or none");
        } else if (key == "constraints") {
            c.preset = preset_from_string(value);
        } else if (key == "optimize.benchmarks") {
            c.optimize_benchmarks = split(value, ',');
        } else if (key == "n_starts") {
            c.n_starts = parse_number<int>(key, value);
        } else if (key == "seed") {
            c.seed = parse_number<std::uint64_t>(key, value);
        } else {
            throw ConfigError("unknown config key '" + key + "'");
        }
    }
    c.ssl.seed = c.seed;

    if (missing) {
        if (*missing == "forward_fill") c.fill = FillPolicy::forward_fill;
        else if (*missing == "drop_ticker") c.fill = FillPolicy::drop_ticker;
        else if (*missing != "error") throw ConfigError("missing must be error, forward_fill or drop_ticker");
    }
    csv.allow_gaps = c.fill.has_value();
    if (panel_paths.empty()) throw ConfigError("config needs at least one panel.<SPACE> = <csv>");
    for (const auto& [name, path] : panel_paths) {
        std::filesystem::path p(path);
        if (p.is_relative()) p = std::filesystem::path(base_dir) / p;
        c.panels.emplace_back(name, load_csv(p.string(), csv));
    }
    return c;
}

BacktestConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), std::filesystem::path(path).parent_path().string());
}

namespace {

struct Universe {
    PricePanel panel;
    std::vector<std::string> space_names;
    std::vector<std::vector<std::size_t>> constituents;  // rows into panel, benchmark columns removed
    std::vector<std::string> benchmark_names;
    std::vector<Eigen::VectorXd> benchmark_weights;
};

Universe build_universe(const BacktestConfig& c) {
    if (c.panels.empty()) throw ConfigError("no panels configured");
    // Dates common to every panel.
    std::vector<Date> dates = c.panels.front().second.dates();
    for (std::size_t k = 1; k < c.panels.size(); ++k) {
        const auto& other = c.panels[k].second.dates();
        std::vector<Date> both;
        std::set_intersection(dates.begin(), dates.end(), other.begin(), other.end(), std::back_inserter(both));
        dates = std::move(both);
    }
    if (dates.empty()) throw ConfigError("panels share no dates");

    std::vector<std::string> tickers;
    std::set<std::string> seen;
    std::vector<std::vector<std::string>> panel_tickers;
    for (const auto& [name, panel] : c.panels) {
        for (const auto& t : panel.tickers())
            if (!seen.insert(t).second) throw ConfigError("ticker '" + t + "' appears in more than one panel");
        tickers.insert(tickers.end(), panel.tickers().begin(), panel.tickers().end());
        panel_tickers.push_back(panel.tickers());
    }
    Eigen::MatrixXd prices(static_cast<Eigen::Index>(tickers.size()), static_cast<Eigen::Index>(dates.size()));
    Eigen::Index row = 0;
    for (const auto& [name, panel] : c.panels) {
        std::vector<Eigen::Index> cols;
        std::size_t j = 0;
        for (const Date& d : dates) {
            while (panel.dates()[j] < d) ++j;
            cols.push_back(static_cast<Eigen::Index>(j));
        }
        for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(panel.p()); ++i, ++row)
            for (std::size_t t = 0; t < cols.size(); ++t)
                prices(row, static_cast<Eigen::Index>(t)) = panel.prices()(i, cols[t]);
    }
    Universe u;
    u.panel = PricePanel(dates, tickers, prices);
    if (c.fill) u.panel = fill_missing(u.panel, *c.fill);
    else if (u.panel.has_gaps()) throw IngestError("panel has gaps; set missing = forward_fill or drop_ticker");

    std::map<std::string, std::vector<std::string>> members;
    for (std::size_t k = 0; k < c.panels.size(); ++k) {
        const std::string& name = c.panels[k].first;
        if (members.count(name)) throw ConfigError("space '" + name + "' defined twice");
        for (const auto& t : panel_tickers[k])
            if (u.panel.find(t)) members[name].push_back(t);
        u.space_names.push_back(name);
    }
    for (const auto& [name, parts] : c.joint_spaces) {
        if (members.count(name)) throw ConfigError("space '" + name + "' defined twice");
        if (parts.empty()) throw ConfigError("joint space '" + name + "' has no components");
        std::set<std::string> all;
        for (const auto& part : parts) {
            const auto it = members.find(part);
            if (it == members.end()) throw ConfigError("joint space '" + name + "' refers to unknown space '" + part + "'");
            all.insert(it->second.begin(), it->second.end());
        }
        // Keep universe order.
        for (const auto& t : u.panel.tickers())
            if (all.count(t)) members[name].push_back(t);
        u.space_names.push_back(name);
    }

    std::set<std::string> benchmark_tickers;
    for (const auto& b : c.benchmarks) {
        const auto it = members.find(b.space);
        if (it == members.end()) throw ConfigError("benchmark '" + b.name + "' refers to unknown space '" + b.space + "'");
        if (!b.ticker.empty()) {
            if (std::find(it->second.begin(), it->second.end(), b.ticker) == it->second.end())
                throw ConfigError("benchmark ticker '" + b.ticker + "' is not in space '" + b.space + "'");
            benchmark_tickers.insert(b.ticker);
        }
    }
    for (const auto& name : u.space_names) {
        std::vector<std::size_t> rows;
        for (const auto& t : members[name])
            if (!benchmark_tickers.count(t)) rows.push_back(*u.panel.find(t));
        u.constituents.push_back(rows);
    }
    auto space_index = [&](const std::string& name) {
        return static_cast<std::size_t>(std::find(u.space_names.begin(), u.space_names.end(), name) -
                                        u.space_names.begin());
    };
    std::set<std::string> bnames;
    for (const auto& b : c.benchmarks) {
        if (!bnames.insert(b.name).second) throw ConfigError("benchmark '" + b.name + "' defined twice");
        Eigen::VectorXd w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(u.panel.p()));
        if (!b.ticker.empty()) {
            w(static_cast<Eigen::Index>(*u.panel.find(b.ticker))) = 1.0;
        } else {
            const auto& rows = u.constituents[space_index(b.space)];
            if (rows.empty()) throw ConfigError("benchmark '" + b.name + "' has an empty space");
            for (std::size_t r : rows) w(static_cast<Eigen::Index>(r)) = 1.0 / static_cast<double>(rows.size());
        }
        u.benchmark_names.push_back(b.name);
        u.benchmark_weights.push_back(w);
    }
    for (std::size_t k = 0; k < u.space_names.size(); ++k)
        if (u.constituents[k].empty()) throw ConfigError("space '" + u.space_names[k] + "' has no constituents");
    return u;
}

struct SeriesMetrics {
    RiskMetrics metrics;
    double ann_return = 0.0;
};

SeriesMetrics measure(const PerfSeries& s) { return {risk_metrics(s), annualized_return(s)}; }

}  // namespace

BacktestReport run(const BacktestConfig& config) {
    config.ssl.validate();
    if (config.n_starts < 1) throw ConfigError("n_starts must be at least 1");
    const Universe u = build_universe(config);

    // Strategies and the benchmarks they mix with.
    std::vector<StrategySpec> strategies;
    std::vector<std::size_t> opt_benchmarks;
    if (config.objective) {
        strategies = config.strategies;
        if (strategies.empty())
            strategies.push_back({*config.objective == Objective::sharpe_max ? "SR Optimised" : "Minimised Volatility",
                                  u.space_names});
        for (const auto& s : strategies)
            for (const auto& sp : s.spaces)
                if (std::find(u.space_names.begin(), u.space_names.end(), sp) == u.space_names.end())
                    throw ConfigError("strategy '" + s.name + "' refers to unknown space '" + sp + "'");
        const auto& names = config.optimize_benchmarks.empty() ? u.benchmark_names : config.optimize_benchmarks;
        for (const auto& n : names) {
            const auto it = std::find(u.benchmark_names.begin(), u.benchmark_names.end(), n);
            if (it == u.benchmark_names.end()) throw ConfigError("optimize.benchmarks names unknown benchmark '" + n + "'");
            opt_benchmarks.push_back(static_cast<std::size_t>(it - u.benchmark_names.begin()));
        }
        if (opt_benchmarks.empty()) throw ConfigError("optimization needs at least one benchmark");
        try {
            ConstraintSet::make(config.preset, 1, opt_benchmarks.size()).validate();
        } catch (const ConstraintError& e) {
            throw ConfigError(std::string("constraints = ") + to_string(config.preset) + ": " + e.what());
        }
    } else if (!config.strategies.empty()) {
        throw ConfigError("strategy keys need an objective");
    }

    BacktestReport report;
    report.config = nlohmann::json::object();
    for (const auto& [k, v] : config.echo) report.config[k] = v;
    report.seed = config.seed;
    report.spaces = u.space_names;
    for (const auto& b : u.benchmark_names) report.strategies.push_back(benchmark_label(b));
    for (const auto& s : strategies) {
        if (std::find(report.strategies.begin(), report.strategies.end(), s.name) != report.strategies.end())
            throw ConfigError("strategy name '" + s.name + "' is used twice");
        report.strategies.push_back(s.name);
    }

    const RollingSchedule schedule = make_schedule(u.panel, config.train_months, config.folds);
    const auto p_u = static_cast<Eigen::Index>(u.panel.p());
    for (std::size_t f = 0; f < schedule.folds.size(); ++f) {
        const Fold& fold = schedule.folds[f];
        FoldReport fr;
        fr.index = f;
        fr.fold = fold;
        const PricePanel train = u.panel.slice(fold.train_first, fold.train_last);
        // Test returns start from the last training close.
        const ReturnsPanel train_ret = simple_returns(train);
        const ReturnsPanel test_ret = simple_returns(u.panel.slice(fold.train_last, fold.test_last));
        const std::string tag = "fold " + std::to_string(f) + " (" + month_label(fold.test_start) + ")";

        std::vector<std::vector<Eigen::VectorXd>> space_weights(u.space_names.size());
        for (std::size_t s = 0; s < u.space_names.size(); ++s) {
            SpaceFold sf;
            sf.space = u.space_names[s];
            const auto& rows = u.constituents[s];
            sf.n_constituents = rows.size();
            const PricePanel sub = train.select(rows);
            try {
                std::vector<std::size_t> keep;
                if (config.screen) {
                    keep = screen_i1(sub, config.adf_max_lag);
                } else {
                    keep.resize(rows.size());
                    for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = i;
                }
                sf.n_i1 = keep.size();
                if (keep.empty()) {
                    sf.status = SpaceStatus::no_i1;
                    sf.message = "no I(1) tickers in the training window";
                } else {
                    const PricePanel kept = sub.select(keep);
                    const CointegrationEstimate est = estimate(kept, config.ssl);
                    sf.rank = est.rank;
                    for (const auto& sp : extract_portfolios(est.pi_hat, 1e-8, static_cast<int>(f))) {
                        Eigen::VectorXd w = Eigen::VectorXd::Zero(p_u);
                        PortfolioRecord rec;
                        rec.id = sf.portfolios.size();
                        rec.source_row = sp.source_row;
                        for (std::size_t i = 0; i < keep.size(); ++i) {
                            w(static_cast<Eigen::Index>(rows[keep[i]])) = sp.weights(static_cast<Eigen::Index>(i));
                            rec.tickers.push_back(kept.tickers()[i]);
                            rec.weights.push_back(sp.weights(static_cast<Eigen::Index>(i)));
                        }
                        const SeriesMetrics in = measure(portfolio_returns(w, train_ret));
                        const SeriesMetrics out = measure(portfolio_returns(w, test_ret));
                        rec.in_sample = in.metrics;
                        rec.return_in_sample = in.ann_return;
                        rec.out_of_sample = out.metrics;
                        rec.return_out_of_sample = out.ann_return;
                        sf.portfolios.push_back(std::move(rec));
                        space_weights[s].push_back(std::move(w));
                    }
                }
            } catch (const Error& e) {
                sf.status = SpaceStatus::failed;
                sf.message = e.what();
                sf.portfolios.clear();
                space_weights[s].clear();
            }
            std::vector<double> vin, vout;
            for (const auto& rec : sf.portfolios) {
                vin.push_back(rec.in_sample.ann_vol_pct);
                vout.push_back(rec.out_of_sample.ann_vol_pct);
            }
            sf.mean_vol_in_sample = mean(vin);
            sf.median_vol_in_sample = median(vin);
            sf.mean_vol_out_of_sample = mean(vout);
            sf.median_vol_out_of_sample = median(vout);
            if (sf.status != SpaceStatus::ok) {
                fr.flagged = true;
                report.warnings.push_back(tag + ", space " + sf.space + ": " + sf.message);
            }
            fr.spaces.push_back(std::move(sf));
        }

        for (std::size_t b = 0; b < u.benchmark_names.size(); ++b) {
            BenchmarkFold bf;
            bf.name = u.benchmark_names[b];
            const SeriesMetrics in = measure(portfolio_returns(u.benchmark_weights[b], train_ret));
            const SeriesMetrics out = measure(portfolio_returns(u.benchmark_weights[b], test_ret));
            bf.in_sample = in.metrics;
            bf.return_in_sample = in.ann_return;
            bf.out_of_sample = out.metrics;
            bf.return_out_of_sample = out.ann_return;
            fr.benchmarks.push_back(bf);
        }

        for (std::size_t k = 0; k < strategies.size(); ++k) {
            StrategyFold sfold;
            sfold.name = strategies[k].name;
            std::vector<const Eigen::VectorXd*> cands;
            for (const auto& sp : strategies[k].spaces) {
                const auto s = static_cast<std::size_t>(
                    std::find(u.space_names.begin(), u.space_names.end(), sp) - u.space_names.begin());
                for (const auto& w : space_weights[s]) cands.push_back(&w);
            }
            sfold.n_candidates = cands.size();
            Eigen::MatrixXd alphas(static_cast<Eigen::Index>(cands.size()), p_u);
            for (std::size_t i = 0; i < cands.size(); ++i) alphas.row(static_cast<Eigen::Index>(i)) = cands[i]->transpose();
            Eigen::MatrixXd betas(static_cast<Eigen::Index>(opt_benchmarks.size()), p_u);
            for (std::size_t i = 0; i < opt_benchmarks.size(); ++i)
                betas.row(static_cast<Eigen::Index>(i)) = u.benchmark_weights[opt_benchmarks[i]].transpose();
            try {
                if (cands.empty()) throw ConstraintError("no candidate portfolios");
                const ConstraintSet cs = ConstraintSet::make(config.preset, cands.size(), opt_benchmarks.size());
                OptimizerOptions oo;
                oo.n_starts = config.n_starts;
                const OptimizationResult res =
                    optimize(*config.objective, alphas, betas, train_ret, cs, derive_seed(config.seed, f, k), oo);
                sfold.theta.assign(res.theta_star.data(), res.theta_star.data() + res.theta_star.size());
                sfold.objective_value = res.objective_value;
                const SeriesMetrics in = measure(combine(res.theta_star, alphas, betas, train_ret));
                const SeriesMetrics out = measure(combine(res.theta_star, alphas, betas, test_ret));
                sfold.in_sample = in.metrics;
                sfold.return_in_sample = in.ann_return;
                sfold.out_of_sample = out.metrics;
                sfold.return_out_of_sample = out.ann_return;
                sfold.ok = true;
            } catch (const Error& e) {
                sfold.ok = false;
                sfold.message = e.what();
                fr.flagged = true;
                report.warnings.push_back(tag + ", strategy " + sfold.name + ": " + sfold.message);
            }
            fr.strategies.push_back(std::move(sfold));
        }
        report.folds.push_back(std::move(fr));
    }

    // Concatenated test periods of the unflagged folds.
    std::vector<std::vector<Date>> dates(report.strategies.size());
    std::vector<std::vector<double>> rets(report.strategies.size());
    for (const FoldReport& fr : report.folds) {
        if (fr.flagged) continue;
        const Fold& fold = fr.fold;
        const ReturnsPanel test_ret = simple_returns(u.panel.slice(fold.train_last, fold.test_last));
        std::size_t idx = 0;
        auto append = [&](const PerfSeries& s) {
            dates[idx].insert(dates[idx].end(), s.dates.begin(), s.dates.end());
            rets[idx].insert(rets[idx].end(), s.daily_returns.begin(), s.daily_returns.end());
            ++idx;
        };
        for (const auto& w : u.benchmark_weights) append(portfolio_returns(w, test_ret));
        for (const StrategyFold& sfold : fr.strategies) {
            // Recompute from theta and the frozen candidate weights.
            Eigen::VectorXd net = Eigen::VectorXd::Zero(p_u);
            const auto& spec = strategies[idx - u.benchmark_weights.size()];
            std::size_t i = 0;
            for (const auto& sp : spec.spaces) {
                for (const SpaceFold& sf : fr.spaces) {
                    if (sf.space != sp) continue;
                    for (const PortfolioRecord& rec : sf.portfolios) {
                        Eigen::VectorXd w = Eigen::VectorXd::Zero(p_u);
                        for (std::size_t t = 0; t < rec.tickers.size(); ++t)
                            w(static_cast<Eigen::Index>(*u.panel.find(rec.tickers[t]))) = rec.weights[t];
                        net += sfold.theta[i++] * w;
                    }
                }
            }
            for (std::size_t b = 0; b < opt_benchmarks.size(); ++b)
                net += sfold.theta[i++] * u.benchmark_weights[opt_benchmarks[b]];
            append(portfolio_returns(net, test_ret));
        }
    }
    for (std::size_t k = 0; k < report.strategies.size(); ++k)
        report.series.push_back({report.strategies[k], make_series(dates[k], rets[k])});
    if (std::all_of(report.folds.begin(), report.folds.end(), [](const FoldReport& fr) { return fr.flagged; }))
        report.warnings.push_back("every fold was flagged; the summary is empty");
    return report;
}

std::vector<SummaryRow> summarize(const BacktestReport& report) {
    std::vector<SummaryRow> rows;
    for (const StrategySeries& s : report.series) {
        SummaryRow row;
        row.strategy = s.name;
        if (s.series.daily_returns.size() < 2) {
            row.sharpe = kNaN;
            row.max_drawdown_pct = kNaN;
        } else {
            const RiskMetrics m = risk_metrics(s.series);
            row.sharpe = m.sharpe;
            row.max_drawdown_pct = m.max_drawdown_pct;
        }
        rows.push_back(row);
    }
    return rows;
}

int exit_code(const BacktestReport& report) {
    for (const auto& f : report.folds)
        if (f.flagged) return 2;
    return 0;
}

// ---- JSON ----

namespace {

nlohmann::json num(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }
double num(const nlohmann::json& j) { return j.is_null() ? kNaN : j.get<double>(); }

nlohmann::json metrics_json(const RiskMetrics& m) {
    return {{"vol", num(m.ann_vol_pct)}, {"sharpe", num(m.sharpe)}, {"mdd", num(m.max_drawdown_pct)}};
}
RiskMetrics metrics_from(const nlohmann::json& j) {
    return {num(j.at("vol")), num(j.at("sharpe")), num(j.at("mdd"))};
}

std::string status_name(SpaceStatus s) {
    switch (s) {
        case SpaceStatus::ok: return "ok";
        case SpaceStatus::no_i1: return "no_i1";
        case SpaceStatus::failed: return "failed";
    }
    return "failed";
}
SpaceStatus status_from(const std::string& s) {
    if (s == "ok") return SpaceStatus::ok;
    if (s == "no_i1") return SpaceStatus::no_i1;
    if (s == "failed") return SpaceStatus::failed;
    throw Error("unknown space status '" + s + "'");
}

Date date_from(const nlohmann::json& j) {
    const auto d = parse_date(j.get<std::string>());
    if (!d) throw Error("bad date in report: " + j.dump());
    return *d;
}

nlohmann::json doubles(const std::vector<double>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (double x : v) a.push_back(num(x));
    return a;
}
std::vector<double> doubles_from(const nlohmann::json& j) {
    std::vector<double> v;
    for (const auto& x : j) v.push_back(num(x));
    return v;
}

}  // namespace

nlohmann::json report_to_json(const BacktestReport& r) {
    nlohmann::json folds = nlohmann::json::array();
    for (const FoldReport& f : r.folds) {
        nlohmann::json spaces = nlohmann::json::array();
        for (const SpaceFold& s : f.spaces) {
            nlohmann::json ports = nlohmann::json::array();
            for (const PortfolioRecord& p : s.portfolios)
                ports.push_back({{"id", p.id},
                                 {"source_row", p.source_row},
                                 {"tickers", p.tickers},
                                 {"weights", doubles(p.weights)},
                                 {"in_sample", metrics_json(p.in_sample)},
                                 {"out_of_sample", metrics_json(p.out_of_sample)},
                                 {"return_in_sample", num(p.return_in_sample)},
                                 {"return_out_of_sample", num(p.return_out_of_sample)}});
            spaces.push_back({{"space", s.space},
                              {"status", status_name(s.status)},
                              {"message", s.message},
                              {"n_constituents", s.n_constituents},
                              {"n_i1", s.n_i1},
                              {"rank", s.rank},
                              {"portfolios", ports},
                              {"mean_vol_in_sample", num(s.mean_vol_in_sample)},
                              {"median_vol_in_sample", num(s.median_vol_in_sample)},
                              {"mean_vol_out_of_sample", num(s.mean_vol_out_of_sample)},
                              {"median_vol_out_of_sample", num(s.median_vol_out_of_sample)}});
        }
        nlohmann::json benches = nlohmann::json::array();
        for (const BenchmarkFold& b : f.benchmarks)
            benches.push_back({{"name", b.name},
                               {"in_sample", metrics_json(b.in_sample)},
                               {"out_of_sample", metrics_json(b.out_of_sample)},
                               {"return_in_sample", num(b.return_in_sample)},
                               {"return_out_of_sample", num(b.return_out_of_sample)}});
        nlohmann::json strats = nlohmann::json::array();
        for (const StrategyFold& s : f.strategies)
            strats.push_back({{"name", s.name},
                              {"ok", s.ok},
                              {"message", s.message},
                              {"n_candidates", s.n_candidates},
                              {"theta", doubles(s.theta)},
                              {"objective_value", num(s.objective_value)},
                              {"in_sample", metrics_json(s.in_sample)},
                              {"out_of_sample", metrics_json(s.out_of_sample)},
                              {"return_in_sample", num(s.return_in_sample)},
                              {"return_out_of_sample", num(s.return_out_of_sample)}});
        const Fold& fd = f.fold;
        folds.push_back({{"index", f.index},
                         {"train_start", format_date(fd.train_start)},
                         {"train_end", format_date(fd.train_end)},
                         {"test_start", format_date(fd.test_start)},
                         {"test_end", format_date(fd.test_end)},
                         {"columns", {fd.train_first, fd.train_last, fd.test_first, fd.test_last}},
                         {"flagged", f.flagged},
                         {"spaces", spaces},
                         {"benchmarks", benches},
                         {"strategies", strats}});
    }
    nlohmann::json series = nlohmann::json::array();
    for (const StrategySeries& s : r.series) {
        std::vector<std::string> dates;
        for (const Date& d : s.series.dates) dates.push_back(format_date(d));
        series.push_back({{"name", s.name}, {"dates", dates}, {"daily_returns", doubles(s.series.daily_returns)}});
    }
    nlohmann::json summary = nlohmann::json::array();
    for (const SummaryRow& row : summarize(r))
        summary.push_back({{"strategy", row.strategy}, {"sharpe", num(row.sharpe)}, {"mdd", num(row.max_drawdown_pct)}});
    return {{"config", r.config},  {"seed", r.seed},       {"spaces", r.spaces},     {"strategies", r.strategies},
            {"folds", folds},      {"series", series},     {"summary", summary},     {"warnings", r.warnings},
            {"exit_code", exit_code(r)}};
}

BacktestReport report_from_json(const nlohmann::json& j) {
    BacktestReport r;
    r.config = j.at("config");
    r.seed = j.at("seed").get<std::uint64_t>();
    r.spaces = j.at("spaces").get<std::vector<std::string>>();
    r.strategies = j.at("strategies").get<std::vector<std::string>>();
    r.warnings = j.at("warnings").get<std::vector<std::string>>();
    for (const auto& jf : j.at("folds")) {
        FoldReport f;
        f.index = jf.at("index").get<std::size_t>();
        f.fold.train_start = date_from(jf.at("train_start"));
        f.fold.train_end = date_from(jf.at("train_end"));
        f.fold.test_start = date_from(jf.at("test_start"));
        f.fold.test_end = date_from(jf.at("test_end"));
        const auto cols = jf.at("columns").get<std::vector<std::size_t>>();
        if (cols.size() != 4) throw Error("fold columns must have four entries");
        f.fold.train_first = cols[0];
        f.fold.train_last = cols[1];
        f.fold.test_first = cols[2];
        f.fold.test_last = cols[3];
        f.flagged = jf.at("flagged").get<bool>();
        for (const auto& js : jf.at("spaces")) {
            SpaceFold s;
            s.space = js.at("space").get<std::string>();
            s.status = status_from(js.at("status").get<std::string>());
            s.message = js.at("message").get<std::string>();
            s.n_constituents = js.at("n_constituents").get<std::size_t>();
            s.n_i1 = js.at("n_i1").get<std::size_t>();
            s.rank = js.at("rank").get<std::size_t>();
            for (const auto& jp : js.at("portfolios")) {
                PortfolioRecord p;
                p.id = jp.at("id").get<std::size_t>();
                p.source_row = jp.at("source_row").get<std::size_t>();
                p.tickers = jp.at("tickers").get<std::vector<std::string>>();
                p.weights = doubles_from(jp.at("weights"));
                p.in_sample = metrics_from(jp.at("in_sample"));
                p.out_of_sample = metrics_from(jp.at("out_of_sample"));
                p.return_in_sample = num(jp.at("return_in_sample"));
                p.return_out_of_sample = num(jp.at("return_out_of_sample"));
                s.portfolios.push_back(std::move(p));
            }
            s.mean_vol_in_sample = num(js.at("mean_vol_in_sample"));
            s.median_vol_in_sample = num(js.at("median_vol_in_sample"));
            s.mean_vol_out_of_sample = num(js.at("mean_vol_out_of_sample"));
            s.median_vol_out_of_sample = num(js.at("median_vol_out_of_sample"));
            f.spaces.push_back(std::move(s));
        }
        for (const auto& jb : jf.at("benchmarks")) {
            BenchmarkFold b;
            b.name = jb.at("name").get<std::string>();
            b.in_sample = metrics_from(jb.at("in_sample"));
            b.out_of_sample = metrics_from(jb.at("out_of_sample"));
            b.return_in_sample = num(jb.at("return_in_sample"));
            b.return_out_of_sample = num(jb.at("return_out_of_sample"));
            f.benchmarks.push_back(b);
        }
        for (const auto& js : jf.at("strategies")) {
            StrategyFold s;
            s.name = js.at("name").get<std::string>();
            s.ok = js.at("ok").get<bool>();
            s.message = js.at("message").get<std::string>();
            s.n_candidates = js.at("n_candidates").get<std::size_t>();
            s.theta = doubles_from(js.at("theta"));
            s.objective_value = num(js.at("objective_value"));
            s.in_sample = metrics_from(js.at("in_sample"));
            s.out_of_sample = metrics_from(js.at("out_of_sample"));
            s.return_in_sample = num(js.at("return_in_sample"));
            s.return_out_of_sample = num(js.at("return_out_of_sample"));
            f.strategies.push_back(std::move(s));
        }
        r.folds.push_back(std::move(f));
    }
    for (const auto& js : j.at("series")) {
        std::vector<Date> dates;
        for (const auto& d : js.at("dates")) dates.push_back(date_from(d));
        r.series.push_back({js.at("name").get<std::string>(), make_series(dates, doubles_from(js.at("daily_returns")))});
    }
    return r;
}

// ---- CSV ----

std::string volatility_table_csv(const BacktestReport& report, const std::string& space, bool out_of_sample) {
    std::ostringstream out;
    out << (out_of_sample ? kHeaderOutOfSample : kHeaderInSample);
    for (const FoldReport& f : report.folds)
        out << ',' << month_label(out_of_sample ? f.fold.test_start : f.fold.train_end);
    out << '\n';
    std::vector<const SpaceFold*> cells;
    for (const FoldReport& f : report.folds) {
        const auto it = std::find_if(f.spaces.begin(), f.spaces.end(), [&](const SpaceFold& s) { return s.space == space; });
        if (it == f.spaces.end()) throw Error("space '" + space + "' is not in the report");
        cells.push_back(&*it);
    }
    out << kRowPortfolios;
    for (const SpaceFold* s : cells)
        out << ',' << (s->status == SpaceStatus::failed ? std::string() : std::to_string(s->portfolios.size()));
    out << '\n' << kRowMeanVol;
    for (const SpaceFold* s : cells)
        out << ',' << format_number(out_of_sample ? s->mean_vol_out_of_sample : s->mean_vol_in_sample);
    out << '\n' << kRowMedianVol;
    for (const SpaceFold* s : cells)
        out << ',' << format_number(out_of_sample ? s->median_vol_out_of_sample : s->median_vol_in_sample);
    out << '\n';
    if (!report.folds.empty()) {
        for (std::size_t b = 0; b < report.folds.front().benchmarks.size(); ++b) {
            out << benchmark_label(report.folds.front().benchmarks[b].name);
            for (const FoldReport& f : report.folds) {
                const BenchmarkFold& bf = f.benchmarks[b];
                out << ',' << format_number(out_of_sample ? bf.out_of_sample.ann_vol_pct : bf.in_sample.ann_vol_pct);
            }
            out << '\n';
        }
    }
    return out.str();
}

std::string returns_table_csv(const BacktestReport& report, bool out_of_sample) {
    std::ostringstream out;
    out << (out_of_sample ? kHeaderOutOfSample : kHeaderInSample);
    for (const FoldReport& f : report.folds)
        out << ',' << month_label(out_of_sample ? f.fold.test_start : f.fold.train_end);
    out << '\n';
    if (report.folds.empty()) return out.str();
    const FoldReport& first = report.folds.front();
    for (std::size_t b = 0; b < first.benchmarks.size(); ++b) {
        out << benchmark_label(first.benchmarks[b].name);
        for (const FoldReport& f : report.folds)
            out << ','
                << format_number(out_of_sample ? f.benchmarks[b].return_out_of_sample : f.benchmarks[b].return_in_sample);
        out << '\n';
    }
    for (std::size_t k = 0; k < first.strategies.size(); ++k) {
        out << first.strategies[k].name;
        for (const FoldReport& f : report.folds) {
            const StrategyFold& s = f.strategies[k];
            out << ',' << (s.ok ? format_number(out_of_sample ? s.return_out_of_sample : s.return_in_sample) : "");
        }
        out << '\n';
    }
    return out.str();
}

std::string summary_csv(const std::vector<SummaryRow>& rows) {
    std::ostringstream out;
    out << kSummaryHeader << '\n';
    for (const SummaryRow& r : rows)
        out << r.strategy << ',' << format_number(r.sharpe) << ',' << format_number(r.max_drawdown_pct) << '\n';
    return out.str();
}

std::vector<std::string> emit(const BacktestReport& report, const std::string& out_dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir)) throw Error("cannot create output directory '" + out_dir + "'");
    std::vector<std::string> written;
    auto write = [&](const std::string& name, const std::string& content) {
        const fs::path path = fs::path(out_dir) / name;
        std::ofstream f(path, std::ios::binary);
        f << content;
        f.close();
        if (!f) throw Error("cannot write '" + path.string() + "'");
        written.push_back(name);
    };

    for (const std::string& space : report.spaces) {
        write("volatility_in_sample_" + slug(space) + ".csv", volatility_table_csv(report, space, false));
        write("volatility_out_of_sample_" + slug(space) + ".csv", volatility_table_csv(report, space, true));
        std::vector<PortfolioMetricsRow> rows;
        for (const FoldReport& f : report.folds)
            for (const SpaceFold& s : f.spaces)
                if (s.space == space)
                    for (const PortfolioRecord& p : s.portfolios)
                        rows.push_back({static_cast<int>(f.index), p.id, p.out_of_sample});
        write("portfolio_metrics_" + slug(space) + ".csv", metrics_csv(rows));
    }
    write("returns_in_sample.csv", returns_table_csv(report, false));
    write("returns_out_of_sample.csv", returns_table_csv(report, true));
    write("summary.csv", summary_csv(summarize(report)));

    std::ostringstream plot;
    plot << "date,series,daily_return,cumulative,drawdown\n";
    for (const StrategySeries& s : report.series) {
        std::ostringstream out;
        out << "date,daily_return,cumulative\n";
        double peak = 0.0;
        for (std::size_t t = 0; t < s.series.dates.size(); ++t) {
            const std::string d = format_date(s.series.dates[t]);
            const double c = s.series.cumulative[t];
            peak = t == 0 ? c : std::max(peak, c);
            out << d << ',' << format_number(s.series.daily_returns[t], 17) << ',' << format_number(c, 17) << '\n';
            plot << d << ',' << s.name << ',' << format_number(s.series.daily_returns[t], 17) << ','
                 << format_number(c, 17) << ',' << format_number(100.0 * (1.0 - c / peak), 17) << '\n';
        }
        write("series_" + slug(s.name) + ".csv", out.str());
    }
    write("plot.csv", plot.str());
    write("report.json", report_to_json(report).dump(2) + "\n");
    return written;
}

}  // namespace cointlab
