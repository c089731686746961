#include "cointlab/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "cointlab/errors.hpp"
#include "cointlab/rng.hpp"

namespace cointlab {

Preset preset_from_string(const std::string& name) {
    if (name == "us_only") return Preset::us_only;
    if (name == "joint") return Preset::joint;
    if (name == "relaxed") return Preset::relaxed;
    throw ConfigError("unknown constraint preset '" + name + "' (us_only, joint, relaxed)");
}

std::string to_string(Preset preset) {
    switch (preset) {
        case Preset::us_only: return "us_only";
        case Preset::joint: return "joint";
        case Preset::relaxed: return "relaxed";
    }
    return "relaxed";
}

std::string to_string(Objective objective) { return objective == Objective::sharpe_max ? "sharpe_max" : "vol_min"; }

void ConstraintSet::validate() const {
    if (benchmark_bounds.size() != b) throw ConstraintError("need one bound per benchmark");
    if (!(margin > 0.0)) throw ConstraintError("margin must be positive");
    double lo_sum = 0.0, hi_sum = 0.0;
    for (std::size_t k = 0; k < b; ++k) {
        const auto [lo, hi] = benchmark_bounds[k];
        if (!(lo >= 0.0 && lo < hi && hi <= 1.0)) throw ConstraintError("benchmark bound must satisfy 0 <= lo < hi <= 1");
        if (!(lower(k) <= upper(k))) throw ConstraintError("margin leaves an empty benchmark interval");
        lo_sum += lower(k);
        hi_sum += upper(k);
    }
    if (!(lo_sum < 1.0)) throw ConstraintError("benchmark lower bounds sum to 1 or more");
    if (r == 0 && hi_sum < 1.0) throw ConstraintError("no candidates and benchmark bounds cannot reach full weight");
}

ConstraintSet ConstraintSet::make(Preset preset, std::size_t r, std::size_t b) {
    ConstraintSet c;
    c.r = r;
    switch (preset) {
        case Preset::us_only:
            c.b = 1;
            c.benchmark_bounds = {{0.5, 1.0}};
            break;
        case Preset::joint:
            c.b = 2;
            c.benchmark_bounds = {{0.25, 0.5}, {0.25, 0.5}};
            break;
        case Preset::relaxed:
            c.b = b == 0 ? 1 : b;
            c.benchmark_bounds.assign(c.b, {0.0, 1.0});
            break;
    }
    if (b != 0 && b != c.b) throw ConstraintError("preset " + to_string(preset) + " needs b=" + std::to_string(c.b));
    return c;
}

bool feasible(const Eigen::VectorXd& theta, const ConstraintSet& c) {
    if (theta.size() != static_cast<Eigen::Index>(c.r + c.b)) return false;
    if (!theta.allFinite()) return false;
    if (std::abs(theta.lpNorm<1>() - 1.0) > 1e-10) return false;
    if ((theta.array().abs() > 1.0 + 1e-12).any()) return false;
    constexpr double slack = 1e-12;
    for (std::size_t k = 0; k < c.b; ++k) {
        const double v = theta(c.r + k);
        if (v < c.lower(k) - slack || v > c.upper(k) + slack) return false;
    }
    return true;
}

namespace {

// Benchmark block with sum exactly 1 inside the box: clip(u - tau).
Eigen::VectorXd fill_benchmarks(const Eigen::VectorXd& u, const ConstraintSet& c) {
    auto at = [&](double tau) {
        Eigen::VectorXd v(c.b);
        for (std::size_t k = 0; k < c.b; ++k) v(k) = std::clamp(u(k) - tau, c.lower(k), c.upper(k));
        return v;
    };
    double lo = -2.0 - u.cwiseAbs().maxCoeff(), hi = 2.0 + u.cwiseAbs().maxCoeff();
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (at(mid).sum() > 1.0) lo = mid;
        else hi = mid;
    }
    Eigen::VectorXd v = at(0.5 * (lo + hi));
    // Put the rounding residue on an entry with room.
    const double gap = 1.0 - v.sum();
    for (std::size_t k = 0; k < c.b; ++k) {
        const double nv = v(k) + gap;
        if (nv >= c.lower(k) && nv <= c.upper(k)) {
            v(k) = nv;
            break;
        }
    }
    return v;
}

}  // namespace

Eigen::VectorXd to_feasible(const Eigen::VectorXd& u, const ConstraintSet& c) {
    if (u.size() != static_cast<Eigen::Index>(c.r + c.b)) throw DimensionError("theta has the wrong length");
    Eigen::VectorXd theta(u.size());
    Eigen::VectorXd bench(c.b);
    for (std::size_t k = 0; k < c.b; ++k) bench(k) = std::clamp(u(c.r + k), c.lower(k), c.upper(k));
    const double used = bench.sum();
    if (c.r == 0 || used >= 1.0) {
        if (c.r == 0) {
            double hi_sum = 0.0;
            for (std::size_t k = 0; k < c.b; ++k) hi_sum += c.upper(k);
            if (hi_sum < 1.0) throw ConstraintError("benchmark bounds cannot reach full weight without candidates");
        }
        theta.head(c.r).setZero();
        theta.tail(c.b) = fill_benchmarks(u.tail(c.b), c);
        return theta;
    }
    const double budget = 1.0 - used;
    Eigen::VectorXd cand = u.head(c.r);
    const double l1 = cand.lpNorm<1>();
    if (l1 > 0.0 && std::isfinite(l1)) cand *= budget / l1;
    else cand.setConstant(budget / static_cast<double>(c.r));
    theta.head(c.r) = cand;
    theta.tail(c.b) = bench;
    return theta;
}

PerfSeries combine(const Eigen::VectorXd& theta, const Eigen::MatrixXd& alphas, const Eigen::MatrixXd& betas,
                   const ReturnsPanel& returns) {
    const Eigen::Index r = alphas.rows(), b = betas.rows();
    const Eigen::Index p = returns.returns.rows();
    if (theta.size() != r + b) throw DimensionError("theta must have r + b entries");
    if ((r > 0 && alphas.cols() != p) || (b > 0 && betas.cols() != p))
        throw DimensionError("portfolio weights do not match the returns panel");
    if (!theta.allFinite() || std::abs(theta.lpNorm<1>() - 1.0) > 1e-10 || (theta.array().abs() > 1.0 + 1e-12).any())
        throw ConstraintError("theta is infeasible: needs |theta|_1 = 1 and entries in [-1, 1]");
    Eigen::VectorXd net = Eigen::VectorXd::Zero(p);
    if (r > 0) net += alphas.transpose() * theta.head(r);
    if (b > 0) net += betas.transpose() * theta.tail(b);
    return portfolio_returns(net, returns);
}

namespace {

struct Evaluator {
    Objective objective;
    Eigen::MatrixXd components;  // (r+b) x T daily returns of each portfolio
    const ConstraintSet* c;

    // Value to minimize.
    double operator()(const Eigen::VectorXd& u) const {
        const Eigen::VectorXd theta = to_feasible(u, *c);
        const Eigen::VectorXd daily = components.transpose() * theta;
        const double n = static_cast<double>(daily.size());
        const double mean = daily.mean();
        const double sd = std::sqrt((daily.array() - mean).square().sum() / (n - 1.0));
        if (objective == Objective::vol_min) return sd * std::sqrt(kTradingDays) * 100.0;
        if (!(sd > 0.0)) return std::numeric_limits<double>::infinity();
        return -(mean * kTradingDays) / (sd * std::sqrt(kTradingDays));
    }
};

struct NmResult {
    Eigen::VectorXd x;
    double f;
    int evals;
    bool converged;
};

NmResult nelder_mead(const Evaluator& f, const Eigen::VectorXd& x0, double step, int max_evals, double tol) {
    const Eigen::Index n = x0.size();
    std::vector<Eigen::VectorXd> pts(n + 1, x0);
    std::vector<double> val(n + 1);
    for (Eigen::Index i = 0; i < n; ++i) pts[i + 1](i) += (x0(i) >= 0.0 ? step : -step);
    int evals = 0;
    for (Eigen::Index i = 0; i <= n; ++i) {
        val[i] = f(pts[i]);
        ++evals;
    }
    std::vector<std::size_t> order(n + 1);
    bool converged = false;
    while (evals < max_evals) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return val[a] < val[b]; });
        const std::size_t best = order.front(), worst = order.back(), second = order[n - 1];
        double size = 0.0;
        for (Eigen::Index i = 0; i <= n; ++i) size = std::max(size, (pts[i] - pts[best]).cwiseAbs().maxCoeff());
        if (std::abs(val[worst] - val[best]) <= tol * (1.0 + std::abs(val[best])) && size < 1e-9) {
            converged = true;
            break;
        }
        if (size < 1e-14) {
            converged = true;
            break;
        }
        Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
        for (Eigen::Index i = 0; i <= n; ++i)
            if (static_cast<std::size_t>(i) != worst) centroid += pts[i];
        centroid /= static_cast<double>(n);

        const Eigen::VectorXd xr = centroid + (centroid - pts[worst]);
        const double fr = f(xr);
        ++evals;
        if (fr < val[best]) {
            const Eigen::VectorXd xe = centroid + 2.0 * (centroid - pts[worst]);
            const double fe = f(xe);
            ++evals;
            if (fe < fr) {
                pts[worst] = xe;
                val[worst] = fe;
            } else {
                pts[worst] = xr;
                val[worst] = fr;
            }
            continue;
        }
        if (fr < val[second]) {
            pts[worst] = xr;
            val[worst] = fr;
            continue;
        }
        const bool outside = fr < val[worst];
        const Eigen::VectorXd xc = outside ? Eigen::VectorXd(centroid + 0.5 * (xr - centroid))
                                           : Eigen::VectorXd(centroid + 0.5 * (pts[worst] - centroid));
        const double fc = f(xc);
        ++evals;
        if (fc < (outside ? fr : val[worst])) {
            pts[worst] = xc;
            val[worst] = fc;
            continue;
        }
        for (Eigen::Index i = 0; i <= n; ++i) {
            if (static_cast<std::size_t>(i) == best) continue;
            pts[i] = pts[best] + 0.5 * (pts[i] - pts[best]);
            val[i] = f(pts[i]);
            ++evals;
        }
    }
    const auto best = static_cast<std::size_t>(std::min_element(val.begin(), val.end()) - val.begin());
    return {pts[best], val[best], evals, converged};
}

std::vector<Eigen::VectorXd> starting_points(const ConstraintSet& c, std::uint64_t seed, int n_starts) {
    std::vector<Eigen::VectorXd> starts;
    const auto n = static_cast<Eigen::Index>(c.r + c.b);
    // Benchmark-heavy.
    {
        Eigen::VectorXd u = Eigen::VectorXd::Constant(n, 1.0);
        for (std::size_t k = 0; k < c.b; ++k) u(c.r + k) = c.upper(k);
        starts.push_back(to_feasible(u, c));
    }
    // Equal mix: benchmarks at mid-bound, candidates share the rest.
    if (n_starts > 1) {
        Eigen::VectorXd u = Eigen::VectorXd::Constant(n, 1.0);
        for (std::size_t k = 0; k < c.b; ++k) u(c.r + k) = 0.5 * (c.lower(k) + c.upper(k));
        starts.push_back(to_feasible(u, c));
    }
    Rng rng(seed);
    while (static_cast<int>(starts.size()) < n_starts) {
        Eigen::VectorXd u(n);
        for (std::size_t i = 0; i < c.r; ++i) u(i) = rng.normal();
        for (std::size_t k = 0; k < c.b; ++k) u(c.r + k) = rng.uniform(c.lower(k), c.upper(k));
        starts.push_back(to_feasible(u, c));
    }
    return starts;
}

}  // namespace

OptimizationResult optimize(Objective objective, const Eigen::MatrixXd& alphas, const Eigen::MatrixXd& betas,
                            const ReturnsPanel& train_returns, const ConstraintSet& constraints,
                            std::uint64_t seed, const OptimizerOptions& options) {
    constraints.validate();
    if (static_cast<std::size_t>(alphas.rows()) != constraints.r || static_cast<std::size_t>(betas.rows()) != constraints.b)
        throw DimensionError("alphas/betas do not match the constraint set");
    if (constraints.b < 1) throw ConstraintError("at least one benchmark is required");
    if (options.n_starts < 1) throw ConstraintError("n_starts must be at least 1");
    const Eigen::Index p = train_returns.returns.rows();
    if ((alphas.rows() > 0 && alphas.cols() != p) || betas.cols() != p)
        throw DimensionError("portfolio weights do not match the returns panel");
    if (train_returns.returns.cols() < 2) throw DimensionError("training window needs at least two returns");

    Evaluator eval{objective, Eigen::MatrixXd(constraints.r + constraints.b, train_returns.returns.cols()), &constraints};
    if (constraints.r > 0) eval.components.topRows(constraints.r) = alphas * train_returns.returns;
    eval.components.bottomRows(constraints.b) = betas * train_returns.returns;

    OptimizationResult res;
    res.objective = objective;
    res.seed = seed;
    res.n_starts = options.n_starts;
    double best_f = std::numeric_limits<double>::infinity();
    for (const Eigen::VectorXd& start : starting_points(constraints, seed, options.n_starts)) {
        StartTrace tr;
        tr.start_value = eval(start);
        Eigen::VectorXd x = start;
        double fx = tr.start_value;
        // Restart from the incumbent until a round brings no gain.
        for (int round = 0; round <= options.polish_rounds; ++round) {
            const double step = round == 0 ? 0.1 : 0.02;
            NmResult nm = nelder_mead(eval, x, step, options.max_evals, options.tol);
            tr.evaluations += nm.evals;
            tr.converged = nm.converged;
            const bool gain = nm.f < fx - options.tol * (1.0 + std::abs(fx));
            if (nm.f < fx) {
                x = to_feasible(nm.x, constraints);
                fx = nm.f;
            }
            if (!gain) break;
        }
        tr.final_value = fx;
        if (fx < best_f) {
            best_f = fx;
            res.theta_star = to_feasible(x, constraints);
            res.best_start = res.starts.size();
            res.converged = tr.converged;
        }
        res.starts.push_back(tr);
    }
    if (!feasible(res.theta_star, constraints)) throw ConstraintError("optimizer produced an infeasible point");

    const PerfSeries series = combine(res.theta_star, alphas, betas, train_returns);
    res.objective_value =
        objective == Objective::sharpe_max ? sharpe_ratio(series) : annualized_volatility(series);
    for (auto& tr : res.starts) {
        tr.start_value = objective == Objective::sharpe_max ? -tr.start_value : tr.start_value;
        tr.final_value = objective == Objective::sharpe_max ? -tr.final_value : tr.final_value;
    }
    return res;
}

OptimizationResult maximize_sharpe(const Eigen::MatrixXd& alphas, const Eigen::MatrixXd& betas,
                                   const ReturnsPanel& train_returns, const ConstraintSet& constraints,
                                   std::uint64_t seed, const OptimizerOptions& options) {
    return optimize(Objective::sharpe_max, alphas, betas, train_returns, constraints, seed, options);
}

OptimizationResult minimize_volatility(const Eigen::MatrixXd& alphas, const Eigen::MatrixXd& betas,
                                       const ReturnsPanel& train_returns, const ConstraintSet& constraints,
                                       std::uint64_t seed, const OptimizerOptions& options) {
    return optimize(Objective::vol_min, alphas, betas, train_returns, constraints, seed, options);
}

nlohmann::json result_to_json(const OptimizationResult& r) {
    nlohmann::json starts = nlohmann::json::array();
    for (const auto& s : r.starts)
        starts.push_back({{"start_value", s.start_value},
                          {"final_value", s.final_value},
                          {"evaluations", s.evaluations},
                          {"converged", s.converged}});
    std::vector<double> theta(r.theta_star.data(), r.theta_star.data() + r.theta_star.size());
    return {{"objective", to_string(r.objective)},
            {"theta", theta},
            {"objective_value", r.objective_value},
            {"n_starts", r.n_starts},
            {"converged", r.converged},
            {"seed", r.seed},
            {"best_start", r.best_start},
            {"starts", starts}};
}

}  // namespace cointlab
