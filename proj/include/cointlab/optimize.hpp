#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "cointlab/panel.hpp"
#include "cointlab/portfolio.hpp"

namespace cointlab {

enum class Preset { us_only, joint, relaxed };

Preset preset_from_string(const std::string& name);
std::string to_string(Preset preset);

struct ConstraintSet {
    std::size_t r = 0;
    std::size_t b = 0;
    // Open intervals (lo, hi) on the benchmark weights, realized as
    // [lo + margin, hi - margin].
    std::vector<std::pair<double, double>> benchmark_bounds;
    double margin = 1e-3;

    double lower(std::size_t k) const { return benchmark_bounds[k].first + margin; }
    double upper(std::size_t k) const { return benchmark_bounds[k].second - margin; }
    void validate() const;

    // US-only: b=1, (1/2, 1). Joint: b=2, (1/4, 1/2) each. Relaxed: (0, 1) each.
    static ConstraintSet make(Preset preset, std::size_t r, std::size_t b = 0);
};

// theta = (candidate block of length r, benchmark block of length b).
bool feasible(const Eigen::VectorXd& theta, const ConstraintSet& constraints);

// Maps any vector to a feasible theta: the benchmark block is clipped to its
// bounds, then the candidate block is rescaled to the remaining L1 budget.
Eigen::VectorXd to_feasible(const Eigen::VectorXd& u, const ConstraintSet& constraints);

// Daily returns of the net weights theta_c' alphas + theta_b' betas
// (alphas r x p, betas b x p).
PerfSeries combine(const Eigen::VectorXd& theta, const Eigen::MatrixXd& alphas, const Eigen::MatrixXd& betas,
                   const ReturnsPanel& returns);

enum class Objective { sharpe_max, vol_min };

std::string to_string(Objective objective);

struct OptimizerOptions {
    int n_starts = 16;
    int max_evals = 4000;  // per Nelder-Mead run
    int polish_rounds = 4;
    double tol = 1e-13;
};

struct StartTrace {
    double start_value = 0.0;
    double final_value = 0.0;
    int evaluations = 0;
    bool converged = false;
};

struct OptimizationResult {
    Objective objective = Objective::sharpe_max;
    Eigen::VectorXd theta_star;
    double objective_value = 0.0;  // Sharpe, or annualized vol in percent
    int n_starts = 0;
    bool converged = false;
    std::uint64_t seed = 0;
    std::size_t best_start = 0;
    std::vector<StartTrace> starts;
};

OptimizationResult maximize_sharpe(const Eigen::MatrixXd& alphas, const Eigen::MatrixXd& betas,
                                   const ReturnsPanel& train_returns, const ConstraintSet& constraints,
                                   std::uint64_t seed, const OptimizerOptions& options = {});

OptimizationResult minimize_volatility(const Eigen::MatrixXd& alphas, const Eigen::MatrixXd& betas,
                                       const ReturnsPanel& train_returns, const ConstraintSet& constraints,
                                       std::uint64_t seed, const OptimizerOptions& options = {});

OptimizationResult optimize(Objective objective, const Eigen::MatrixXd& alphas, const Eigen::MatrixXd& betas,
                            const ReturnsPanel& train_returns, const ConstraintSet& constraints,
                            std::uint64_t seed, const OptimizerOptions& options = {});

nlohmann::json result_to_json(const OptimizationResult& result);

}  // namespace cointlab
