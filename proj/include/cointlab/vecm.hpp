#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "cointlab/panel.hpp"

namespace cointlab {

enum class QrMode { pivoted, plain };

struct PlsOptions {
    // Demean A and B row-wise (regression with intercept).
    bool center = true;
    QrMode qr = QrMode::pivoted;
    // Singular values of BB' below rcond * max are dropped in the pseudoinverse.
    double pinv_rcond = 1e-10;
    // When > 0, use (BB' + ridge*I)^{-1} instead of the pseudoinverse.
    double ridge = 0.0;
};

struct PreEstimate {
    Eigen::MatrixXd pi_tilde;
    Eigen::MatrixXd s_tilde;  // orthogonal
    Eigen::MatrixXd r_tilde;  // upper triangular
    // pi_tilde' * P = s_tilde * r_tilde, where column k of P is e_{permutation[k]}:
    // pivot slot k holds equation permutation[k]. Identity for QrMode::plain.
    std::vector<std::size_t> permutation;

    // P * r_tilde' * s_tilde', equal to pi_tilde.
    Eigen::MatrixXd reconstruct() const;
    // r_tilde * P': column j belongs to equation (row of pi) j.
    Eigen::MatrixXd r_natural() const;
    // Inverse of permutation: slot of equation j.
    std::vector<std::size_t> pivot_position() const;
};

// Factorize pi_tilde' = S R (optionally with column pivoting).
PreEstimate decompose(const Eigen::MatrixXd& pi_tilde, QrMode mode = QrMode::pivoted);

// Levels Y are p x (T+1). A = [dY_1..dY_T], B = [Y_0..Y_{T-1}],
// pi_tilde = A B' (B B')^+.
PreEstimate pls_pre_estimate(const Eigen::MatrixXd& levels, const PlsOptions& options = {});
PreEstimate pls_pre_estimate(const PricePanel& panel, const PlsOptions& options = {});

struct Preprocessed {
    Eigen::MatrixXd targets;     // p x T, rows centered
    Eigen::MatrixXd predictors;  // p x T, rows of S'B centered and scaled to unit sd
    Eigen::VectorXd predictor_sd;
    std::vector<bool> zero_variance;  // flagged rows are left unscaled
};

Preprocessed preprocess(const Eigen::MatrixXd& levels, const PreEstimate& pre);

struct SslConfig {
    double lambda1 = 1.0;
    double lambda0_init = 1.0;
    double lambda_step = 0.5;
    int em_max_iter = 500;
    double em_tol = 1e-6;
    double zero_tol = 1e-8;
    std::uint64_t seed = 0;
    // Phase 2 stops after phase2_patience * |P| consecutive samples without a
    // rank decrease, |P| being the current active-set size.
    int phase2_patience = 30;
    // Phase 1 gives up once lambda0 exceeds ceiling_factor * lambda1.
    double ceiling_factor = 1e4;
    PlsOptions pls;

    void validate() const;
};

struct ColumnState {
    std::size_t j = 0;
    Eigen::VectorXd coeffs;
    double sigma2 = 1.0;
    double theta = 0.5;
    double lambda0_j = 1.0;
    bool active = false;
    int iterations = 0;
};

struct EmTrace {
    std::vector<double> log_posterior;  // after every EM iteration, starting with the initial point
};

// Beta(a, b) levelling prior for the equation in (zero-based) slot k of p.
inline double beta_prior_a(std::size_t p, std::size_t slot) { return static_cast<double>(p - slot); }
inline double beta_prior_b(std::size_t p) { return static_cast<double>(p); }

// Column log-posterior: Gaussian log-likelihood, marginal spike-and-slab
// Laplace prior on each coefficient, Jeffreys prior on sigma2, Beta prior on theta.
double column_log_posterior(const Eigen::VectorXd& target, const Eigen::MatrixXd& predictors,
                            const Eigen::VectorXd& coeffs, double sigma2, double theta, double lambda0,
                            double lambda1, double a, double b);

// EM for column j: target is targets.row(j), predictors are p x T. The Beta
// prior uses prior_slot (defaults to j).
ColumnState em_column(std::size_t j, const Eigen::MatrixXd& targets, const Eigen::MatrixXd& predictors,
                      ColumnState state, const SslConfig& config,
                      std::size_t prior_slot = static_cast<std::size_t>(-1), EmTrace* trace = nullptr);

struct LambdaSummary {
    int phase1_sweeps = 0;
    double phase1_lambda0 = 0.0;  // common value at the end of Phase 1
    std::size_t phase1_rank = 0;
    int phase2_samples = 0;
    std::vector<double> final_lambda0;
};

struct CointegrationEstimate {
    PreEstimate pre;
    Eigen::MatrixXd r_hat_matrix;  // column j is the coefficient vector of equation j
    Eigen::MatrixXd pi_hat;
    std::size_t rank = 0;
    std::vector<ColumnState> columns;
    std::vector<std::size_t> active;
    SslConfig config;
    std::uint64_t seed = 0;
    std::size_t T = 0;
    LambdaSummary lambda;
};

// Two-phase spike-and-slab estimate of Pi. Levels are p x (T+1).
CointegrationEstimate estimate(const Eigen::MatrixXd& levels, const SslConfig& config = {});
CointegrationEstimate estimate(const PricePanel& panel, const SslConfig& config = {});

Eigen::MatrixXd compose_pi_hat(const Eigen::MatrixXd& r_hat, const Eigen::MatrixXd& s_tilde);

nlohmann::json to_json(const SslConfig& config);
SslConfig ssl_config_from_json(const nlohmann::json& j);
nlohmann::json estimate_to_json(const CointegrationEstimate& est, const std::vector<std::string>& tickers);

}  // namespace cointlab
