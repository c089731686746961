#include "cointlab/vecm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "cointlab/errors.hpp"
#include "cointlab/rng.hpp"

namespace cointlab {

namespace {

constexpr double kSigma2Floor = 1e-300;

double log_or_zero(double weight, double x) {
    // weight * log(x) with 0 * log(0) = 0
    if (weight == 0.0) return 0.0;
    return weight * std::log(x);
}

double log_mixture(double beta, double theta, double lambda0, double lambda1) {
    const double ab = std::abs(beta);
    const double slab = theta > 0.0 ? std::log(theta) + std::log(lambda1 / 2.0) - lambda1 * ab
                                    : -std::numeric_limits<double>::infinity();
    const double spike = theta < 1.0 ? std::log1p(-theta) + std::log(lambda0 / 2.0) - lambda0 * ab
                                     : -std::numeric_limits<double>::infinity();
    const double hi = std::max(slab, spike);
    return hi + std::log(std::exp(slab - hi) + std::exp(spike - hi));
}

// Posterior probability that the coefficient comes from the slab.
double inclusion(double beta, double theta, double lambda0, double lambda1) {
    if (theta <= 0.0) return 0.0;
    if (theta >= 1.0) return 1.0;
    const double logit = std::log(theta) - std::log1p(-theta) + std::log(lambda1) - std::log(lambda0) +
                         (lambda0 - lambda1) * std::abs(beta);
    return 1.0 / (1.0 + std::exp(-logit));
}

double soft_threshold(double z, double t) {
    if (z > t) return z - t;
    if (z < -t) return z + t;
    return 0.0;
}

// Design stored T x p so that each predictor is a contiguous column.
struct Design {
    Eigen::MatrixXd xt;
    Eigen::VectorXd xn;  // squared column norms; 0 means the predictor is skipped
};

double log_posterior_design(const Eigen::VectorXd& y, const Design& d, const Eigen::VectorXd& beta,
                            double sigma2, double theta, double lambda0, double lambda1, double a, double b) {
    const double T = static_cast<double>(y.size());
    const double rss = (y - d.xt * beta).squaredNorm();
    double lp = -0.5 * T * std::log(2.0 * std::numbers::pi * sigma2) - rss / (2.0 * sigma2);
    lp -= std::log(sigma2);
    for (Eigen::Index k = 0; k < beta.size(); ++k) lp += log_mixture(beta(k), theta, lambda0, lambda1);
    lp += log_or_zero(a - 1.0, theta) + log_or_zero(b - 1.0, 1.0 - theta);
    return lp;
}

ColumnState fit_column(const Eigen::VectorXd& y, const Design& d, ColumnState s, const SslConfig& cfg,
                       double a, double b, EmTrace* trace) {
    const Eigen::Index p = d.xt.cols();
    const double T = static_cast<double>(y.size());
    const double lambda1 = cfg.lambda1;
    const double lambda0 = s.lambda0_j;
    if (s.coeffs.size() != p) s.coeffs = Eigen::VectorXd::Zero(p);
    if (!(s.sigma2 > 0.0)) s.sigma2 = std::max(y.squaredNorm() / (T + 2.0), kSigma2Floor);
    s.theta = std::clamp(s.theta, 0.0, 1.0);

    Eigen::VectorXd& beta = s.coeffs;
    Eigen::VectorXd resid = y - d.xt * beta;
    Eigen::VectorXd pstar(p), lstar(p);

    if (trace)
        trace->log_posterior.push_back(
            log_posterior_design(y, d, beta, s.sigma2, s.theta, lambda0, lambda1, a, b));

    s.iterations = 0;
    for (int it = 0; it < cfg.em_max_iter; ++it) {
        for (Eigen::Index k = 0; k < p; ++k) {
            pstar(k) = inclusion(beta(k), s.theta, lambda0, lambda1);
            lstar(k) = pstar(k) * lambda1 + (1.0 - pstar(k)) * lambda0;
        }
        double max_change = 0.0;
        for (Eigen::Index k = 0; k < p; ++k) {
            const double xn = d.xn(k);
            if (xn <= 0.0) continue;
            const double z = d.xt.col(k).dot(resid) + xn * beta(k);
            const double nb = soft_threshold(z, s.sigma2 * lstar(k)) / xn;
            const double delta = nb - beta(k);
            if (delta != 0.0) {
                resid.noalias() -= delta * d.xt.col(k);
                beta(k) = nb;
                max_change = std::max(max_change, std::abs(delta));
            }
        }
        s.sigma2 = std::max(resid.squaredNorm() / (T + 2.0), kSigma2Floor);
        s.theta = (a - 1.0 + pstar.sum()) / (a + b - 2.0 + static_cast<double>(p));
        s.theta = std::clamp(s.theta, 0.0, 1.0);
        ++s.iterations;

        if (!std::isfinite(s.sigma2) || !std::isfinite(s.theta) || !beta.allFinite())
            throw NumericalError(s.j, "non-finite EM state");
        if (trace) {
            const double lp = log_posterior_design(y, d, beta, s.sigma2, s.theta, lambda0, lambda1, a, b);
            if (!std::isfinite(lp)) throw NumericalError(s.j, "non-finite log-posterior");
            trace->log_posterior.push_back(lp);
        }
        if (max_change < cfg.em_tol) break;
    }
    for (Eigen::Index k = 0; k < p; ++k)
        if (std::abs(beta(k)) < cfg.zero_tol) beta(k) = 0.0;
    s.active = (beta.array() != 0.0).any();
    return s;
}

Design make_design(const Eigen::MatrixXd& predictors) {
    Design d;
    d.xt = predictors.transpose();
    d.xn = d.xt.colwise().squaredNorm().transpose();
    return d;
}

}  // namespace

Eigen::MatrixXd PreEstimate::reconstruct() const { return r_natural().transpose() * s_tilde.transpose(); }

Eigen::MatrixXd PreEstimate::r_natural() const {
    Eigen::MatrixXd out(r_tilde.rows(), r_tilde.cols());
    for (std::size_t k = 0; k < permutation.size(); ++k) out.col(permutation[k]) = r_tilde.col(k);
    return out;
}

std::vector<std::size_t> PreEstimate::pivot_position() const {
    std::vector<std::size_t> pos(permutation.size());
    for (std::size_t k = 0; k < permutation.size(); ++k) pos[permutation[k]] = k;
    return pos;
}

PreEstimate decompose(const Eigen::MatrixXd& pi_tilde, QrMode mode) {
    const Eigen::Index p = pi_tilde.rows();
    if (pi_tilde.cols() != p) throw DimensionError("pi_tilde must be square");
    PreEstimate pre;
    pre.pi_tilde = pi_tilde;
    const Eigen::MatrixXd At = pi_tilde.transpose();
    if (mode == QrMode::pivoted) {
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(At);
        pre.s_tilde = qr.householderQ() * Eigen::MatrixXd::Identity(p, p);
        pre.r_tilde = qr.matrixR().triangularView<Eigen::Upper>();
        const auto& idx = qr.colsPermutation().indices();
        pre.permutation.resize(p);
        for (Eigen::Index k = 0; k < p; ++k) pre.permutation[k] = static_cast<std::size_t>(idx(k));
    } else {
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(At);
        pre.s_tilde = qr.householderQ() * Eigen::MatrixXd::Identity(p, p);
        pre.r_tilde = qr.matrixQR().triangularView<Eigen::Upper>();
        pre.permutation.resize(p);
        for (Eigen::Index k = 0; k < p; ++k) pre.permutation[k] = static_cast<std::size_t>(k);
    }
    return pre;
}

PreEstimate pls_pre_estimate(const Eigen::MatrixXd& levels, const PlsOptions& options) {
    const Eigen::Index p = levels.rows();
    const Eigen::Index T = levels.cols() - 1;
    if (p < 2 || T < 2)
        throw DimensionError("PLS needs p >= 2 and T >= 2, got p=" + std::to_string(p) +
                             ", T=" + std::to_string(T));
    if (!levels.allFinite()) throw DomainError("levels contain non-finite values");
    Eigen::MatrixXd A = levels.rightCols(T) - levels.leftCols(T);
    Eigen::MatrixXd B = levels.leftCols(T);
    if (options.center) {
        A.colwise() -= A.rowwise().mean();
        B.colwise() -= B.rowwise().mean();
    }
    Eigen::MatrixXd pi_tilde;
    if (options.ridge > 0.0) {
        Eigen::MatrixXd G = B * B.transpose();
        G.diagonal().array() += options.ridge;
        pi_tilde = G.ldlt().solve(B * A.transpose()).transpose();
    } else {
        // A B' (BB')^+ = A B^+. The SVD is taken of B; dropping singular values of
        // BB' below rcond * max equals dropping those of B below sqrt(rcond) * max.
        Eigen::BDCSVD<Eigen::MatrixXd> svd(B, Eigen::ComputeThinU | Eigen::ComputeThinV);
        const Eigen::VectorXd& sv = svd.singularValues();
        const double cutoff = sv.size() > 0 ? std::sqrt(options.pinv_rcond) * sv(0) : 0.0;
        Eigen::VectorXd inv = Eigen::VectorXd::Zero(sv.size());
        for (Eigen::Index i = 0; i < sv.size(); ++i)
            if (sv(i) > cutoff) inv(i) = 1.0 / sv(i);
        pi_tilde = (A * svd.matrixV()) * inv.asDiagonal() * svd.matrixU().transpose();
    }
    return decompose(pi_tilde, options.qr);
}

PreEstimate pls_pre_estimate(const PricePanel& panel, const PlsOptions& options) {
    if (panel.has_gaps()) throw DomainError("panel has gaps; fill them first");
    return pls_pre_estimate(panel.prices(), options);
}

Preprocessed preprocess(const Eigen::MatrixXd& levels, const PreEstimate& pre) {
    const Eigen::Index p = levels.rows();
    const Eigen::Index T = levels.cols() - 1;
    if (pre.s_tilde.rows() != p) throw DimensionError("decomposition does not match the panel");
    Preprocessed out;
    out.targets = levels.rightCols(T) - levels.leftCols(T);
    out.targets.colwise() -= out.targets.rowwise().mean();
    out.predictors = pre.s_tilde.transpose() * levels.leftCols(T);
    out.predictors.colwise() -= out.predictors.rowwise().mean();
    out.predictor_sd.resize(p);
    out.zero_variance.assign(p, false);
    const double denom = std::max<double>(static_cast<double>(T - 1), 1.0);
    for (Eigen::Index k = 0; k < p; ++k) out.predictor_sd(k) = std::sqrt(out.predictors.row(k).squaredNorm() / denom);
    const double biggest = out.predictor_sd.size() ? out.predictor_sd.maxCoeff() : 0.0;
    for (Eigen::Index k = 0; k < p; ++k) {
        const double sd = out.predictor_sd(k);
        if (!(sd > 1e-12 * biggest) || sd == 0.0) {
            out.zero_variance[k] = true;
            continue;
        }
        out.predictors.row(k) /= sd;
    }
    return out;
}

void SslConfig::validate() const {
    if (!(lambda1 > 0.0)) throw ConfigError("lambda1 must be positive");
    if (!(lambda0_init >= lambda1)) throw ConfigError("lambda0_init must be at least lambda1");
    if (!(lambda_step > 0.0)) throw ConfigError("lambda_step must be positive");
    if (em_max_iter < 1) throw ConfigError("em_max_iter must be at least 1");
    if (!(em_tol > 0.0) || !(zero_tol > 0.0)) throw ConfigError("tolerances must be positive");
    if (phase2_patience < 1) throw ConfigError("phase2_patience must be at least 1");
    if (!(ceiling_factor > 1.0)) throw ConfigError("ceiling_factor must exceed 1");
}

double column_log_posterior(const Eigen::VectorXd& target, const Eigen::MatrixXd& predictors,
                            const Eigen::VectorXd& coeffs, double sigma2, double theta, double lambda0,
                            double lambda1, double a, double b) {
    return log_posterior_design(target, make_design(predictors), coeffs, sigma2, theta, lambda0, lambda1, a, b);
}

ColumnState em_column(std::size_t j, const Eigen::MatrixXd& targets, const Eigen::MatrixXd& predictors,
                      ColumnState state, const SslConfig& config, std::size_t prior_slot, EmTrace* trace) {
    const auto p = static_cast<std::size_t>(predictors.rows());
    if (j >= static_cast<std::size_t>(targets.rows()) || targets.cols() != predictors.cols())
        throw DimensionError("em_column: targets and predictors disagree");
    if (!(state.lambda0_j >= config.lambda1)) throw ConfigError("lambda0_j must be at least lambda1");
    const std::size_t slot = prior_slot == static_cast<std::size_t>(-1) ? j : prior_slot;
    if (slot >= p) throw DimensionError("prior slot out of range");
    state.j = j;
    const Eigen::VectorXd y = targets.row(j).transpose();
    return fit_column(y, make_design(predictors), std::move(state), config, beta_prior_a(p, slot),
                      beta_prior_b(p), trace);
}

Eigen::MatrixXd compose_pi_hat(const Eigen::MatrixXd& r_hat, const Eigen::MatrixXd& s_tilde) {
    if (r_hat.rows() != s_tilde.cols()) throw DimensionError("compose_pi_hat: shape mismatch");
    return r_hat.transpose() * s_tilde.transpose();
}

CointegrationEstimate estimate(const Eigen::MatrixXd& levels, const SslConfig& config) {
    config.validate();
    const Eigen::Index p = levels.rows();
    const Eigen::Index T = levels.cols() - 1;

    CointegrationEstimate est;
    est.config = config;
    est.seed = config.seed;
    est.T = static_cast<std::size_t>(T);
    est.pre = pls_pre_estimate(levels, config.pls);
    const Preprocessed prep = preprocess(levels, est.pre);
    const std::vector<std::size_t> slot = est.pre.pivot_position();

    // Work in scale-free units: unit-variance targets and predictors of unit
    // norm per sqrt(T-1), so lambda reads on a t-statistic scale.
    Eigen::MatrixXd work_targets = prep.targets;
    Eigen::VectorXd target_sd(p);
    const double n1 = static_cast<double>(std::max<Eigen::Index>(T - 1, 1));
    for (Eigen::Index j = 0; j < p; ++j) {
        target_sd(j) = std::sqrt(prep.targets.row(j).squaredNorm() / n1);
        if (target_sd(j) > 0.0) work_targets.row(j) /= target_sd(j);
        else target_sd(j) = 1.0;
    }
    Design design;
    design.xt = prep.predictors.transpose() / std::sqrt(n1);
    for (Eigen::Index k = 0; k < p; ++k)
        if (prep.zero_variance[k]) design.xt.col(k).setZero();
    design.xn = design.xt.colwise().squaredNorm().transpose();

    est.columns.resize(p);
    for (Eigen::Index j = 0; j < p; ++j) {
        ColumnState& c = est.columns[j];
        c.j = static_cast<std::size_t>(j);
        c.coeffs = Eigen::VectorXd::Zero(p);
        c.sigma2 = std::max(work_targets.row(j).squaredNorm() / static_cast<double>(T), kSigma2Floor);
        c.theta = 0.5;
        c.lambda0_j = config.lambda0_init;
    }

    const double pd = static_cast<double>(p);
    auto refit = [&](Eigen::Index j) {
        ColumnState s = est.columns[j];
        s.coeffs.setZero();
        const Eigen::VectorXd y = work_targets.row(j).transpose();
        est.columns[j] = fit_column(y, design, std::move(s), config, beta_prior_a(p, slot[j]), beta_prior_b(p),
                                    nullptr);
    };
    auto count_active = [&] {
        std::size_t r = 0;
        for (const auto& c : est.columns) r += c.active ? 1 : 0;
        return r;
    };

    // Phase 1: common increase until the rank falls below T / sqrt(p).
    const double threshold = static_cast<double>(T) / std::sqrt(pd);
    const double ceiling = config.ceiling_factor * config.lambda1;
    double lambda0 = config.lambda0_init;
    std::size_t rank = static_cast<std::size_t>(p);
    do {
        lambda0 += config.lambda_step;
        if (lambda0 > ceiling)
            throw NonConvergenceError(rank, "Phase 1 reached the lambda0 ceiling with rank " +
                                                std::to_string(rank) + " >= T/sqrt(p) = " +
                                                std::to_string(threshold));
        for (Eigen::Index j = 0; j < p; ++j) {
            est.columns[j].lambda0_j = lambda0;
            refit(j);
        }
        rank = count_active();
        ++est.lambda.phase1_sweeps;
    } while (static_cast<double>(rank) >= threshold);
    est.lambda.phase1_lambda0 = lambda0;
    est.lambda.phase1_rank = rank;

    // Phase 2: seeded single-column increases.
    std::vector<std::size_t> P;
    for (Eigen::Index j = 0; j < p; ++j)
        if (est.columns[j].active) P.push_back(static_cast<std::size_t>(j));
    Rng rng(config.seed);
    long misses = 0;
    while (!P.empty() && misses < static_cast<long>(config.phase2_patience) * static_cast<long>(P.size())) {
        const std::size_t idx = rng.index(P.size());
        const std::size_t j = P[idx];
        est.columns[j].lambda0_j += config.lambda_step;
        refit(static_cast<Eigen::Index>(j));
        ++est.lambda.phase2_samples;
        if (!est.columns[j].active) {
            P.erase(P.begin() + static_cast<std::ptrdiff_t>(idx));
            misses = 0;
        } else {
            ++misses;
        }
    }

    // Back to original units: column j of R-hat in the S-tilde basis.
    est.r_hat_matrix = Eigen::MatrixXd::Zero(p, p);
    for (Eigen::Index j = 0; j < p; ++j) {
        const auto& c = est.columns[j];
        if (!c.active) continue;
        for (Eigen::Index k = 0; k < p; ++k) {
            if (c.coeffs(k) == 0.0 || prep.zero_variance[k]) continue;
            est.r_hat_matrix(k, j) = c.coeffs(k) * target_sd(j) / (std::sqrt(n1) * prep.predictor_sd(k));
        }
    }
    est.pi_hat = compose_pi_hat(est.r_hat_matrix, est.pre.s_tilde);
    est.active = P;
    est.rank = P.size();
    est.lambda.final_lambda0.resize(p);
    for (Eigen::Index j = 0; j < p; ++j) est.lambda.final_lambda0[j] = est.columns[j].lambda0_j;
    return est;
}

CointegrationEstimate estimate(const PricePanel& panel, const SslConfig& config) {
    if (panel.has_gaps()) throw DomainError("panel has gaps; fill them first");
    return estimate(panel.prices(), config);
}

nlohmann::json to_json(const SslConfig& c) {
    return {{"lambda1", c.lambda1},
            {"lambda0_init", c.lambda0_init},
            {"lambda_step", c.lambda_step},
            {"em_max_iter", c.em_max_iter},
            {"em_tol", c.em_tol},
            {"zero_tol", c.zero_tol},
            {"seed", c.seed},
            {"phase2_patience", c.phase2_patience},
            {"ceiling_factor", c.ceiling_factor},
            {"pls",
             {{"center", c.pls.center},
              {"qr", c.pls.qr == QrMode::pivoted ? "pivoted" : "plain"},
              {"pinv_rcond", c.pls.pinv_rcond},
              {"ridge", c.pls.ridge}}}};
}

SslConfig ssl_config_from_json(const nlohmann::json& j) {
    SslConfig c;
    c.lambda1 = j.at("lambda1").get<double>();
    c.lambda0_init = j.at("lambda0_init").get<double>();
    c.lambda_step = j.at("lambda_step").get<double>();
    c.em_max_iter = j.at("em_max_iter").get<int>();
    c.em_tol = j.at("em_tol").get<double>();
    c.zero_tol = j.at("zero_tol").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.phase2_patience = j.at("phase2_patience").get<int>();
    c.ceiling_factor = j.at("ceiling_factor").get<double>();
    const auto& pls = j.at("pls");
    c.pls.center = pls.at("center").get<bool>();
    c.pls.qr = pls.at("qr").get<std::string>() == "plain" ? QrMode::plain : QrMode::pivoted;
    c.pls.pinv_rcond = pls.at("pinv_rcond").get<double>();
    c.pls.ridge = pls.at("ridge").get<double>();
    return c;
}

nlohmann::json estimate_to_json(const CointegrationEstimate& est, const std::vector<std::string>& tickers) {
    nlohmann::json active = nlohmann::json::array();
    for (std::size_t j : est.active) {
        nlohmann::json a = {{"index", j},
                            {"lambda0", est.columns[j].lambda0_j},
                            {"sigma2", est.columns[j].sigma2},
                            {"theta", est.columns[j].theta}};
        if (j < tickers.size()) a["ticker"] = tickers[j];
        active.push_back(a);
    }
    const auto& fl = est.lambda.final_lambda0;
    return {{"config", to_json(est.config)},
            {"seed", est.seed},
            {"p", est.r_hat_matrix.rows()},
            {"T", est.T},
            {"rank", est.rank},
            {"rank_threshold", static_cast<double>(est.T) / std::sqrt(static_cast<double>(est.r_hat_matrix.rows()))},
            {"lambda",
             {{"phase1_sweeps", est.lambda.phase1_sweeps},
              {"phase1_lambda0", est.lambda.phase1_lambda0},
              {"phase1_rank", est.lambda.phase1_rank},
              {"phase2_samples", est.lambda.phase2_samples},
              {"final_lambda0_min", fl.empty() ? 0.0 : *std::min_element(fl.begin(), fl.end())},
              {"final_lambda0_max", fl.empty() ? 0.0 : *std::max_element(fl.begin(), fl.end())}}},
            {"active", active}};
}

}  // namespace cointlab
