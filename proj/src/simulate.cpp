#include "cointlab/simulate.hpp"

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "cointlab/errors.hpp"
#include "cointlab/rng.hpp"

namespace cointlab {

namespace {

std::size_t svd_rank(const Eigen::MatrixXd& m, double cutoff) {
    if (m.size() == 0) return 0;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    std::size_t r = 0;
    for (Eigen::Index i = 0; i < svd.singularValues().size(); ++i) r += svd.singularValues()(i) > cutoff ? 1 : 0;
    return r;
}

std::string ticker_name(std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "S%03zu", i);
    return buf;
}

void check_shapes(const VecmSpec& s) {
    const auto p = static_cast<Eigen::Index>(s.p);
    const auto r = static_cast<Eigen::Index>(s.r_true);
    if (s.p < 1 || s.T < 1) throw SpecError("spec needs p >= 1 and T >= 1");
    if (s.r_true >= s.p && s.r_true > 0) throw SpecError("r_true must be below p");
    if (s.loading.rows() != p || s.loading.cols() != r || s.coint.rows() != r || s.coint.cols() != p)
        throw SpecError("loading must be p x r and coint r x p");
    if (s.y0.size() != p) throw SpecError("y0 must have p entries");
    if (s.anchor.size() != 0 && s.anchor.size() != p) throw SpecError("anchor must have p entries");
    if ((s.y0.array() <= 0.0).any()) throw SpecError("y0 must be positive");
    if (!(s.noise_std >= 0.0) || !(s.market_std >= 0.0)) throw SpecError("noise scales must be nonnegative");
}

}  // namespace

double correction_radius(const VecmSpec& spec) {
    if (spec.r_true == 0) return 0.0;
    const Eigen::MatrixXd m =
        Eigen::MatrixXd::Identity(spec.r_true, spec.r_true) + spec.coint * spec.loading;
    Eigen::EigenSolver<Eigen::MatrixXd> es(m, false);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

Simulation generate(const VecmSpec& spec) {
    check_shapes(spec);
    const Eigen::MatrixXd pi = spec.pi();
    if (spec.r_true > 0) {
        if (!(correction_radius(spec) < 1.0 - 1e-6))
            throw SpecError("unstable error correction: spectral radius of I + coint*loading is " +
                            std::to_string(correction_radius(spec)));
        if (svd_rank(pi, 1e-10) != spec.r_true) throw SpecError("loading*coint does not have rank r_true");
    }
    const auto p = static_cast<Eigen::Index>(spec.p);
    const auto T = static_cast<Eigen::Index>(spec.T);
    const Eigen::VectorXd anchor = spec.anchor.size() ? spec.anchor : spec.y0;

    Rng rng(spec.seed);
    Eigen::MatrixXd Y(p, T + 1);
    Y.col(0) = spec.y0;
    Eigen::VectorXd z(p);
    for (Eigen::Index t = 1; t <= T; ++t) {
        for (Eigen::Index i = 0; i < p; ++i) z(i) = rng.normal();
        const double f = rng.normal();
        Y.col(t) = Y.col(t - 1) + pi * (Y.col(t - 1) - anchor) + spec.noise_std * z;
        Y.col(t).array() += spec.market_std * f;
        if ((Y.col(t).array() <= 0.0).any())
            throw SpecError("simulated prices left the positive orthant at step " + std::to_string(t));
    }
    std::vector<std::string> tickers;
    for (std::size_t i = 0; i < spec.p; ++i) tickers.push_back(ticker_name(i));
    return {PricePanel(business_days(spec.start, spec.T + 1), std::move(tickers), std::move(Y)), pi};
}

VecmSpec random_spec(std::size_t p, std::size_t r_true, std::size_t T, std::uint64_t seed,
                     const SpecOptions& options) {
    if (r_true >= p) throw SpecError("r_true must be below p");
    if (!(options.kappa_lo > 0.0) || !(options.kappa_hi < 1.0) || options.kappa_lo > options.kappa_hi)
        throw SpecError("kappa range must lie in (0, 1)");
    VecmSpec spec;
    spec.p = p;
    spec.r_true = r_true;
    spec.T = T;
    spec.noise_std = options.noise_std;
    spec.market_std = options.market_std;
    spec.seed = seed;
    spec.y0 = Eigen::VectorXd::Constant(p, options.y0);
    const auto P = static_cast<Eigen::Index>(p);
    const auto R = static_cast<Eigen::Index>(r_true);

    // The spec stream and the path stream share the seed but not the state.
    Rng rng(seed ^ 0x5eedc0147ab5ULL);
    for (int attempt = 0; attempt < 100; ++attempt) {
        spec.loading = Eigen::MatrixXd::Zero(P, R);
        spec.coint = Eigen::MatrixXd::Zero(R, P);
        if (r_true == 0) return spec;

        // Partial Fisher-Yates for r distinct loading assets.
        std::vector<std::size_t> order(p);
        for (std::size_t i = 0; i < p; ++i) order[i] = i;
        for (std::size_t k = 0; k < r_true; ++k) std::swap(order[k], order[k + rng.index(p - k)]);
        std::vector<bool> is_loading(p, false);
        for (std::size_t k = 0; k < r_true; ++k) is_loading[order[k]] = true;

        const std::size_t free = p - r_true;
        for (std::size_t k = 0; k < r_true; ++k) {
            const auto row = static_cast<Eigen::Index>(order[k]);
            spec.loading(row, k) = -rng.uniform(options.kappa_lo, options.kappa_hi);
            spec.coint(k, row) = 1.0;
            if (free == 0) continue;
            double sum = 1.0;
            for (std::size_t i = 0; i < p; ++i) {
                if (is_loading[i]) continue;
                const double w = (rng.uniform() < 0.5 ? -1.0 : 1.0) * options.coint_scale;
                spec.coint(k, i) = w;
                sum += w;
            }
            const double shift = sum / static_cast<double>(free);
            for (std::size_t i = 0; i < p; ++i)
                if (!is_loading[i]) spec.coint(k, i) -= shift;
        }
        const double radius = correction_radius(spec);
        if (radius > 0.0 && radius < 0.98 && svd_rank(spec.pi(), 1e-10) == r_true) return spec;
    }
    throw SpecError("no stable spec after 100 draws");
}

nlohmann::json spec_to_json(const VecmSpec& spec) {
    auto mat = [](const Eigen::MatrixXd& m) {
        nlohmann::json rows = nlohmann::json::array();
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            nlohmann::json row = nlohmann::json::array();
            for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
            rows.push_back(row);
        }
        return rows;
    };
    return {{"p", spec.p},
            {"r_true", spec.r_true},
            {"T", spec.T},
            {"noise_std", spec.noise_std},
            {"market_std", spec.market_std},
            {"seed", spec.seed},
            {"start", format_date(spec.start)},
            {"loading", mat(spec.loading)},
            {"coint", mat(spec.coint)},
            {"pi_true", mat(spec.pi())}};
}

}  // namespace cointlab
