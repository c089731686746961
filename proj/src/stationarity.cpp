#include "cointlab/stationarity.hpp"

#include <cmath>
#include <limits>

#include "cointlab/errors.hpp"

namespace cointlab {

namespace {

// Design for lag k on rows i = start..n_dy-1 of the differenced series:
// columns [1, y_i, dy_{i-1}, ..., dy_{i-k}], target dy_i.
void build_design(const Eigen::VectorXd& y, const Eigen::VectorXd& dy, std::size_t k, std::size_t start,
                  Eigen::MatrixXd& X, Eigen::VectorXd& target) {
    const std::size_t rows = static_cast<std::size_t>(dy.size()) - start;
    X.resize(rows, k + 2);
    target.resize(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t i = start + r;
        X(r, 0) = 1.0;
        X(r, 1) = y(i);
        for (std::size_t l = 1; l <= k; ++l) X(r, 1 + l) = dy(i - l);
        target(r) = dy(i);
    }
}

void check_rank(const Eigen::MatrixXd& R) {
    const Eigen::Index m = R.cols();
    double biggest = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) biggest = std::max(biggest, std::abs(R(j, j)));
    for (Eigen::Index j = 0; j < m; ++j)
        if (!(std::abs(R(j, j)) > 1e-10 * biggest))
            throw TestError("degenerate ADF regressor matrix (constant or collinear series)");
}

}  // namespace

std::size_t schwert_max_lag(std::size_t n) {
    return static_cast<std::size_t>(std::floor(12.0 * std::pow(static_cast<double>(n) / 100.0, 0.25)));
}

AdfResult adf_test(const Eigen::VectorXd& series, std::optional<std::size_t> max_lag, LagSelection selection) {
    const std::size_t n = static_cast<std::size_t>(series.size());
    const std::size_t kmax = max_lag ? *max_lag : schwert_max_lag(n);
    if (n < kmax + 10)
        throw TestError("series of length " + std::to_string(n) + " too short for max lag " +
                        std::to_string(kmax));
    for (Eigen::Index i = 0; i < series.size(); ++i)
        if (!std::isfinite(series(i))) throw TestError("series contains non-finite values");

    const Eigen::VectorXd y = series.head(n - 1);
    const Eigen::VectorXd dy = series.tail(n - 1) - series.head(n - 1);

    std::size_t k = kmax;
    if (selection == LagSelection::aic && kmax > 0) {
        // One QR of the widest design on the common sample gives the RSS of
        // every nested lag order: RSS_m = |target|^2 - sum_{i<m} (Q'target)_i^2.
        Eigen::MatrixXd X;
        Eigen::VectorXd target;
        build_design(y, dy, kmax, kmax, X, target);
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(X);
        const Eigen::MatrixXd R = qr.matrixQR().topRows(X.cols()).triangularView<Eigen::Upper>();
        check_rank(R);
        const Eigen::VectorXd qt = qr.householderQ().transpose() * target;
        const double total = target.squaredNorm();
        const double nobs = static_cast<double>(X.rows());
        double best = std::numeric_limits<double>::infinity();
        double explained = qt(0) * qt(0);
        for (std::size_t lag = 0; lag <= kmax; ++lag) {
            explained += qt(1 + lag) * qt(1 + lag);
            const double rss = std::max(total - explained, 0.0);
            const double aic = nobs * std::log(rss / nobs) + 2.0 * static_cast<double>(lag + 2);
            if (aic < best) {
                best = aic;
                k = lag;
            }
        }
    }

    Eigen::MatrixXd X;
    Eigen::VectorXd target;
    build_design(y, dy, k, k, X, target);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(X);
    const Eigen::Index m = X.cols();
    const Eigen::MatrixXd R = qr.matrixQR().topRows(m).triangularView<Eigen::Upper>();
    check_rank(R);
    const Eigen::VectorXd coef = qr.solve(target);
    const double rss = (target - X * coef).squaredNorm();
    const double dof = static_cast<double>(X.rows() - m);
    if (!(rss > 0.0) || dof <= 0.0) throw TestError("ADF regression has no residual variance");
    const Eigen::MatrixXd Rinv =
        R.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(m, m));
    const double var_rho = rss / dof * Rinv.row(1).squaredNorm();

    AdfResult out;
    out.statistic = coef(1) / std::sqrt(var_rho);
    if (!std::isfinite(out.statistic)) throw TestError("ADF statistic is not finite");
    out.lags_used = k;
    out.n_obs = static_cast<std::size_t>(X.rows());
    out.reject_1pct = out.statistic < kAdfCritical1;
    out.reject_5pct = out.statistic < kAdfCritical5;
    out.reject_10pct = out.statistic < kAdfCritical10;
    return out;
}

std::vector<std::size_t> screen_i1(const PricePanel& panel, std::optional<std::size_t> max_lag) {
    std::vector<std::size_t> keep;
    const auto& Y = panel.prices();
    for (std::size_t i = 0; i < panel.p(); ++i) {
        const Eigen::VectorXd level = Y.row(i).transpose();
        if (level.size() < 3) continue;
        const Eigen::VectorXd diff = level.tail(level.size() - 1) - level.head(level.size() - 1);
        try {
            if (adf_test(level, max_lag).reject_5pct) continue;
            if (!adf_test(diff, max_lag).reject_5pct) continue;
        } catch (const TestError&) {
            continue;
        }
        keep.push_back(i);
    }
    return keep;
}

}  // namespace cointlab
