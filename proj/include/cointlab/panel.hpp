#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cointlab/date.hpp"

namespace cointlab {

// Prices are p x (T+1): one row per ticker, one column per date. A NaN entry
// marks a gap found at ingestion; fill_missing removes them.
class PricePanel {
public:
    PricePanel() = default;
    PricePanel(std::vector<Date> dates, std::vector<std::string> tickers, Eigen::MatrixXd prices);

    const std::vector<Date>& dates() const { return dates_; }
    const std::vector<std::string>& tickers() const { return tickers_; }
    const Eigen::MatrixXd& prices() const { return prices_; }

    std::size_t p() const { return tickers_.size(); }
    std::size_t n_obs() const { return dates_.size(); }
    bool has_gaps() const;
    std::optional<std::size_t> find(const std::string& ticker) const;

    // Columns first..last inclusive.
    PricePanel slice(std::size_t first, std::size_t last) const;
    PricePanel select(const std::vector<std::size_t>& rows) const;

private:
    std::vector<Date> dates_;
    std::vector<std::string> tickers_;
    Eigen::MatrixXd prices_;
};

struct DeltaPanel {
    std::vector<Date> dates;  // date of the later observation
    std::vector<std::string> tickers;
    Eigen::MatrixXd deltas;
};

struct ReturnsPanel {
    std::vector<Date> dates;  // date of the later observation
    std::vector<std::string> tickers;
    Eigen::MatrixXd returns;
};

enum class CsvLayout { wide, long_format };
enum class FillPolicy { forward_fill, drop_ticker };

struct CsvOptions {
    CsvLayout layout = CsvLayout::wide;
    // Keep gaps as NaN instead of failing; follow with fill_missing.
    bool allow_gaps = false;
};

PricePanel load_csv(const std::string& path, const CsvOptions& options = {});
// Wide layout, full round-trip precision.
void write_csv(const PricePanel& panel, const std::string& path);

PricePanel fill_missing(const PricePanel& panel, FillPolicy policy = FillPolicy::forward_fill,
                        double max_missing_fraction = 0.05);

DeltaPanel difference(const PricePanel& panel);
ReturnsPanel simple_returns(const PricePanel& panel);

struct Fold {
    Date train_start, train_end, test_start, test_end;
    // Column indices into the source panel, inclusive.
    std::size_t train_first = 0, train_last = 0, test_first = 0, test_last = 0;
};

struct RollingSchedule {
    int train_months = 24;
    std::vector<Fold> folds;
};

RollingSchedule make_schedule(const PricePanel& panel, int train_months = 24, int folds = 14);

}  // namespace cointlab
