#include "cointlab/panel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "cointlab/errors.hpp"

namespace cointlab {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r' || s[b] == '\n')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r' || s[e - 1] == '\n')) --e;
    return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    fields.push_back(trim(cur));
    return fields;
}

bool is_missing_token(const std::string& s) {
    if (s.empty()) return true;
    std::string lower;
    for (char c : s) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return lower == "na" || lower == "nan" || lower == "null";
}

double parse_price(const std::string& s, std::size_t row, const std::string& ticker) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size() || !std::isfinite(v))
        throw IngestError("row " + std::to_string(row) + ": unparseable price '" + s + "' for " + ticker);
    if (v <= 0.0)
        throw IngestError("row " + std::to_string(row) + ": nonpositive price " + s + " for " + ticker);
    return v;
}

Date parse_row_date(const std::string& s, std::size_t row) {
    auto d = parse_date(s);
    if (!d) throw IngestError("row " + std::to_string(row) + ": malformed date '" + s + "'");
    return *d;
}

bool looks_like_header(const std::vector<std::string>& fields) {
    return !fields.empty() && !parse_date(fields[0]);
}

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

PricePanel::PricePanel(std::vector<Date> dates, std::vector<std::string> tickers, Eigen::MatrixXd prices)
    : dates_(std::move(dates)), tickers_(std::move(tickers)), prices_(std::move(prices)) {
    if (prices_.rows() != static_cast<Eigen::Index>(tickers_.size()) ||
        prices_.cols() != static_cast<Eigen::Index>(dates_.size()))
        throw DimensionError("price matrix is " + std::to_string(prices_.rows()) + "x" +
                             std::to_string(prices_.cols()) + " but panel has " +
                             std::to_string(tickers_.size()) + " tickers and " +
                             std::to_string(dates_.size()) + " dates");
    for (std::size_t t = 1; t < dates_.size(); ++t)
        if (!(dates_[t - 1] < dates_[t]))
            throw DomainError("dates not strictly increasing at " + format_date(dates_[t]));
    std::set<std::string> seen;
    for (const auto& tk : tickers_)
        if (!seen.insert(tk).second) throw ConflictError("duplicate ticker " + tk);
    for (Eigen::Index i = 0; i < prices_.rows(); ++i)
        for (Eigen::Index t = 0; t < prices_.cols(); ++t) {
            double v = prices_(i, t);
            if (std::isinf(v)) throw DomainError("infinite price for " + tickers_[i]);
        }
}

bool PricePanel::has_gaps() const { return prices_.hasNaN(); }

std::optional<std::size_t> PricePanel::find(const std::string& ticker) const {
    auto it = std::find(tickers_.begin(), tickers_.end(), ticker);
    if (it == tickers_.end()) return std::nullopt;
    return static_cast<std::size_t>(it - tickers_.begin());
}

PricePanel PricePanel::slice(std::size_t first, std::size_t last) const {
    if (first > last || last >= dates_.size()) throw DimensionError("slice out of range");
    std::vector<Date> d(dates_.begin() + first, dates_.begin() + last + 1);
    return PricePanel(std::move(d), tickers_, prices_.middleCols(first, last - first + 1));
}

PricePanel PricePanel::select(const std::vector<std::size_t>& rows) const {
    Eigen::MatrixXd sub(rows.size(), prices_.cols());
    std::vector<std::string> names;
    for (std::size_t k = 0; k < rows.size(); ++k) {
        if (rows[k] >= tickers_.size()) throw DimensionError("ticker index out of range");
        sub.row(k) = prices_.row(rows[k]);
        names.push_back(tickers_[rows[k]]);
    }
    return PricePanel(dates_, std::move(names), std::move(sub));
}

PricePanel load_csv(const std::string& path, const CsvOptions& options) {
    std::ifstream in(path);
    if (!in) throw IngestError("cannot open " + path);

    // (date, ticker) -> price; NaN for an explicit empty cell.
    std::map<Date, std::map<std::string, double>> cells;
    std::set<std::string> tickers;
    std::string line;
    std::size_t row = 0;

    auto put = [&](const Date& d, const std::string& tk, double v, std::size_t r) {
        auto [it, inserted] = cells[d].emplace(tk, v);
        if (!inserted)
            throw ConflictError("row " + std::to_string(r) + ": duplicate observation for (" +
                                format_date(d) + ", " + tk + ")");
        tickers.insert(tk);
    };

    if (options.layout == CsvLayout::wide) {
        std::vector<std::string> header;
        while (std::getline(in, line)) {
            ++row;
            if (trim(line).empty()) continue;
            auto fields = split_csv_line(line);
            if (header.empty()) {
                if (fields.size() < 2) throw IngestError("row 1: header needs a date column and tickers");
                // Repeated ticker columns merge; two values for one cell fail in put().
                header = fields;
                continue;
            }
            if (fields.size() != header.size())
                throw IngestError("row " + std::to_string(row) + ": expected " +
                                  std::to_string(header.size()) + " fields, got " +
                                  std::to_string(fields.size()));
            Date d = parse_row_date(fields[0], row);
            for (std::size_t k = 1; k < fields.size(); ++k) {
                const std::string& tk = header[k];
                if (tk.empty()) throw IngestError("row 1: empty ticker name in column " + std::to_string(k + 1));
                if (is_missing_token(fields[k])) {
                    if (!cells[d].count(tk)) tickers.insert(tk);
                    continue;
                }
                put(d, tk, parse_price(fields[k], row, tk), row);
            }
            cells[d];
        }
    } else {
        bool first = true;
        while (std::getline(in, line)) {
            ++row;
            if (trim(line).empty()) continue;
            auto fields = split_csv_line(line);
            if (first) {
                first = false;
                if (looks_like_header(fields)) continue;
            }
            if (fields.size() != 3)
                throw IngestError("row " + std::to_string(row) + ": expected date,ticker,price");
            Date d = parse_row_date(fields[0], row);
            if (fields[1].empty()) throw IngestError("row " + std::to_string(row) + ": empty ticker");
            if (is_missing_token(fields[2])) {
                cells[d];
                tickers.insert(fields[1]);
                continue;
            }
            put(d, fields[1], parse_price(fields[2], row, fields[1]), row);
        }
    }

    if (cells.empty() || tickers.empty()) throw IngestError(path + ": no observations");

    std::vector<std::string> names(tickers.begin(), tickers.end());
    std::vector<Date> dates;
    for (const auto& [d, _] : cells) dates.push_back(d);
    Eigen::MatrixXd prices = Eigen::MatrixXd::Constant(names.size(), dates.size(), kNaN);
    for (std::size_t t = 0; t < dates.size(); ++t) {
        const auto& obs = cells[dates[t]];
        for (std::size_t i = 0; i < names.size(); ++i) {
            auto it = obs.find(names[i]);
            if (it != obs.end()) prices(i, t) = it->second;
        }
    }
    if (!options.allow_gaps) {
        for (std::size_t i = 0; i < names.size(); ++i)
            for (std::size_t t = 0; t < dates.size(); ++t)
                if (std::isnan(prices(i, t)))
                    throw IngestError("missing price for " + names[i] + " on " + format_date(dates[t]) +
                                      " (enable a fill policy to accept gaps)");
    }
    return PricePanel(std::move(dates), std::move(names), std::move(prices));
}

void write_csv(const PricePanel& panel, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << "date";
    for (const auto& tk : panel.tickers()) out << ',' << tk;
    out << '\n';
    for (std::size_t t = 0; t < panel.n_obs(); ++t) {
        out << format_date(panel.dates()[t]);
        for (std::size_t i = 0; i < panel.p(); ++i) {
            double v = panel.prices()(i, t);
            out << ',';
            if (!std::isnan(v)) out << fmt17(v);
        }
        out << '\n';
    }
    if (!out) throw Error("write failed for " + path);
}

PricePanel fill_missing(const PricePanel& panel, FillPolicy policy, double max_missing_fraction) {
    const auto& Y = panel.prices();
    const std::size_t n = panel.n_obs();
    std::vector<std::size_t> keep;
    Eigen::MatrixXd filled = Y;
    for (std::size_t i = 0; i < panel.p(); ++i) {
        std::size_t missing = 0;
        for (std::size_t t = 0; t < n; ++t) missing += std::isnan(Y(i, t)) ? 1 : 0;
        if (missing == 0) {
            keep.push_back(i);
            continue;
        }
        if (policy == FillPolicy::drop_ticker) continue;
        if (std::isnan(Y(i, 0))) continue;
        if (static_cast<double>(missing) > max_missing_fraction * static_cast<double>(n)) continue;
        for (std::size_t t = 1; t < n; ++t)
            if (std::isnan(filled(i, t))) filled(i, t) = filled(i, t - 1);
        keep.push_back(i);
    }
    if (keep.empty()) throw EmptyPanelError("every ticker was dropped while filling gaps");
    PricePanel out(panel.dates(), panel.tickers(), std::move(filled));
    return out.select(keep);
}

DeltaPanel difference(const PricePanel& panel) {
    if (panel.n_obs() < 2) throw DimensionError("difference needs at least two observations");
    const auto& Y = panel.prices();
    const Eigen::Index T = Y.cols() - 1;
    DeltaPanel d;
    d.dates.assign(panel.dates().begin() + 1, panel.dates().end());
    d.tickers = panel.tickers();
    d.deltas = Y.rightCols(T) - Y.leftCols(T);
    return d;
}

ReturnsPanel simple_returns(const PricePanel& panel) {
    if (panel.n_obs() < 2) throw DimensionError("returns need at least two observations");
    const auto& Y = panel.prices();
    for (Eigen::Index i = 0; i < Y.rows(); ++i)
        for (Eigen::Index t = 0; t < Y.cols(); ++t)
            if (!(Y(i, t) > 0.0))
                throw DomainError("nonpositive or missing price for " + panel.tickers()[i] + " on " +
                                  format_date(panel.dates()[t]));
    const Eigen::Index T = Y.cols() - 1;
    ReturnsPanel r;
    r.dates.assign(panel.dates().begin() + 1, panel.dates().end());
    r.tickers = panel.tickers();
    r.returns = (Y.rightCols(T).array() / Y.leftCols(T).array() - 1.0).matrix();
    return r;
}

RollingSchedule make_schedule(const PricePanel& panel, int train_months, int folds) {
    if (train_months < 1) throw ScheduleError("train_months must be at least 1");
    if (folds < 1) throw ScheduleError("folds must be at least 1");
    if (panel.n_obs() == 0) throw ScheduleError("empty panel");
    const auto& dates = panel.dates();
    const int m0 = month_index(dates.front());
    const int m_last = month_index(dates.back());
    const int available = m_last - m0 + 1;
    const int needed = train_months + folds;
    if (available < needed)
        throw ScheduleError("panel covers " + std::to_string(available) + " calendar months but " +
                            std::to_string(needed) + " are needed (short by " +
                            std::to_string(needed - available) + ")");

    // First and last column of every calendar month in the panel span.
    std::vector<std::optional<std::pair<std::size_t, std::size_t>>> span(available);
    for (std::size_t t = 0; t < dates.size(); ++t) {
        auto& s = span[month_index(dates[t]) - m0];
        if (!s) s = std::make_pair(t, t);
        else s->second = t;
    }
    auto month = [&](int k) {
        if (!span[k]) {
            int mi = m0 + k;
            char buf[16];
            std::snprintf(buf, sizeof buf, "%04d-%02d", mi / 12, mi % 12 + 1);
            throw ScheduleError(std::string("no observations in month ") + buf);
        }
        return *span[k];
    };

    RollingSchedule sched;
    sched.train_months = train_months;
    for (int k = 0; k < folds; ++k) {
        Fold f;
        f.train_first = month(k).first;
        f.train_last = month(k + train_months - 1).second;
        f.test_first = month(k + train_months).first;
        f.test_last = month(k + train_months).second;
        f.train_start = dates[f.train_first];
        f.train_end = dates[f.train_last];
        f.test_start = dates[f.test_first];
        f.test_end = dates[f.test_last];
        sched.folds.push_back(f);
    }
    return sched;
}

}  // namespace cointlab
