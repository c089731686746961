#include "cointlab/date.hpp"

#include <charconv>
#include <cstdio>

namespace cointlab {

namespace {

bool parse_int(std::string_view s, int& out) {
    if (s.empty()) return false;
    for (char c : s)
        if (c < '0' || c > '9') return false;
    auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc{};
}

}  // namespace

std::optional<Date> parse_date(std::string_view text) {
    if (text.size() != 10 || text[4] != '-' || text[7] != '-') return std::nullopt;
    int y = 0, m = 0, d = 0;
    if (!parse_int(text.substr(0, 4), y) || !parse_int(text.substr(5, 2), m) ||
        !parse_int(text.substr(8, 2), d))
        return std::nullopt;
    Date date{std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(m)},
              std::chrono::day{static_cast<unsigned>(d)}};
    if (!date.ok()) return std::nullopt;
    return date;
}

std::string format_date(const Date& d) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(d.year()),
                  static_cast<unsigned>(d.month()), static_cast<unsigned>(d.day()));
    return buf;
}

std::string month_label(const Date& d) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "%02d-%02u", static_cast<int>(d.year()) % 100,
                  static_cast<unsigned>(d.month()));
    return buf;
}

int month_index(const Date& d) {
    return static_cast<int>(d.year()) * 12 + static_cast<int>(static_cast<unsigned>(d.month())) - 1;
}

std::vector<Date> business_days(Date start, std::size_t count) {
    std::vector<Date> out;
    out.reserve(count);
    std::chrono::sys_days day{start};
    while (out.size() < count) {
        std::chrono::weekday wd{day};
        if (wd != std::chrono::Saturday && wd != std::chrono::Sunday) out.emplace_back(day);
        day += std::chrono::days{1};
    }
    return out;
}

}  // namespace cointlab
