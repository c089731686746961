#pragma once

#include <chrono>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cointlab {

using Date = std::chrono::year_month_day;

// Strict YYYY-MM-DD.
std::optional<Date> parse_date(std::string_view text);
std::string format_date(const Date& d);
// "YY-MM", the period labels used in the report tables.
std::string month_label(const Date& d);

// Months since year 0, for month arithmetic.
int month_index(const Date& d);

// Mon-Fri days from start (inclusive), count of them.
std::vector<Date> business_days(Date start, std::size_t count);

}  // namespace cointlab
