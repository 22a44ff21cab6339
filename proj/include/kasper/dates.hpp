#pragma once

#include <cstdint>
#include <string>

namespace kasper {

// Calendar day. Comparison follows chronological order.
struct Date {
    int year = 1970;
    int month = 1;  // 1..12
    int day = 1;    // 1..31

    friend bool operator==(const Date&, const Date&) = default;
    friend auto operator<=>(const Date&, const Date&) = default;
};

// Days since 1970-01-01 (proleptic Gregorian).
std::int64_t days_from_civil(const Date& d);
Date civil_from_days(std::int64_t z);

// 0 = Monday .. 6 = Sunday.
int weekday(const Date& d);

// Accepts ISO-8601 (2021-01-05) or `Mon DD, YYYY` (Jan 5, 2021).
// Throws schema_error on any other format.
Date parse_date(const std::string& text);

std::string format_date(const Date& d);  // ISO-8601

// Next weekday strictly after d (skips Saturday/Sunday).
Date next_business_day(const Date& d);

}  // namespace kasper
