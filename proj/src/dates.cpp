#include "kasper/dates.hpp"

#include <array>
#include <cctype>
#include <charconv>
#include <sstream>

#include "kasper/errors.hpp"

namespace kasper {

std::int64_t days_from_civil(const Date& d) {
    // Howard Hinnant's civil-days algorithm.
    std::int64_t y = d.year;
    const int m = d.month;
    const int dy = d.day;
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153u * static_cast<unsigned>(m + (m > 2 ? -3 : 9)) + 2u) / 5u +
                         static_cast<unsigned>(dy) - 1u;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

Date civil_from_days(std::int64_t z) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    const unsigned d = doy - (153 * mp + 2) / 5 + 1;
    const unsigned m = mp + (mp < 10 ? 3 : -9);
    return Date{static_cast<int>(y + (m <= 2)), static_cast<int>(m), static_cast<int>(d)};
}

int weekday(const Date& d) {
    // 1970-01-01 is a Thursday (index 3 with Monday = 0).
    std::int64_t z = days_from_civil(d);
    return static_cast<int>(((z % 7) + 7 + 3) % 7);
}

namespace {

const std::array<std::string, 12> kMonths = {"jan", "feb", "mar", "apr", "may", "jun",
                                             "jul", "aug", "sep", "oct", "nov", "dec"};

bool parse_int(const std::string& s, int& out) {
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && p == s.data() + s.size();
}

void validate(const Date& d, const std::string& text) {
    static const int dim[] = {31, 29, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    if (d.year < 1 || d.month < 1 || d.month > 12 || d.day < 1 || d.day > dim[d.month - 1]) {
        throw schema_error("unparseable date: '" + text + "'");
    }
}

}  // namespace

Date parse_date(const std::string& text) {
    std::string s = text;
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.erase(s.begin());
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
    if (s.empty()) throw schema_error("empty date field");

    Date d;
    if (std::isdigit(static_cast<unsigned char>(s[0])) && s.size() >= 8 && s.find('-') != std::string::npos) {
        // ISO-8601 YYYY-MM-DD
        auto p1 = s.find('-');
        auto p2 = s.find('-', p1 + 1);
        if (p2 == std::string::npos) throw schema_error("unparseable date: '" + text + "'");
        if (!parse_int(s.substr(0, p1), d.year) || !parse_int(s.substr(p1 + 1, p2 - p1 - 1), d.month) ||
            !parse_int(s.substr(p2 + 1), d.day)) {
            throw schema_error("unparseable date: '" + text + "'");
        }
        validate(d, text);
        return d;
    }

    // `Mon DD, YYYY`
    auto sp = s.find(' ');
    auto cm = s.find(',');
    if (sp == std::string::npos || cm == std::string::npos || cm < sp) {
        throw schema_error("unparseable date: '" + text + "'");
    }
    std::string mon = s.substr(0, sp);
    for (auto& c : mon) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    d.month = 0;
    for (int i = 0; i < 12; ++i) {
        if (mon == kMonths[static_cast<std::size_t>(i)]) {
            d.month = i + 1;
            break;
        }
    }
    if (d.month == 0) throw schema_error("unparseable date: '" + text + "'");
    std::string daypart = s.substr(sp + 1, cm - sp - 1);
    std::string yearpart = s.substr(cm + 1);
    while (!yearpart.empty() && yearpart.front() == ' ') yearpart.erase(yearpart.begin());
    if (!parse_int(daypart, d.day) || !parse_int(yearpart, d.year)) {
        throw schema_error("unparseable date: '" + text + "'");
    }
    validate(d, text);
    return d;
}

std::string format_date(const Date& d) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", d.year, d.month, d.day);
    return buf;
}

Date next_business_day(const Date& d) {
    std::int64_t z = days_from_civil(d);
    do {
        ++z;
    } while (weekday(civil_from_days(z)) >= 5);
    return civil_from_days(z);
}

}  // namespace kasper
