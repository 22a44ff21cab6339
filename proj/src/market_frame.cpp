#include "kasper/market_frame.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>

#include "kasper/errors.hpp"

namespace kasper {

namespace {

// Split one CSV record, honoring double-quoted fields (Yahoo-style volumes
// like "1,234,567").
std::vector<std::string> split_record(const std::string& line, char delim) {
    std::vector<std::string> out;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == delim) {
            out.push_back(field);
            field.clear();
        } else if (c != '\r') {
            field += c;
        }
    }
    out.push_back(field);
    return out;
}

std::string normalize_header(std::string h) {
    std::string out;
    for (char c : h) {
        if (c == '*' || c == '\r') continue;
        out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    // trim + collapse internal whitespace/underscores to one space
    std::string trimmed;
    bool in_space = false;
    for (char c : out) {
        if (c == ' ' || c == '\t' || c == '_') {
            in_space = !trimmed.empty();
        } else {
            if (in_space) trimmed += ' ';
            trimmed += c;
            in_space = false;
        }
    }
    return trimmed;
}

std::optional<double> parse_number(std::string s) {
    // strip spaces and thousands separators
    std::string clean;
    for (char c : s) {
        if (c == ' ' || c == ',' || c == '\t' || c == '\r') continue;
        clean += c;
    }
    if (clean.empty()) return std::nullopt;
    if (clean == "null" || clean == "NULL" || clean == "NaN" || clean == "nan" ||
        clean == "NA" || clean == "na" || clean == "-") {
        return std::nullopt;
    }
    double v = 0.0;
    auto [p, ec] = std::from_chars(clean.data(), clean.data() + clean.size(), v);
    if (ec != std::errc{} || p != clean.data() + clean.size()) return std::nullopt;
    if (!std::isfinite(v)) return std::nullopt;
    return v;
}

struct RawRow {
    Date date;
    std::array<std::optional<double>, 6> cells;  // open high low close adj_close volume
};

}  // namespace

MarketFrame parse_ohlcv(const std::string& text, const std::string& source_id, char delimiter) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw empty_input_error("no header in '" + source_id + "'");

    const auto headers = split_record(line, delimiter);
    // column index per field: date open high low close adj_close volume
    std::array<int, 7> idx;
    idx.fill(-1);
    for (std::size_t c = 0; c < headers.size(); ++c) {
        const std::string h = normalize_header(headers[c]);
        const int ci = static_cast<int>(c);
        if (h == "date" && idx[0] < 0) idx[0] = ci;
        else if (h == "open" && idx[1] < 0) idx[1] = ci;
        else if (h == "high" && idx[2] < 0) idx[2] = ci;
        else if (h == "low" && idx[3] < 0) idx[3] = ci;
        else if (h == "close" && idx[4] < 0) idx[4] = ci;
        else if ((h == "adj close" || h == "adjclose" || h == "adjusted close") && idx[5] < 0) idx[5] = ci;
        else if (h == "volume" && idx[6] < 0) idx[6] = ci;
    }
    static const char* kNames[7] = {"date", "open", "high", "low", "close", "adj close", "volume"};
    for (int f = 0; f < 7; ++f) {
        if (idx[f] < 0) {
            throw schema_error("missing required column '" + std::string(kNames[f]) + "' in '" +
                               source_id + "'");
        }
    }

    MarketFrame frame;
    frame.source_id = source_id;
    std::vector<RawRow> raw;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        const auto fields = split_record(line, delimiter);
        ++frame.stats.rows_read;
        RawRow row;
        const auto di = static_cast<std::size_t>(idx[0]);
        if (di >= fields.size()) {
            ++frame.stats.rows_dropped_leading;
            continue;
        }
        try {
            row.date = parse_date(fields[di]);
        } catch (const schema_error&) {
            ++frame.stats.rows_dropped_leading;
            continue;
        }
        for (int f = 1; f < 7; ++f) {
            const auto ci = static_cast<std::size_t>(idx[f]);
            row.cells[static_cast<std::size_t>(f - 1)] =
                ci < fields.size() ? parse_number(fields[ci]) : std::nullopt;
        }
        // prices must be positive; non-positive values are treated as missing
        for (int f = 0; f < 5; ++f) {
            auto& cell = row.cells[static_cast<std::size_t>(f)];
            if (cell && *cell <= 0.0) cell = std::nullopt;
        }
        if (row.cells[5] && *row.cells[5] < 0.0) row.cells[5] = std::nullopt;
        raw.push_back(std::move(row));
    }
    if (raw.empty()) throw empty_input_error("no parseable rows in '" + source_id + "'");

    std::stable_sort(raw.begin(), raw.end(),
                     [](const RawRow& a, const RawRow& b) { return a.date < b.date; });
    // Keep the first occurrence of each date.
    std::vector<RawRow> dedup;
    dedup.reserve(raw.size());
    for (auto& r : raw) {
        if (!dedup.empty() && dedup.back().date == r.date) {
            ++frame.stats.duplicate_dates_dropped;
            continue;
        }
        dedup.push_back(std::move(r));
    }

    // Forward fill, dropping leading rows that cannot be filled.
    std::array<std::optional<double>, 6> last;
    for (const auto& r : dedup) {
        bool complete = true;
        std::array<double, 6> vals{};
        for (std::size_t f = 0; f < 6; ++f) {
            if (r.cells[f]) {
                vals[f] = *r.cells[f];
            } else if (last[f]) {
                vals[f] = *last[f];
                ++frame.stats.cells_filled;
            } else {
                complete = false;
            }
        }
        if (!complete) {
            ++frame.stats.rows_dropped_leading;
            continue;
        }
        for (std::size_t f = 0; f < 6; ++f) last[f] = vals[f];
        frame.rows.push_back(Bar{r.date, vals[0], vals[1], vals[2], vals[3], vals[4], vals[5]});
    }
    if (frame.rows.empty()) throw empty_input_error("no complete rows in '" + source_id + "'");
    return frame;
}

MarketFrame load_ohlcv(const std::string& path, char delimiter) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_ohlcv(buf.str(), path, delimiter);
}

void write_ohlcv(const MarketFrame& frame, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write '" + path + "'");
    out << "Date,Open,High,Low,Close,Adj Close,Volume\n";
    out.precision(10);
    for (const Bar& b : frame.rows) {
        out << format_date(b.date) << ',' << b.open << ',' << b.high << ',' << b.low << ','
            << b.close << ',' << b.adj_close << ',' << b.volume << '\n';
    }
    if (!out) throw io_error("short write to '" + path + "'");
}

std::vector<double> compute_target(const MarketFrame& frame) {
    if (frame.rows.size() < 2) {
        throw insufficient_data_error("need >= 2 rows to compute next-day returns, got " +
                                      std::to_string(frame.rows.size()));
    }
    std::vector<double> y(frame.rows.size() - 1);
    for (std::size_t t = 0; t + 1 < frame.rows.size(); ++t) {
        y[t] = (frame.rows[t + 1].close - frame.rows[t].close) / frame.rows[t].close;
    }
    return y;
}

}  // namespace kasper
