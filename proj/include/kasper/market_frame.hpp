#pragma once

#include <string>
#include <vector>

#include "kasper/dates.hpp"

namespace kasper {

struct Bar {
    Date date;
    double open = 0.0;
    double high = 0.0;
    double low = 0.0;
    double close = 0.0;
    double adj_close = 0.0;
    double volume = 0.0;
};

struct IngestStats {
    std::size_t rows_read = 0;
    std::size_t rows_dropped_leading = 0;   // unfillable cells with no prior value
    std::size_t cells_filled = 0;           // forward-filled numeric cells
    std::size_t duplicate_dates_dropped = 0;
};

// Ordered daily OHLCV series. After ingestion dates are strictly increasing,
// prices are positive and no missing values remain.
struct MarketFrame {
    std::vector<Bar> rows;
    std::string source_id;
    IngestStats stats;

    std::size_t size() const { return rows.size(); }
};

// Load a delimited OHLCV file. The header must name date, open, high, low,
// close (`Close` or `Close*`), adjusted close (`Adj Close`/`Adj Close**`) and
// volume, in any order and case. Missing numeric cells are forward-filled
// from the most recent prior value in the same column; leading rows with
// unfillable cells are dropped and counted. Rows are sorted by date; later
// duplicates of a date are dropped.
MarketFrame load_ohlcv(const std::string& path, char delimiter = ',');

// Same, over an already-read text buffer (used by tests and the generators).
MarketFrame parse_ohlcv(const std::string& text, const std::string& source_id,
                        char delimiter = ',');

// Write a frame in the same delimited format (ISO dates, comma delimiter).
void write_ohlcv(const MarketFrame& frame, const std::string& path);

// Next-day fractional return series: y_t = (close_{t+1} - close_t) / close_t,
// defined for t = 0..n-2. Throws insufficient_data_error for < 2 rows.
std::vector<double> compute_target(const MarketFrame& frame);

}  // namespace kasper
