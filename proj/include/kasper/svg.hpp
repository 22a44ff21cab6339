#pragma once

#include <string>
#include <vector>

namespace kasper {

// Minimal standalone SVG line chart: mean line with a +/- one-std band,
// axis ticks, and a title. x is the window index.
struct ChartSeries {
    std::vector<double> mean;
    std::vector<double> sd;
};

std::string render_line_chart(const ChartSeries& series, const std::string& title,
                              const std::string& y_label, const std::string& comment = "");

void write_line_chart(const ChartSeries& series, const std::string& title,
                      const std::string& y_label, const std::string& path,
                      const std::string& comment = "");

}  // namespace kasper
