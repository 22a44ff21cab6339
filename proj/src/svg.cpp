#include "kasper/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "kasper/errors.hpp"

namespace kasper {

namespace {

constexpr int kWidth = 760;
constexpr int kHeight = 420;
constexpr int kMarginLeft = 70;
constexpr int kMarginRight = 20;
constexpr int kMarginTop = 44;
constexpr int kMarginBottom = 48;

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

}  // namespace

std::string render_line_chart(const ChartSeries& series, const std::string& title,
                              const std::string& y_label, const std::string& comment) {
    if (series.mean.empty()) throw parameter_error("chart needs at least one point");
    const std::size_t n = series.mean.size();
    const bool has_band = series.sd.size() == n;

    double lo = series.mean[0], hi = series.mean[0];
    for (std::size_t i = 0; i < n; ++i) {
        const double s = has_band ? series.sd[i] : 0.0;
        lo = std::min(lo, series.mean[i] - s);
        hi = std::max(hi, series.mean[i] + s);
    }
    if (hi - lo < 1e-12) {
        hi += 1.0;
        lo -= 1.0;
    }
    const double pad = 0.06 * (hi - lo);
    lo -= pad;
    hi += pad;

    const double plot_w = kWidth - kMarginLeft - kMarginRight;
    const double plot_h = kHeight - kMarginTop - kMarginBottom;
    auto sx = [&](std::size_t i) {
        return kMarginLeft + (n == 1 ? plot_w / 2.0
                                     : plot_w * static_cast<double>(i) / static_cast<double>(n - 1));
    };
    auto sy = [&](double v) { return kMarginTop + plot_h * (1.0 - (v - lo) / (hi - lo)); };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
        << kHeight << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n";
    if (!comment.empty()) svg << "<!-- " << comment << " -->\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" "
        << "font-family=\"sans-serif\" font-size=\"16\">" << title << "</text>\n";

    // horizontal grid + y ticks
    for (int t = 0; t <= 4; ++t) {
        const double v = lo + (hi - lo) * t / 4.0;
        const double y = sy(v);
        svg << "<line x1=\"" << kMarginLeft << "\" y1=\"" << y << "\" x2=\""
            << kWidth - kMarginRight << "\" y2=\"" << y
            << "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
        svg << "<text x=\"" << kMarginLeft - 8 << "\" y=\"" << y + 4
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << fmt(v)
            << "</text>\n";
    }
    // x ticks: every window index (thinned when crowded)
    const std::size_t step = std::max<std::size_t>(1, n / 12);
    for (std::size_t i = 0; i < n; i += step) {
        svg << "<text x=\"" << sx(i) << "\" y=\"" << kHeight - kMarginBottom + 18
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << i
            << "</text>\n";
    }
    svg << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 10
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">window</text>\n";
    svg << "<text x=\"16\" y=\"" << kMarginTop + plot_h / 2
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
        << "transform=\"rotate(-90 16 " << kMarginTop + plot_h / 2 << ")\">" << y_label
        << "</text>\n";

    if (has_band && n > 1) {
        std::ostringstream pts;
        for (std::size_t i = 0; i < n; ++i) {
            pts << sx(i) << ',' << sy(series.mean[i] + series.sd[i]) << ' ';
        }
        for (std::size_t i = n; i-- > 0;) {
            pts << sx(i) << ',' << sy(series.mean[i] - series.sd[i]) << ' ';
        }
        svg << "<polygon points=\"" << pts.str()
            << "\" fill=\"#4477aa\" fill-opacity=\"0.18\" stroke=\"none\"/>\n";
    }
    std::ostringstream line;
    for (std::size_t i = 0; i < n; ++i) line << sx(i) << ',' << sy(series.mean[i]) << ' ';
    if (n == 1) {
        svg << "<circle cx=\"" << sx(0) << "\" cy=\"" << sy(series.mean[0])
            << "\" r=\"4\" fill=\"#4477aa\"/>\n";
    } else {
        svg << "<polyline points=\"" << line.str()
            << "\" fill=\"none\" stroke=\"#4477aa\" stroke-width=\"2\"/>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

void write_line_chart(const ChartSeries& series, const std::string& title,
                      const std::string& y_label, const std::string& path,
                      const std::string& comment) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write '" + path + "'");
    out << render_line_chart(series, title, y_label, comment);
    if (!out) throw io_error("short write to '" + path + "'");
}

}  // namespace kasper
