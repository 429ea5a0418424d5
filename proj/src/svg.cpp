#include "regionprune/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace regionprune::svg {

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 420.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 70.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 60.0;

const char* const kLeftColors[] = {"#1f77b4", "#2ca02c", "#9467bd", "#8c564b"};
const char* const kRightColors[] = {"#d62728", "#ff7f0e", "#e377c2", "#7f7f7f"};

std::string escape(const std::string& text)
{
    std::string out;
    for (char c : text) {
        switch (c) {
        case '&':
            out += "&amp;";
            break;
        case '<':
            out += "&lt;";
            break;
        case '>':
            out += "&gt;";
            break;
        case '"':
            out += "&quot;";
            break;
        default:
            out += c;
        }
    }
    return out;
}

std::string fmt(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

struct Range {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();

    void include(double v)
    {
        if (!std::isfinite(v))
            return;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    void settle()
    {
        if (!std::isfinite(lo)) {
            lo = 0.0;
            hi = 1.0;
        } else if (hi - lo < 1e-12) {
            const double pad = std::max(std::abs(lo) * 0.1, 0.5);
            lo -= pad;
            hi += pad;
        }
    }
};

double transform_x(double v, bool log_x)
{
    return log_x ? std::log10(v) : v;
}

void draw_series(std::ostringstream& out, const std::vector<Series>& series, const char* const* colors,
                 const Range& xr, const Range& yr, bool log_x, bool dashed)
{
    const double plot_w = kWidth - kLeft - kRight;
    const double plot_h = kHeight - kTop - kBottom;
    for (std::size_t s = 0; s < series.size(); ++s) {
        const char* color = colors[s % 4];
        std::ostringstream points;
        std::vector<std::pair<double, double>> marks;
        for (std::size_t i = 0; i < series[s].x.size() && i < series[s].y.size(); ++i) {
            const double xv = transform_x(series[s].x[i], log_x);
            const double yv = series[s].y[i];
            if (!std::isfinite(xv) || !std::isfinite(yv))
                continue;
            const double px = kLeft + (xv - xr.lo) / (xr.hi - xr.lo) * plot_w;
            const double py = kTop + plot_h - (yv - yr.lo) / (yr.hi - yr.lo) * plot_h;
            points << fmt(px) << ',' << fmt(py) << ' ';
            marks.emplace_back(px, py);
        }
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\""
            << (dashed ? " stroke-dasharray=\"6,4\"" : "") << " points=\"" << points.str() << "\"/>\n";
        for (const auto& [px, py] : marks)
            out << "<circle cx=\"" << fmt(px) << "\" cy=\"" << fmt(py) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
}

void draw_y_ticks(std::ostringstream& out, const Range& yr, double x, const char* anchor, double dx)
{
    const double plot_h = kHeight - kTop - kBottom;
    for (int t = 0; t <= 5; ++t) {
        const double v = yr.lo + (yr.hi - yr.lo) * t / 5.0;
        const double py = kTop + plot_h - plot_h * t / 5.0;
        out << "<text x=\"" << fmt(x + dx) << "\" y=\"" << fmt(py + 4) << "\" font-size=\"11\" text-anchor=\""
            << anchor << "\">" << fmt(v) << "</text>\n";
    }
}

} // namespace

std::string render(const LineChart& chart)
{
    Range xr;
    Range yl;
    Range yr;
    for (const auto& s : chart.series) {
        for (double v : s.x)
            xr.include(transform_x(v, chart.log_x));
        for (double v : s.y)
            yl.include(v);
    }
    for (const auto& s : chart.right_series) {
        for (double v : s.x)
            xr.include(transform_x(v, chart.log_x));
        for (double v : s.y)
            yr.include(v);
    }
    xr.settle();
    yl.settle();
    yr.settle();

    const double plot_w = kWidth - kLeft - kRight;
    const double plot_h = kHeight - kTop - kBottom;
    std::ostringstream out;
    out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
        << "\" font-family=\"sans-serif\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << "<text x=\"" << kWidth / 2 << "\" y=\"24\" font-size=\"15\" text-anchor=\"middle\">" << escape(chart.title)
        << "</text>\n"
        << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << plot_w << "\" height=\"" << plot_h
        << "\" fill=\"none\" stroke=\"#333\"/>\n";

    // x ticks at every distinct data x value
    std::vector<double> xs;
    for (const auto* group : {&chart.series, &chart.right_series})
        for (const auto& s : *group)
            xs.insert(xs.end(), s.x.begin(), s.x.end());
    std::sort(xs.begin(), xs.end());
    xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
    for (double v : xs) {
        const double t = transform_x(v, chart.log_x);
        if (!std::isfinite(t))
            continue;
        const double px = kLeft + (t - xr.lo) / (xr.hi - xr.lo) * plot_w;
        out << "<line x1=\"" << fmt(px) << "\" y1=\"" << kTop + plot_h << "\" x2=\"" << fmt(px) << "\" y2=\""
            << kTop + plot_h + 5 << "\" stroke=\"#333\"/>\n"
            << "<text x=\"" << fmt(px) << "\" y=\"" << kTop + plot_h + 18 << "\" font-size=\"11\" text-anchor=\"middle\">"
            << fmt(v) << "</text>\n";
    }
    out << "<text x=\"" << kLeft + plot_w / 2 << "\" y=\"" << kHeight - 18
        << "\" font-size=\"13\" text-anchor=\"middle\">" << escape(chart.x_label) << "</text>\n";

    draw_y_ticks(out, yl, kLeft, "end", -6);
    out << "<text transform=\"translate(18," << kTop + plot_h / 2 << ") rotate(-90)\" font-size=\"13\" "
        << "text-anchor=\"middle\">" << escape(chart.y_label) << "</text>\n";
    if (!chart.right_series.empty()) {
        draw_y_ticks(out, yr, kLeft + plot_w, "start", 6);
        out << "<text transform=\"translate(" << kWidth - 14 << ',' << kTop + plot_h / 2
            << ") rotate(90)\" font-size=\"13\" text-anchor=\"middle\">" << escape(chart.right_label) << "</text>\n";
    }

    draw_series(out, chart.series, kLeftColors, xr, yl, chart.log_x, false);
    draw_series(out, chart.right_series, kRightColors, xr, yr, chart.log_x, true);

    double legend_y = kTop + 14;
    auto legend = [&](const std::vector<Series>& group, const char* const* colors, bool dashed) {
        for (std::size_t s = 0; s < group.size(); ++s) {
            out << "<line x1=\"" << kLeft + 10 << "\" y1=\"" << legend_y - 4 << "\" x2=\"" << kLeft + 34 << "\" y2=\""
                << legend_y - 4 << "\" stroke=\"" << colors[s % 4] << "\" stroke-width=\"2\""
                << (dashed ? " stroke-dasharray=\"6,4\"" : "") << "/>\n"
                << "<text x=\"" << kLeft + 40 << "\" y=\"" << legend_y << "\" font-size=\"11\">"
                << escape(group[s].label) << "</text>\n";
            legend_y += 16;
        }
    };
    legend(chart.series, kLeftColors, false);
    legend(chart.right_series, kRightColors, true);
    out << "</svg>\n";
    return out.str();
}

} // namespace regionprune::svg
