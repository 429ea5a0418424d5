#pragma once

#include <string>
#include <vector>

namespace regionprune::svg {

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

struct LineChart {
    std::string title;
    std::string x_label;
    std::string y_label;
    std::string right_label; // axis for `right_series`; unused when empty
    bool log_x = false;
    std::vector<Series> series;
    std::vector<Series> right_series;
};

// Standalone SVG document with axes, ticks, markers and a legend.
std::string render(const LineChart& chart);

} // namespace regionprune::svg
