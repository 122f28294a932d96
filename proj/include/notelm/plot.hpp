#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "notelm/common.hpp"

namespace notelm {

struct PlotSeries {
    std::string label;
    std::vector<std::pair<double, double>> points;
};

// Minimal static SVG line chart; enough for learning-curve figures.
inline void write_svg_chart(const std::string& path, const std::string& title,
                            const std::string& x_label, const std::string& y_label,
                            const std::vector<PlotSeries>& series, bool log_x = false) {
    const double width = 760, height = 480;
    const double ml = 64, mr = 170, mt = 40, mb = 48;
    const double pw = width - ml - mr, ph = height - mt - mb;

    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& s : series) {
        for (auto [x, y] : s.points) {
            double xv = log_x ? std::log10(std::max(x, 1e-12)) : x;
            xmin = std::min(xmin, xv);
            xmax = std::max(xmax, xv);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    }
    if (xmin > xmax) {
        xmin = 0;
        xmax = 1;
    }
    if (ymin > ymax) {
        ymin = 0;
        ymax = 1;
    }
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    double ypad = 0.05 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;

    auto px = [&](double x) {
        double xv = log_x ? std::log10(std::max(x, 1e-12)) : x;
        return ml + (xv - xmin) / (xmax - xmin) * pw;
    };
    auto py = [&](double y) { return mt + (1.0 - (y - ymin) / (ymax - ymin)) * ph; };

    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + format_double(width) +
           "\" height=\"" + format_double(height) + "\" font-family=\"sans-serif\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg += "<text x=\"" + format_double(ml) + "\" y=\"24\" font-size=\"15\">" + title +
           "</text>\n";

    // frame
    svg += "<rect x=\"" + format_double(ml) + "\" y=\"" + format_double(mt) + "\" width=\"" +
           format_double(pw) + "\" height=\"" + format_double(ph) +
           "\" fill=\"none\" stroke=\"#444\"/>\n";

    auto tick_text = [&](double v) {
        double r = std::round(v * 1000.0) / 1000.0;
        return format_double(r);
    };

    const int n_ticks = 5;
    for (int i = 0; i <= n_ticks; ++i) {
        double fx = xmin + (xmax - xmin) * i / n_ticks;
        double xval = log_x ? std::pow(10.0, fx) : fx;
        double x = ml + pw * i / n_ticks;
        svg += "<line x1=\"" + format_double(x) + "\" y1=\"" + format_double(mt) + "\" x2=\"" +
               format_double(x) + "\" y2=\"" + format_double(mt + ph) +
               "\" stroke=\"#ddd\"/>\n";
        svg += "<text x=\"" + format_double(x) + "\" y=\"" + format_double(mt + ph + 18) +
               "\" font-size=\"11\" text-anchor=\"middle\">" + tick_text(xval) + "</text>\n";

        double yv = ymin + (ymax - ymin) * i / n_ticks;
        double y = py(yv);
        svg += "<line x1=\"" + format_double(ml) + "\" y1=\"" + format_double(y) + "\" x2=\"" +
               format_double(ml + pw) + "\" y2=\"" + format_double(y) +
               "\" stroke=\"#ddd\"/>\n";
        svg += "<text x=\"" + format_double(ml - 6) + "\" y=\"" + format_double(y + 4) +
               "\" font-size=\"11\" text-anchor=\"end\">" + tick_text(yv) + "</text>\n";
    }
    svg += "<text x=\"" + format_double(ml + pw / 2) + "\" y=\"" + format_double(height - 8) +
           "\" font-size=\"12\" text-anchor=\"middle\">" + x_label + "</text>\n";
    svg += "<text x=\"16\" y=\"" + format_double(mt + ph / 2) +
           "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16," +
           format_double(mt + ph / 2) + ")\">" + y_label + "</text>\n";

    for (size_t s = 0; s < series.size(); ++s) {
        const char* color = palette[s % 10];
        std::string pts;
        for (auto [x, y] : series[s].points) {
            pts += format_double(px(x)) + "," + format_double(py(y)) + " ";
        }
        svg += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + color +
               "\" stroke-width=\"1.5\"/>\n";
        double ly = mt + 14 + 16 * static_cast<double>(s);
        svg += "<line x1=\"" + format_double(ml + pw + 10) + "\" y1=\"" + format_double(ly - 4) +
               "\" x2=\"" + format_double(ml + pw + 30) + "\" y2=\"" + format_double(ly - 4) +
               "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
        svg += "<text x=\"" + format_double(ml + pw + 34) + "\" y=\"" + format_double(ly) +
               "\" font-size=\"11\">" + series[s].label + "</text>\n";
    }
    svg += "</svg>\n";

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("write_svg_chart: cannot open " + path);
    out << svg;
}

}  // namespace notelm
