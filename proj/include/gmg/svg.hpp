#pragma once

// Static SVG scatter/line plots for recipe outputs. No interactivity; the
// CSVs next to each plot carry the actual numbers.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace gmg {

struct SvgSeries {
    std::string name;
    std::string color = "#1f77b4";
    std::vector<std::pair<double, double>> points;
    bool draw_line = true;
    bool draw_markers = true;
};

class SvgPlot {
  public:
    SvgPlot(std::string title, std::string x_label, std::string y_label)
        : title_(std::move(title)), x_label_(std::move(x_label)), y_label_(std::move(y_label)) {}

    void add_series(SvgSeries series) { series_.push_back(std::move(series)); }

    void write(const std::string& path) const {
        double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
        for (const auto& s : series_)
            for (auto [x, y] : s.points) {
                xmin = std::min(xmin, x);
                xmax = std::max(xmax, x);
                ymin = std::min(ymin, y);
                ymax = std::max(ymax, y);
            }
        if (xmin > xmax) {
            xmin = 0;
            xmax = 1;
            ymin = 0;
            ymax = 1;
        }
        if (xmax == xmin) xmax = xmin + 1;
        if (ymax == ymin) ymax = ymin + 1;
        const double pad_x = 0.05 * (xmax - xmin), pad_y = 0.08 * (ymax - ymin);
        xmin -= pad_x;
        xmax += pad_x;
        ymin -= pad_y;
        ymax += pad_y;

        const int W = 640, H = 420, ml = 70, mr = 20, mt = 40, mb = 50;
        auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (W - ml - mr); };
        auto py = [&](double y) { return H - mb - (y - ymin) / (ymax - ymin) * (H - mt - mb); };

        std::ostringstream svg;
        svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
            << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
        svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
        svg << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">"
            << title_ << "</text>\n";

        // Axes with a handful of ticks.
        svg << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\""
            << H - mb << "\" stroke=\"black\"/>\n";
        svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << H - mb
            << "\" stroke=\"black\"/>\n";
        for (int t = 0; t <= 4; ++t) {
            double x = xmin + (xmax - xmin) * t / 4.0;
            double y = ymin + (ymax - ymin) * t / 4.0;
            svg << "<text x=\"" << px(x) << "\" y=\"" << H - mb + 18
                << "\" text-anchor=\"middle\" font-size=\"11\">" << format(x) << "</text>\n";
            svg << "<text x=\"" << ml - 8 << "\" y=\"" << py(y) + 4
                << "\" text-anchor=\"end\" font-size=\"11\">" << format(y) << "</text>\n";
        }
        svg << "<text x=\"" << (ml + W - mr) / 2 << "\" y=\"" << H - 12
            << "\" text-anchor=\"middle\" font-size=\"12\">" << x_label_ << "</text>\n";
        svg << "<text x=\"16\" y=\"" << (mt + H - mb) / 2
            << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 "
            << (mt + H - mb) / 2 << ")\">" << y_label_ << "</text>\n";

        int legend_y = mt + 4;
        for (const auto& s : series_) {
            if (s.draw_line && s.points.size() > 1) {
                svg << "<polyline fill=\"none\" stroke=\"" << s.color
                    << "\" stroke-width=\"1.5\" points=\"";
                for (auto [x, y] : s.points) svg << px(x) << "," << py(y) << " ";
                svg << "\"/>\n";
            }
            if (s.draw_markers)
                for (auto [x, y] : s.points)
                    svg << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y)
                        << "\" r=\"3\" fill=\"" << s.color << "\"/>\n";
            svg << "<rect x=\"" << W - mr - 150 << "\" y=\"" << legend_y
                << "\" width=\"10\" height=\"10\" fill=\"" << s.color << "\"/>\n";
            svg << "<text x=\"" << W - mr - 135 << "\" y=\"" << legend_y + 9
                << "\" font-size=\"11\">" << s.name << "</text>\n";
            legend_y += 16;
        }
        svg << "</svg>\n";

        std::ofstream out(path);
        if (!out) throw std::runtime_error("svg: cannot write " + path);
        out << svg.str();
    }

  private:
    static std::string format(double v) {
        std::ostringstream os;
        if (std::abs(v) >= 1e4 || (std::abs(v) < 1e-2 && v != 0))
            os.precision(2), os << std::scientific << v;
        else
            os.precision(4), os << v;
        return os.str();
    }

    std::string title_, x_label_, y_label_;
    std::vector<SvgSeries> series_;
};

}  // namespace gmg
