#pragma once

// Tiny SVG renderer for the report command: scatter and line series over an
// auto-scaled axis box. Plots are written as standalone .svg files next to
// the CSV data they visualize.

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace rehab {

class SvgPlot {
public:
    SvgPlot(std::string title, std::string xlabel, std::string ylabel)
        : title_(std::move(title)), xlabel_(std::move(xlabel)), ylabel_(std::move(ylabel)) {}

    void add_scatter(const std::vector<double>& xs, const std::vector<double>& ys,
                     const std::string& color, const std::string& label, bool square = false) {
        series_.push_back({xs, ys, color, label, false, square});
    }

    void add_line(const std::vector<double>& xs, const std::vector<double>& ys,
                  const std::string& color, const std::string& label) {
        series_.push_back({xs, ys, color, label, true, false});
    }

    std::string render() const {
        const double w = 720, h = 440, ml = 70, mr = 160, mt = 40, mb = 50;
        double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
        double ymin = xmin, ymax = -xmin;
        for (const auto& s : series_)
            for (std::size_t i = 0; i < s.xs.size(); ++i) {
                xmin = std::min(xmin, s.xs[i]);
                xmax = std::max(xmax, s.xs[i]);
                ymin = std::min(ymin, s.ys[i]);
                ymax = std::max(ymax, s.ys[i]);
            }
        if (!(xmax > xmin)) { xmax = xmin + 1.0; xmin -= 1.0; }
        if (!(ymax > ymin)) { ymax = ymin + 1.0; ymin -= 1.0; }
        const double ypad = 0.05 * (ymax - ymin);
        ymin -= ypad;
        ymax += ypad;
        auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (w - ml - mr); };
        auto py = [&](double y) { return h - mb - (y - ymin) / (ymax - ymin) * (h - mt - mb); };

        std::ostringstream out;
        out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h << "'>\n";
        out << "<rect width='100%' height='100%' fill='white'/>\n";
        out << "<text x='" << w / 2 << "' y='22' text-anchor='middle' font-size='15'>" << title_
            << "</text>\n";
        // axes
        out << "<line x1='" << ml << "' y1='" << h - mb << "' x2='" << w - mr << "' y2='" << h - mb
            << "' stroke='black'/>\n";
        out << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << h - mb
            << "' stroke='black'/>\n";
        for (int i = 0; i <= 5; ++i) {
            const double xv = xmin + (xmax - xmin) * i / 5.0;
            const double yv = ymin + (ymax - ymin) * i / 5.0;
            out << "<text x='" << px(xv) << "' y='" << h - mb + 18
                << "' text-anchor='middle' font-size='11'>" << short_num(xv) << "</text>\n";
            out << "<text x='" << ml - 8 << "' y='" << py(yv) + 4
                << "' text-anchor='end' font-size='11'>" << short_num(yv) << "</text>\n";
            out << "<line x1='" << ml << "' y1='" << py(yv) << "' x2='" << w - mr << "' y2='" << py(yv)
                << "' stroke='#eeeeee'/>\n";
        }
        out << "<text x='" << (ml + w - mr) / 2 << "' y='" << h - 12
            << "' text-anchor='middle' font-size='12'>" << xlabel_ << "</text>\n";
        out << "<text x='16' y='" << (mt + h - mb) / 2 << "' font-size='12' transform='rotate(-90 16 "
            << (mt + h - mb) / 2 << ")' text-anchor='middle'>" << ylabel_ << "</text>\n";

        double legend_y = mt + 10;
        for (const auto& s : series_) {
            if (s.line) {
                out << "<polyline fill='none' stroke='" << s.color << "' stroke-width='1.5' points='";
                for (std::size_t i = 0; i < s.xs.size(); ++i)
                    out << px(s.xs[i]) << ',' << py(s.ys[i]) << ' ';
                out << "'/>\n";
            } else {
                for (std::size_t i = 0; i < s.xs.size(); ++i) {
                    if (s.square)
                        out << "<rect x='" << px(s.xs[i]) - 3 << "' y='" << py(s.ys[i]) - 3
                            << "' width='6' height='6' fill='" << s.color << "'/>\n";
                    else
                        out << "<circle cx='" << px(s.xs[i]) << "' cy='" << py(s.ys[i])
                            << "' r='3.2' fill='" << s.color << "'/>\n";
                }
            }
            out << "<rect x='" << w - mr + 14 << "' y='" << legend_y - 8 << "' width='10' height='10' fill='"
                << s.color << "'/>\n";
            out << "<text x='" << w - mr + 30 << "' y='" << legend_y + 1 << "' font-size='12'>" << s.label
                << "</text>\n";
            legend_y += 18;
        }
        out << "</svg>\n";
        return out.str();
    }

private:
    struct Series {
        std::vector<double> xs, ys;
        std::string color, label;
        bool line = false;
        bool square = false;
    };

    static std::string short_num(double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.3g", v);
        return buf;
    }

    std::string title_, xlabel_, ylabel_;
    std::vector<Series> series_;
};

}  // namespace rehab
