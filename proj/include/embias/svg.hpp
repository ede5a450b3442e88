#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "embias/errors.hpp"

namespace embias {

struct ScatterPoint {
    double x = 0.0;
    double y = 0.0;
};

struct ScatterOptions {
    int width = 640;
    int height = 640;
    int margin = 70;
    std::string title;
    std::string x_label;
    std::string y_label;
    bool draw_diagonal = true;
};

namespace detail {

inline std::string xml_escape(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out.push_back(c);
        }
    }
    return out;
}

inline std::string svg_num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

inline std::string tick_label(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3g", v);
    return buf;
}

}  // namespace detail

/// Writes a self-contained scatter plot: axes with tick labels, the points,
/// and (optionally) the y = x reference line. Output is deterministic for
/// identical inputs.
inline void write_scatter_svg(const std::vector<ScatterPoint>& points,
                              const std::filesystem::path& path,
                              const ScatterOptions& opts = {}) {
    double xmin = 0.0;
    double xmax = 1.0;
    double ymin = 0.0;
    double ymax = 1.0;
    if (!points.empty()) {
        xmin = xmax = points.front().x;
        ymin = ymax = points.front().y;
        for (const ScatterPoint& p : points) {
            xmin = std::min(xmin, p.x);
            xmax = std::max(xmax, p.x);
            ymin = std::min(ymin, p.y);
            ymax = std::max(ymax, p.y);
        }
    }
    auto pad = [](double& lo, double& hi) {
        if (hi - lo < 1e-12) {
            lo -= 0.5;
            hi += 0.5;
        } else {
            const double extra = 0.05 * (hi - lo);
            lo -= extra;
            hi += extra;
        }
    };
    pad(xmin, xmax);
    pad(ymin, ymax);

    const double plot_w = opts.width - 2.0 * opts.margin;
    const double plot_h = opts.height - 2.0 * opts.margin;
    auto px = [&](double x) { return opts.margin + (x - xmin) / (xmax - xmin) * plot_w; };
    auto py = [&](double y) { return opts.height - opts.margin - (y - ymin) / (ymax - ymin) * plot_h; };

    std::string svg;
    svg += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(opts.width) +
           "\" height=\"" + std::to_string(opts.height) + "\" viewBox=\"0 0 " +
           std::to_string(opts.width) + " " + std::to_string(opts.height) + "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    if (!opts.title.empty())
        svg += "<text x=\"" + detail::svg_num(opts.width / 2.0) +
               "\" y=\"30\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">" +
               detail::xml_escape(opts.title) + "</text>\n";

    // Axes.
    const std::string axis_style = "stroke=\"black\" stroke-width=\"1\"";
    svg += "<line x1=\"" + detail::svg_num(px(xmin)) + "\" y1=\"" + detail::svg_num(py(ymin)) +
           "\" x2=\"" + detail::svg_num(px(xmax)) + "\" y2=\"" + detail::svg_num(py(ymin)) +
           "\" " + axis_style + "/>\n";
    svg += "<line x1=\"" + detail::svg_num(px(xmin)) + "\" y1=\"" + detail::svg_num(py(ymin)) +
           "\" x2=\"" + detail::svg_num(px(xmin)) + "\" y2=\"" + detail::svg_num(py(ymax)) +
           "\" " + axis_style + "/>\n";

    constexpr int kTicks = 5;
    for (int i = 0; i <= kTicks; ++i) {
        const double fx = xmin + (xmax - xmin) * i / kTicks;
        const double fy = ymin + (ymax - ymin) * i / kTicks;
        svg += "<line x1=\"" + detail::svg_num(px(fx)) + "\" y1=\"" + detail::svg_num(py(ymin)) +
               "\" x2=\"" + detail::svg_num(px(fx)) + "\" y2=\"" +
               detail::svg_num(py(ymin) + 5) + "\" " + axis_style + "/>\n";
        svg += "<text x=\"" + detail::svg_num(px(fx)) + "\" y=\"" +
               detail::svg_num(py(ymin) + 20) +
               "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" +
               detail::tick_label(fx) + "</text>\n";
        svg += "<line x1=\"" + detail::svg_num(px(xmin)) + "\" y1=\"" + detail::svg_num(py(fy)) +
               "\" x2=\"" + detail::svg_num(px(xmin) - 5) + "\" y2=\"" + detail::svg_num(py(fy)) +
               "\" " + axis_style + "/>\n";
        svg += "<text x=\"" + detail::svg_num(px(xmin) - 8) + "\" y=\"" +
               detail::svg_num(py(fy) + 4) +
               "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" +
               detail::tick_label(fy) + "</text>\n";
    }
    if (!opts.x_label.empty())
        svg += "<text x=\"" + detail::svg_num(opts.margin + plot_w / 2.0) + "\" y=\"" +
               detail::svg_num(opts.height - 15.0) +
               "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" +
               detail::xml_escape(opts.x_label) + "</text>\n";
    if (!opts.y_label.empty())
        svg += "<text x=\"18\" y=\"" + detail::svg_num(opts.margin + plot_h / 2.0) +
               "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
               "transform=\"rotate(-90 18 " +
               detail::svg_num(opts.margin + plot_h / 2.0) + ")\">" +
               detail::xml_escape(opts.y_label) + "</text>\n";

    if (opts.draw_diagonal) {
        const double lo = std::max(xmin, ymin);
        const double hi = std::min(xmax, ymax);
        if (hi > lo)
            svg += "<line x1=\"" + detail::svg_num(px(lo)) + "\" y1=\"" + detail::svg_num(py(lo)) +
                   "\" x2=\"" + detail::svg_num(px(hi)) + "\" y2=\"" + detail::svg_num(py(hi)) +
                   "\" stroke=\"gray\" stroke-width=\"1\" stroke-dasharray=\"4 3\"/>\n";
    }
    for (const ScatterPoint& p : points)
        svg += "<circle cx=\"" + detail::svg_num(px(p.x)) + "\" cy=\"" + detail::svg_num(py(p.y)) +
               "\" r=\"3\" fill=\"steelblue\" fill-opacity=\"0.7\"/>\n";
    svg += "</svg>\n";

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os.write(svg.data(), static_cast<std::streamsize>(svg.size()));
    os.flush();
    if (!os) throw IoError("write failure on: " + path.string());
}

}  // namespace embias
