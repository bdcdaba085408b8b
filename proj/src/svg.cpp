#include "ustd/svg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "ustd/common.hpp"

namespace ustd {

namespace {

constexpr double kWidth = 720, kHeight = 420;
constexpr double kLeft = 64, kRight = 24, kTop = 40, kBottom = 48;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

struct Scale {
    double x_min = 0, x_max = 1, y_min = 0, y_max = 1;

    void include(double x, double y) {
        x_min = std::min(x_min, x);
        x_max = std::max(x_max, x);
        y_min = std::min(y_min, y);
        y_max = std::max(y_max, y);
    }
    void finish() {
        if (x_max - x_min < 1e-12) x_max = x_min + 1;
        double pad = (y_max - y_min) * 0.05;
        if (pad < 1e-12) pad = std::max(1.0, std::fabs(y_max)) * 0.1;
        y_min -= pad;
        y_max += pad;
    }
    double px(double x) const {
        return kLeft + (x - x_min) / (x_max - x_min) * (kWidth - kLeft - kRight);
    }
    double py(double y) const {
        return kHeight - kBottom - (y - y_min) / (y_max - y_min) * (kHeight - kTop - kBottom);
    }
};

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '&') out += "&amp;";
        else if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else out += c;
    }
    return out;
}

void open_svg(std::ostream& os, const std::string& title) {
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
       << kHeight << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" "
       << "font-family=\"sans-serif\" font-size=\"15\">" << escape(title) << "</text>\n";
}

void axes(std::ostream& os, const Scale& sc, const std::string& x_label,
          const std::string& y_label) {
    os << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << kWidth - kLeft - kRight
       << "\" height=\"" << kHeight - kTop - kBottom
       << "\" fill=\"none\" stroke=\"#444\" stroke-width=\"1\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        double fy = sc.y_min + (sc.y_max - sc.y_min) * i / 4.0;
        double y = sc.py(fy);
        os << "<line x1=\"" << kLeft << "\" y1=\"" << y << "\" x2=\"" << kWidth - kRight
           << "\" y2=\"" << y << "\" stroke=\"#ddd\" stroke-width=\"0.5\"/>\n";
        os << "<text x=\"" << kLeft - 6 << "\" y=\"" << y + 4
           << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << fmt(fy)
           << "</text>\n";
        double fx = sc.x_min + (sc.x_max - sc.x_min) * i / 4.0;
        double x = sc.px(fx);
        os << "<text x=\"" << x << "\" y=\"" << kHeight - kBottom + 16
           << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << fmt(fx)
           << "</text>\n";
    }
    os << "<text x=\"" << (kLeft + kWidth - kRight) / 2 << "\" y=\"" << kHeight - 10
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
       << escape(x_label) << "</text>\n";
    os << "<text x=\"16\" y=\"" << (kTop + kHeight - kBottom) / 2
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
       << "transform=\"rotate(-90 16 " << (kTop + kHeight - kBottom) / 2 << ")\">"
       << escape(y_label) << "</text>\n";
}

void polyline(std::ostream& os, const Scale& sc, const std::vector<double>& xs,
              const std::vector<double>& ys, const std::string& color, double width,
              const std::string& dash = "") {
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"" << width << "\"";
    if (!dash.empty()) os << " stroke-dasharray=\"" << dash << "\"";
    os << " points=\"";
    for (std::size_t i = 0; i < xs.size(); ++i)
        os << fmt(sc.px(xs[i])) << "," << fmt(sc.py(ys[i])) << " ";
    os << "\"/>\n";
}

void write_file(const std::string& path, const std::string& body) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write chart file " + path);
    out << body;
}

}  // namespace

void write_fan_chart(const std::string& path, const std::vector<double>& history,
                     const std::vector<std::vector<double>>& samples,
                     const std::vector<double>& median, const std::vector<double>& truth,
                     const std::string& title) {
    const std::size_t horizon = median.size();
    if (horizon == 0) throw DataError("fan chart needs a non-empty horizon");
    if (truth.size() != horizon) throw DataError("fan chart truth length mismatch");
    for (const auto& s : samples)
        if (s.size() != horizon) throw DataError("fan chart sample length mismatch");

    const std::size_t h = history.size();
    std::vector<double> lo(horizon, std::numeric_limits<double>::infinity());
    std::vector<double> hi(horizon, -std::numeric_limits<double>::infinity());
    for (const auto& s : samples)
        for (std::size_t t = 0; t < horizon; ++t) {
            lo[t] = std::min(lo[t], s[t]);
            hi[t] = std::max(hi[t], s[t]);
        }
    if (samples.empty()) {
        lo = median;
        hi = median;
    }

    Scale sc;
    sc.x_min = 1;
    sc.x_max = static_cast<double>(h + horizon);
    sc.y_min = sc.y_max = median[0];
    for (std::size_t t = 0; t < h; ++t) sc.include(static_cast<double>(t + 1), history[t]);
    for (std::size_t t = 0; t < horizon; ++t) {
        double x = static_cast<double>(h + t + 1);
        sc.include(x, lo[t]);
        sc.include(x, hi[t]);
        sc.include(x, truth[t]);
        sc.include(x, median[t]);
    }
    sc.finish();

    std::ostringstream os;
    open_svg(os, title);
    axes(os, sc, "time step", "value");

    // Sample envelope: forward along the upper edge, back along the lower.
    os << "<polygon fill=\"#1f77b4\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
    for (std::size_t t = 0; t < horizon; ++t)
        os << fmt(sc.px(static_cast<double>(h + t + 1))) << "," << fmt(sc.py(hi[t])) << " ";
    for (std::size_t t = horizon; t-- > 0;)
        os << fmt(sc.px(static_cast<double>(h + t + 1))) << "," << fmt(sc.py(lo[t])) << " ";
    os << "\"/>\n";

    if (h > 0) {
        std::vector<double> xs(h);
        for (std::size_t t = 0; t < h; ++t) xs[t] = static_cast<double>(t + 1);
        polyline(os, sc, xs, history, "#666666", 1.2);
        double xb = sc.px(static_cast<double>(h) + 0.5);
        os << "<line x1=\"" << xb << "\" y1=\"" << kTop << "\" x2=\"" << xb << "\" y2=\""
           << kHeight - kBottom << "\" stroke=\"#999\" stroke-width=\"0.8\" "
           << "stroke-dasharray=\"2,3\"/>\n";
    }

    std::vector<double> xs(horizon);
    for (std::size_t t = 0; t < horizon; ++t) xs[t] = static_cast<double>(h + t + 1);
    polyline(os, sc, xs, truth, "#2ca02c", 1.6, "5,3");
    polyline(os, sc, xs, median, "#1f77b4", 1.8);

    os << "<text x=\"" << kWidth - kRight - 6 << "\" y=\"" << kTop + 16
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" "
       << "fill=\"#1f77b4\">median / envelope</text>\n";
    os << "<text x=\"" << kWidth - kRight - 6 << "\" y=\"" << kTop + 32
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" "
       << "fill=\"#2ca02c\">truth</text>\n";
    os << "</svg>\n";
    write_file(path, os.str());
}

void write_line_chart(const std::string& path, const std::vector<std::string>& names,
                      const std::vector<std::vector<double>>& series,
                      const std::string& title, const std::string& x_label,
                      const std::string& y_label) {
    if (names.size() != series.size()) throw DataError("line chart: one name per series");
    if (series.empty()) throw DataError("line chart needs at least one series");

    Scale sc;
    bool first = true;
    for (const auto& s : series) {
        if (s.empty()) throw DataError("line chart: empty series");
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (first) {
                sc.x_min = sc.x_max = 1;
                sc.y_min = sc.y_max = s[0];
                first = false;
            }
            sc.include(static_cast<double>(i + 1), s[i]);
        }
    }
    sc.finish();

    std::ostringstream os;
    open_svg(os, title);
    axes(os, sc, x_label, y_label);
    for (std::size_t k = 0; k < series.size(); ++k) {
        const char* color = kPalette[k % (sizeof(kPalette) / sizeof(kPalette[0]))];
        std::vector<double> xs(series[k].size());
        for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = static_cast<double>(i + 1);
        polyline(os, sc, xs, series[k], color, 1.6);
        os << "<text x=\"" << kWidth - kRight - 6 << "\" y=\"" << kTop + 16 + 16 * k
           << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" fill=\""
           << color << "\">" << escape(names[k]) << "</text>\n";
    }
    os << "</svg>\n";
    write_file(path, os.str());
}

}  // namespace ustd
