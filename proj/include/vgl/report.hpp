#pragma once

// Run-log CSV (write and read back) and static SVG plots.

#include "vgl/learners.hpp"
#include "vgl/targets.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace vgl {

inline const std::vector<std::string>& log_columns() {
    static const std::vector<std::string> cols{"iteration",          "total_reward",      "value_residual_norm",
                                               "gradient_residual_norm", "max_dRda",      "saturated_fraction",
                                               "wall_time_ms"};
    return cols;
}

namespace detail {

inline std::string csv_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline double csv_parse(const std::string& s, std::size_t line) {
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    double v = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
        throw Error("log line " + std::to_string(line) + ": bad number '" + s + "'");
    }
    return v;
}

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string item;
    std::stringstream ss(line);
    while (std::getline(ss, item, ',')) out.push_back(item);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace detail

inline void write_log_header(std::ostream& os) {
    os << kCsvVersionLine << '\n';
    const auto& cols = log_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
    os << '\n';
}

inline void write_log_row(std::ostream& os, const LogRow& r) {
    using detail::csv_number;
    os << r.iteration << ',' << csv_number(r.total_reward) << ',' << csv_number(r.value_residual_norm) << ','
       << csv_number(r.gradient_residual_norm) << ',' << csv_number(r.max_dRda) << ','
       << csv_number(r.saturated_fraction) << ',' << csv_number(r.wall_time_ms) << '\n';
}

inline void write_log_csv(std::ostream& os, const std::vector<LogRow>& rows) {
    write_log_header(os);
    for (const LogRow& r : rows) write_log_row(os, r);
}

inline std::vector<LogRow> read_log_csv(std::istream& is) {
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(is, line)) throw Error("log is empty (missing version line)");
    ++lineno;
    if (line != kCsvVersionLine) throw Error("log: unsupported version line '" + line + "'");
    if (!std::getline(is, line)) throw Error("log: missing column header");
    ++lineno;
    const auto header = detail::split_csv(line);
    if (header != log_columns()) throw Error("log: unexpected column header");
    std::vector<LogRow> rows;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = detail::split_csv(line);
        if (f.size() != header.size()) throw Error("log line " + std::to_string(lineno) + ": wrong field count");
        LogRow r;
        r.iteration = int(detail::csv_parse(f[0], lineno));
        r.total_reward = detail::csv_parse(f[1], lineno);
        r.value_residual_norm = detail::csv_parse(f[2], lineno);
        r.gradient_residual_norm = detail::csv_parse(f[3], lineno);
        r.max_dRda = detail::csv_parse(f[4], lineno);
        r.saturated_fraction = detail::csv_parse(f[5], lineno);
        r.wall_time_ms = detail::csv_parse(f[6], lineno);
        rows.push_back(r);
    }
    return rows;
}

/// Parses a trajectory CSV back into its state rows (t, x components).
inline std::vector<std::vector<double>> read_trajectory_states(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != kCsvVersionLine) throw Error("trajectory csv: bad version line");
    if (!std::getline(is, line)) throw Error("trajectory csv: missing header");
    const auto header = detail::split_csv(line);
    std::size_t nx = 0;
    for (const auto& h : header)
        if (h.size() > 1 && h[0] == 'x') ++nx;
    std::vector<std::vector<double>> out;
    std::size_t lineno = 2;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = detail::split_csv(line);
        if (f.size() != header.size()) throw Error("trajectory csv line " + std::to_string(lineno) + ": wrong field count");
        std::vector<double> row;
        for (std::size_t i = 1; i <= nx; ++i) row.push_back(detail::csv_parse(f[i], lineno));
        out.push_back(std::move(row));
    }
    return out;
}

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

/// Line plot with linear axes; non-finite points are dropped. The raw data
/// of every series is kept in a data-values attribute.
inline std::string svg_line_plot(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                                 const std::vector<Series>& series, bool log_y = false, bool markers = false) {
    const double W = 640, H = 420, L = 70, R = 20, T = 40, B = 50;
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
    auto ty = [&](double v) { return log_y ? std::log10(v) : v; };
    auto usable = [&](double xv, double yv) {
        return std::isfinite(xv) && std::isfinite(yv) && (!log_y || yv > 0.0);
    };
    for (const Series& s : series) {
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            if (!usable(s.x[i], s.y[i])) continue;
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, ty(s.y[i]));
            ymax = std::max(ymax, ty(s.y[i]));
        }
    }
    const bool empty = !(xmin <= xmax);
    if (empty) {
        xmin = 0;
        xmax = 1;
        ymin = 0;
        ymax = 1;
    }
    if (xmax == xmin) {
        xmin -= 0.5;
        xmax += 0.5;
    }
    if (ymax == ymin) {
        ymin -= 0.5;
        ymax += 0.5;
    }
    auto px = [&](double v) { return L + (v - xmin) / (xmax - xmin) * (W - L - R); };
    auto py = [&](double v) { return H - B - (v - ymin) / (ymax - ymin) * (H - T - B); };

    std::ostringstream os;
    os.precision(17);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 "
       << W << ' ' << H << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">"
       << title << "</text>\n";
    os << "<g class=\"axes\" stroke=\"black\" fill=\"none\"><line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\""
       << W - R << "\" y2=\"" << H - B << "\"/><line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\""
       << H - B << "\"/></g>\n";
    os.precision(6);
    for (int k = 0; k <= 4; ++k) {
        const double xv = xmin + (xmax - xmin) * k / 4.0;
        const double yv = ymin + (ymax - ymin) * k / 4.0;
        os << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 16
           << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" << xv << "</text>\n";
        os << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 3
           << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">"
           << (log_y ? "1e" : "") << yv << "</text>\n";
    }
    os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << xlabel << "</text>\n";
    os << "<text transform=\"translate(16," << (T + H - B) / 2
       << ") rotate(-90)\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << ylabel
       << (log_y ? " (log10)" : "") << "</text>\n";

    static const char* colours[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
    for (std::size_t si = 0; si < series.size(); ++si) {
        const Series& s = series[si];
        const char* col = colours[si % 5];
        std::ostringstream pts, data;
        pts.precision(6);
        data.precision(17);
        std::size_t count = 0;
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            data << (i ? " " : "") << s.x[i] << ',' << s.y[i];
            if (!usable(s.x[i], s.y[i])) continue;
            pts << (count ? " " : "") << px(s.x[i]) << ',' << py(ty(s.y[i]));
            ++count;
        }
        os << "<polyline class=\"series\" data-label=\"" << s.label << "\" data-points=\"" << count
           << "\" data-values=\"" << data.str() << "\" fill=\"none\" stroke=\"" << col
           << "\" stroke-width=\"1.5\" points=\"" << pts.str() << "\"/>\n";
        if (markers) {
            for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
                if (!usable(s.x[i], s.y[i])) continue;
                os << "<circle class=\"point\" cx=\"" << px(s.x[i]) << "\" cy=\"" << py(ty(s.y[i]))
                   << "\" r=\"2.5\" fill=\"" << col << "\"/>\n";
            }
        }
        os << "<text x=\"" << W - R - 4 << "\" y=\"" << T + 14 * (si + 1)
           << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" fill=\"" << col << "\">"
           << s.label << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

inline std::string learning_curve_svg(const std::vector<LogRow>& rows) {
    Series s{"total_reward", {}, {}};
    for (const LogRow& r : rows) {
        s.x.push_back(r.iteration);
        s.y.push_back(r.total_reward);
    }
    return svg_line_plot("Learning curve", "iteration", "total reward", {s});
}

inline std::string residual_svg(const std::vector<LogRow>& rows) {
    Series v{"value_residual_norm", {}, {}}, g{"gradient_residual_norm", {}, {}};
    for (const LogRow& r : rows) {
        v.x.push_back(r.iteration);
        v.y.push_back(r.value_residual_norm);
        g.x.push_back(r.iteration);
        g.y.push_back(r.gradient_residual_norm);
    }
    return svg_line_plot("Residual norms", "iteration", "max residual", {v, g}, true);
}

/// Two-dimensional states plot their first two components; otherwise the
/// first component is drawn against the step index.
inline std::string trajectory_svg(const std::vector<std::vector<double>>& states) {
    Series s{"trajectory", {}, {}};
    const bool planar = !states.empty() && states.front().size() >= 3;
    for (std::size_t t = 0; t < states.size(); ++t) {
        if (planar) {
            s.x.push_back(states[t][0]);
            s.y.push_back(states[t][1]);
        } else {
            s.x.push_back(double(t));
            s.y.push_back(states[t].empty() ? 0.0 : states[t][0]);
        }
    }
    return planar ? svg_line_plot("Trajectory", "x", "y", {s}, false, true)
                  : svg_line_plot("Trajectory", "step", "x", {s}, false, true);
}

}  // namespace vgl
