#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lnn/io.hpp"

namespace lnn {

enum class PlotKind { mse_vs_horizon, se_vs_time };

inline PlotKind parse_plot_kind(std::string_view s) {
  if (s == "mse_vs_horizon") return PlotKind::mse_vs_horizon;
  if (s == "se_vs_time") return PlotKind::se_vs_time;
  throw std::invalid_argument("unknown plot kind '" + std::string(s) + "'");
}

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

namespace detail {

inline std::string svg_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string fixed(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string tick_label(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

/// Groups rows by scheme in first-appearance order.
inline std::vector<Series> series_from(const CsvTable& t, std::string_view xcol, std::string_view ycol) {
  const std::size_t s = t.column("scheme"), x = t.column(xcol), y = t.column(ycol);
  std::vector<Series> out;
  for (const auto& row : t.rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const Series& v) { return v.name == row[s]; });
    if (it == out.end()) {
      out.push_back({row[s], {}});
      it = out.end() - 1;
    }
    it->points.emplace_back(parse_number(row[x]), parse_number(row[y]));
  }
  for (auto& v : out) std::stable_sort(v.points.begin(), v.points.end());
  return out;
}

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};
  return colors[i % 7];
}

}  // namespace detail

/// Standalone SVG line chart. `log_y` plots log10 of strictly positive values
/// (zeros are clamped to the smallest positive value present).
inline std::string render_svg(const std::vector<Series>& series, const std::string& title, const std::string& xlabel,
                              const std::string& ylabel, bool log_y, const std::vector<double>& markers = {}) {
  const double width = 720, height = 440, left = 80, right = 150, top = 40, bottom = 60;
  const double pw = width - left - right, ph = height - top - bottom;
  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY, ypos = INFINITY;
  for (const auto& s : series) {
    for (auto [x, y] : s.points) {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      if (y > 0) ypos = std::min(ypos, y);
    }
  }
  auto ty = [&](double y) { return log_y ? std::log10(std::max(y, ypos)) : y; };
  for (const auto& s : series) {
    for (auto [x, y] : s.points) {
      ymin = std::min(ymin, ty(y));
      ymax = std::max(ymax, ty(y));
    }
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return top + (1 - (ty(y) - ymin) / (ymax - ymin)) * ph; };
  using detail::fixed;

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fixed(width, 0) + "\" height=\"" +
                    fixed(height, 0) + "\" viewBox=\"0 0 " + fixed(width, 0) + " " + fixed(height, 0) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + fixed(left + pw / 2) + "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" +
         detail::svg_escape(title) + "</text>\n";
  svg += "<rect x=\"" + fixed(left) + "\" y=\"" + fixed(top) + "\" width=\"" + fixed(pw) + "\" height=\"" + fixed(ph) +
         "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = xmin + (xmax - xmin) * i / 4, fy = ymin + (ymax - ymin) * i / 4;
    const double gx = left + pw * i / 4, gy = top + ph * (1 - i / 4.0);
    svg += "<text class=\"tick\" x=\"" + fixed(gx) + "\" y=\"" + fixed(top + ph + 18) +
           "\" text-anchor=\"middle\" font-size=\"11\">" + detail::tick_label(fx) + "</text>\n";
    svg += "<text class=\"tick\" x=\"" + fixed(left - 6) + "\" y=\"" + fixed(gy + 4) +
           "\" text-anchor=\"end\" font-size=\"11\">" + detail::tick_label(log_y ? std::pow(10.0, fy) : fy) +
           "</text>\n";
  }
  svg += "<text class=\"axis-label\" x=\"" + fixed(left + pw / 2) + "\" y=\"" + fixed(height - 16) +
         "\" text-anchor=\"middle\" font-size=\"13\">" + detail::svg_escape(xlabel) + "</text>\n";
  svg += "<text class=\"axis-label\" x=\"18\" y=\"" + fixed(top + ph / 2) + "\" text-anchor=\"middle\" font-size=\"13\"" +
         " transform=\"rotate(-90 18 " + fixed(top + ph / 2) + ")\">" +
         detail::svg_escape(ylabel + (log_y ? " (log scale)" : "")) + "</text>\n";
  for (double m : markers) {
    svg += "<line class=\"phase-marker\" data-step=\"" + format_number(m) + "\" x1=\"" + fixed(px(m)) + "\" y1=\"" +
           fixed(top) + "\" x2=\"" + fixed(px(m)) + "\" y2=\"" + fixed(top + ph) +
           "\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n";
  }
  for (std::size_t i = 0; i < series.size(); ++i) {
    svg += "<polyline data-scheme=\"" + detail::svg_escape(series[i].name) + "\" fill=\"none\" stroke=\"" +
           detail::palette(i) + "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t j = 0; j < series[i].points.size(); ++j) {
      const auto [x, y] = series[i].points[j];
      svg += (j ? " " : "") + fixed(px(x)) + "," + fixed(py(y));
    }
    svg += "\"/>\n";
    const double ly = top + 16 + 20.0 * double(i);
    svg += "<line x1=\"" + fixed(left + pw + 12) + "\" y1=\"" + fixed(ly) + "\" x2=\"" + fixed(left + pw + 36) +
           "\" y2=\"" + fixed(ly) + "\" stroke=\"" + detail::palette(i) + "\" stroke-width=\"2\"/>\n";
    svg += "<text class=\"legend\" x=\"" + fixed(left + pw + 42) + "\" y=\"" + fixed(ly + 4) + "\" font-size=\"12\">" +
           detail::svg_escape(series[i].name) + "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

/// CSV text to SVG text; throws on schema mismatch or an empty table.
inline std::string plot_csv(std::string_view csv, PlotKind kind) {
  const CsvTable t = parse_csv(csv);
  if (t.rows.empty()) throw FormatError("plot: CSV has no data rows");
  if (kind == PlotKind::mse_vs_horizon) {
    return render_svg(detail::series_from(t, "horizon", "mse"), "MSE versus prediction length",
                      "prediction horizon (samples)", "MSE", true);
  }
  const auto series = detail::series_from(t, "step", "se_bits_per_s_hz");
  const std::size_t step = t.column("step"), phase = t.column("phase");
  std::map<double, std::string> first_phase;  // step -> phase, first scheme only
  for (const auto& row : t.rows) first_phase.emplace(parse_number(row[step]), row[phase]);
  std::vector<double> markers;
  const std::string* prev = nullptr;
  for (const auto& [s, p] : first_phase) {
    if (prev && *prev != p) markers.push_back(s);
    prev = &p;
  }
  return render_svg(series, "Sum SE over time", "time step", "sum SE (bits/s/Hz)", false, markers);
}

/// Renders fully before touching the file system.
inline void plot_file(const std::filesystem::path& csv, PlotKind kind, const std::filesystem::path& svg) {
  const std::string text = plot_csv(read_file(csv), kind);
  write_file(svg, text);
}

}  // namespace lnn
