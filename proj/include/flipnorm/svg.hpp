// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "flipnorm/error.hpp"

namespace flipnorm::svg {

/// Minimal static-chart writer: bar charts, grouped bars, overlaid
/// histograms, line charts and small multiples. Output is plain SVG text.

inline const std::vector<std::string> &palette() {
  static const std::vector<std::string> colors{"#4c72b0", "#dd8452", "#55a868", "#c44e52",
                                               "#8172b3", "#937860", "#da8bc3", "#8c8c8c"};
  return colors;
}

inline std::string fmt(double v, int digits = 3) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

inline std::string escape(const std::string &s) {
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

struct Frame {
  double width = 640;
  double height = 360;
  double left = 56;
  double right = 16;
  double top = 36;
  double bottom = 44;

  double plot_w() const { return width - left - right; }
  double plot_h() const { return height - top - bottom; }
};

class Canvas {
public:
  explicit Canvas(double width, double height) : width_(width), height_(height) {}

  void rect(double x, double y, double w, double h, const std::string &fill, const std::string &extra = "") {
    out_ << "<rect x=\"" << fmt(x, 6) << "\" y=\"" << fmt(y, 6) << "\" width=\"" << fmt(std::max(w, 0.0), 6)
         << "\" height=\"" << fmt(std::max(h, 0.0), 6) << "\" fill=\"" << fill << "\" " << extra << "/>\n";
  }
  void line(double x1, double y1, double x2, double y2, const std::string &stroke, double width = 1.0) {
    out_ << "<line x1=\"" << fmt(x1, 6) << "\" y1=\"" << fmt(y1, 6) << "\" x2=\"" << fmt(x2, 6) << "\" y2=\""
         << fmt(y2, 6) << "\" stroke=\"" << stroke << "\" stroke-width=\"" << width << "\"/>\n";
  }
  void text(double x, double y, const std::string &s, const std::string &anchor = "middle", int size = 11) {
    out_ << "<text x=\"" << fmt(x, 6) << "\" y=\"" << fmt(y, 6) << "\" font-size=\"" << size
         << "\" font-family=\"sans-serif\" text-anchor=\"" << anchor << "\">" << escape(s) << "</text>\n";
  }
  void polyline(const std::vector<std::pair<double, double>> &pts, const std::string &stroke) {
    out_ << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"2\" points=\"";
    for (const auto &[x, y] : pts) {
      out_ << fmt(x, 6) << "," << fmt(y, 6) << " ";
    }
    out_ << "\"/>\n";
    for (const auto &[x, y] : pts) {
      out_ << "<circle cx=\"" << fmt(x, 6) << "\" cy=\"" << fmt(y, 6) << "\" r=\"3\" fill=\"" << stroke << "\"/>\n";
    }
  }
  void raw(const std::string &s) { out_ << s; }

  std::string str() const {
    std::ostringstream doc;
    doc << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(width_, 6) << "\" height=\""
        << fmt(height_, 6) << "\" viewBox=\"0 0 " << fmt(width_, 6) << " " << fmt(height_, 6) << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << out_.str() << "</svg>\n";
    return doc.str();
  }

private:
  double width_;
  double height_;
  std::ostringstream out_;
};

namespace detail {

inline void axes(Canvas &c, const Frame &f, double x0, double y0, double y_max, const std::string &title,
                 const std::string &y_label, int ticks = 4) {
  c.text(x0 + f.width / 2, y0 + 20, title, "middle", 13);
  const double bottom = y0 + f.top + f.plot_h();
  c.line(x0 + f.left, y0 + f.top, x0 + f.left, bottom, "#333");
  c.line(x0 + f.left, bottom, x0 + f.left + f.plot_w(), bottom, "#333");
  for (int i = 0; i <= ticks; ++i) {
    const double v = y_max * i / ticks;
    const double y = bottom - f.plot_h() * i / ticks;
    c.line(x0 + f.left - 4, y, x0 + f.left, y, "#333");
    c.text(x0 + f.left - 6, y + 4, fmt(v), "end", 10);
  }
  if (!y_label.empty()) {
    c.raw("<text transform=\"translate(" + fmt(x0 + 14, 6) + "," + fmt(y0 + f.top + f.plot_h() / 2, 6) +
          ") rotate(-90)\" font-size=\"11\" font-family=\"sans-serif\" text-anchor=\"middle\">" +
          escape(y_label) + "</text>\n");
  }
}

inline double nice_max(double v) {
  if (v <= 0.0) {
    return 1.0;
  }
  const double p = std::pow(10.0, std::floor(std::log10(v)));
  for (double m : {1.0, 2.0, 2.5, 5.0, 10.0}) {
    if (m * p >= v) {
      return m * p;
    }
  }
  return 10.0 * p;
}

} // namespace detail

/// Grouped bar chart: values[s][c] is series s at category c. A single
/// series gives an ordinary bar chart.
inline std::string grouped_bars(const std::string &title, const std::vector<std::string> &categories,
                                const std::vector<std::string> &series,
                                const std::vector<std::vector<double>> &values, const std::string &y_label = "",
                                double y_max = -1.0) {
  require(!categories.empty() && series.size() == values.size() && !values.empty(), ErrorKind::invalid_input,
          "bar chart needs categories and one value row per series");
  for (const auto &row : values) {
    require(row.size() == categories.size(), ErrorKind::invalid_input, "bar chart row length mismatch");
  }
  Frame f;
  Canvas c(f.width, f.height);
  double top = y_max;
  if (top <= 0.0) {
    top = 0.0;
    for (const auto &row : values) {
      for (double v : row) {
        top = std::max(top, v);
      }
    }
    top = detail::nice_max(top);
  }
  detail::axes(c, f, 0, 0, top, title, y_label);
  const double slot = f.plot_w() / static_cast<double>(categories.size());
  const double bar = slot * 0.8 / static_cast<double>(series.size());
  const double bottom = f.top + f.plot_h();
  for (std::size_t k = 0; k < categories.size(); ++k) {
    const double x0 = f.left + slot * static_cast<double>(k) + slot * 0.1;
    for (std::size_t s = 0; s < series.size(); ++s) {
      const double h = f.plot_h() * std::clamp(values[s][k] / top, 0.0, 1.0);
      c.rect(x0 + bar * static_cast<double>(s), bottom - h, bar * 0.95, h, palette()[s % palette().size()],
             "class=\"bar\"");
    }
    c.text(f.left + slot * (static_cast<double>(k) + 0.5), bottom + 14, categories[k], "middle", 10);
  }
  if (series.size() > 1) {
    for (std::size_t s = 0; s < series.size(); ++s) {
      const double y = f.top + 4 + 14 * static_cast<double>(s);
      c.rect(f.width - 150, y, 10, 10, palette()[s % palette().size()]);
      c.text(f.width - 135, y + 9, series[s], "start", 10);
    }
  }
  return c.str();
}

inline std::string bars(const std::string &title, const std::vector<std::string> &categories,
                        const std::vector<double> &values, const std::string &y_label = "") {
  return grouped_bars(title, categories, {""}, {values}, y_label);
}

/// Overlaid histograms of several samples on shared bins.
inline std::string histograms(const std::string &title, const std::vector<std::string> &names,
                              const std::vector<std::vector<double>> &samples, int bins, double lo, double hi,
                              const std::string &x_label = "") {
  require(bins >= 1 && hi > lo && names.size() == samples.size(), ErrorKind::invalid_input,
          "histogram needs bins >= 1, hi > lo and one name per sample");
  std::vector<std::vector<double>> density(samples.size(), std::vector<double>(static_cast<std::size_t>(bins), 0.0));
  double top = 0.0;
  for (std::size_t s = 0; s < samples.size(); ++s) {
    for (double v : samples[s]) {
      auto b = static_cast<int>(std::floor((v - lo) / (hi - lo) * bins));
      b = std::clamp(b, 0, bins - 1);
      density[s][static_cast<std::size_t>(b)] += 1.0;
    }
    for (double &d : density[s]) {
      d /= std::max<double>(1.0, static_cast<double>(samples[s].size()));
      top = std::max(top, d);
    }
  }
  top = detail::nice_max(top);
  Frame f;
  Canvas c(f.width, f.height);
  detail::axes(c, f, 0, 0, top, title, "fraction");
  const double bw = f.plot_w() / bins;
  const double bottom = f.top + f.plot_h();
  for (std::size_t s = 0; s < samples.size(); ++s) {
    for (int b = 0; b < bins; ++b) {
      const double h = f.plot_h() * density[s][static_cast<std::size_t>(b)] / top;
      c.rect(f.left + bw * b, bottom - h, bw, h, palette()[s % palette().size()], "class=\"bar\" fill-opacity=\"0.5\"");
    }
    const double y = f.top + 4 + 14 * static_cast<double>(s);
    c.rect(f.width - 150, y, 10, 10, palette()[s % palette().size()]);
    c.text(f.width - 135, y + 9, names[s], "start", 10);
  }
  for (int i = 0; i <= 4; ++i) {
    const double v = lo + (hi - lo) * i / 4;
    c.text(f.left + f.plot_w() * i / 4, bottom + 14, fmt(v), "middle", 10);
  }
  if (!x_label.empty()) {
    c.text(f.left + f.plot_w() / 2, f.height - 6, x_label, "middle", 11);
  }
  return c.str();
}

/// Line chart of several series over shared x values.
inline std::string lines(const std::string &title, const std::vector<double> &x,
                         const std::vector<std::string> &names, const std::vector<std::vector<double>> &ys,
                         const std::string &x_label = "", double y_max = 1.0) {
  require(x.size() >= 2 && names.size() == ys.size(), ErrorKind::invalid_input,
          "line chart needs >= 2 points and one name per series");
  Frame f;
  Canvas c(f.width, f.height);
  detail::axes(c, f, 0, 0, y_max, title, "");
  const double x_lo = *std::min_element(x.begin(), x.end());
  const double x_hi = *std::max_element(x.begin(), x.end());
  const double span = x_hi > x_lo ? x_hi - x_lo : 1.0;
  const double bottom = f.top + f.plot_h();
  for (std::size_t s = 0; s < ys.size(); ++s) {
    require(ys[s].size() == x.size(), ErrorKind::invalid_input, "line series length mismatch");
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 0; i < x.size(); ++i) {
      pts.emplace_back(f.left + f.plot_w() * (x[i] - x_lo) / span,
                       bottom - f.plot_h() * std::clamp(ys[s][i] / y_max, 0.0, 1.0));
    }
    c.polyline(pts, palette()[s % palette().size()]);
    const double y = f.top + 4 + 14 * static_cast<double>(s);
    c.rect(f.width - 150, y, 10, 10, palette()[s % palette().size()]);
    c.text(f.width - 135, y + 9, names[s], "start", 10);
  }
  for (double v : x) {
    c.text(f.left + f.plot_w() * (v - x_lo) / span, bottom + 14, fmt(v), "middle", 10);
  }
  if (!x_label.empty()) {
    c.text(f.left + f.plot_w() / 2, f.height - 6, x_label, "middle", 11);
  }
  return c.str();
}

/// Small multiples: one bar panel per row of `values`, laid out in a grid.
inline std::string bar_grid(const std::string &title, const std::vector<std::string> &panel_titles,
                            const std::vector<std::vector<double>> &values, int columns, double y_max = 1.0,
                            const std::vector<int> &highlight = {}) {
  require(!values.empty() && panel_titles.size() == values.size() && columns >= 1, ErrorKind::invalid_input,
          "bar grid needs one title per panel");
  const int rows = static_cast<int>((values.size() + static_cast<std::size_t>(columns) - 1) / columns);
  Frame f{220, 150, 34, 8, 24, 22};
  Canvas c(f.width * columns, f.height * rows + 28);
  c.text(f.width * columns / 2, 18, title, "middle", 14);
  for (std::size_t p = 0; p < values.size(); ++p) {
    const double x0 = f.width * static_cast<double>(static_cast<int>(p) % columns);
    const double y0 = 28 + f.height * static_cast<double>(static_cast<int>(p) / columns);
    detail::axes(c, f, x0, y0, y_max, panel_titles[p], "", 2);
    const auto &row = values[p];
    const double slot = f.plot_w() / static_cast<double>(row.size());
    const double bottom = y0 + f.top + f.plot_h();
    for (std::size_t k = 0; k < row.size(); ++k) {
      const double h = f.plot_h() * std::clamp(row[k] / y_max, 0.0, 1.0);
      const bool mark = p < highlight.size() && highlight[p] == static_cast<int>(k);
      c.rect(x0 + f.left + slot * static_cast<double>(k) + slot * 0.1, bottom - h, slot * 0.8, h,
             mark ? palette()[3] : palette()[0], "class=\"bar\"");
      c.text(x0 + f.left + slot * (static_cast<double>(k) + 0.5), bottom + 12, std::to_string(k), "middle", 9);
    }
  }
  return c.str();
}

} // namespace flipnorm::svg
