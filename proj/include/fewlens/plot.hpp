#pragma once

// Hand-emitted SVG result figures: an LMI scatter over the vocabulary
// (frequency-ascending x axis, top tokens annotated) and a confusion-matrix
// heat grid (green diagonal ramp, pink off-diagonal ramp). Output bytes are a
// pure function of the inputs, so the files golden-test cleanly.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "fewlens/corpus.hpp"
#include "fewlens/metrics.hpp"

namespace fewlens {

namespace detail {

inline std::string fmt_fixed(double v, int precision) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v,
                           std::chars_format::fixed, precision);
  return std::string(buf, res.ptr);
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string lerp_color(int r0, int g0, int b0, int r1, int g1, int b1,
                              double t) {
  auto channel = [t](int a, int b) {
    const int v = static_cast<int>(std::lround(a + (b - a) * t));
    return std::clamp(v, 0, 255);
  };
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", channel(r0, r1),
                channel(g0, g1), channel(b0, b1));
  return std::string(buf);
}

inline constexpr double kSvgW = 800.0;
inline constexpr double kSvgH = 400.0;

inline std::string svg_open() {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 800 400\" "
         "width=\"800\" height=\"400\">\n"
         "<rect x=\"0\" y=\"0\" width=\"800\" height=\"400\" fill=\"#ffffff\"/>\n";
}

}  // namespace detail

// Scatter of a normalized LMI distribution: x = vocabulary rank in ascending
// frequency order, y = probability mass; the `annotate_top` heaviest tokens
// are labeled.
inline std::string render_lmi_svg(const LmiDistribution& dist,
                                  const Vocabulary& vocab,
                                  std::size_t annotate_top = 5,
                                  const std::string& title = "") {
  if (dist.degenerate || !dist.normalized) {
    throw std::invalid_argument(
        "plot_lmi: distribution is degenerate; compute it from a pool that "
        "contains the label before plotting");
  }
  if (static_cast<int>(dist.values.size()) != vocab.size()) {
    throw std::invalid_argument("plot_lmi: distribution/vocabulary mismatch");
  }
  const std::size_t n = dist.values.size();

  // Frequency-ascending rank; ties by token id for determinism.
  std::vector<std::size_t> rank_order(n);
  std::iota(rank_order.begin(), rank_order.end(), 0);
  std::stable_sort(rank_order.begin(), rank_order.end(),
                   [&vocab](std::size_t a, std::size_t b) {
                     return vocab.frequency(static_cast<int>(a)) <
                            vocab.frequency(static_cast<int>(b));
                   });
  std::vector<std::size_t> rank_of(n);
  for (std::size_t r = 0; r < n; ++r) rank_of[rank_order[r]] = r;

  double vmax = 0.0;
  for (double v : dist.values) vmax = std::max(vmax, v);

  const double x0 = 50.0, x1 = 780.0, y0 = 360.0, y1 = 30.0;
  auto x_at = [&](std::size_t rank) {
    if (n <= 1) return (x0 + x1) / 2.0;
    return x0 + (x1 - x0) * static_cast<double>(rank) /
                    static_cast<double>(n - 1);
  };
  auto y_at = [&](double v) { return y0 - (y0 - y1) * (v / vmax); };

  std::string svg = detail::svg_open();
  svg += "<line x1=\"50\" y1=\"360\" x2=\"780\" y2=\"360\" stroke=\"#333333\" "
         "stroke-width=\"1\"/>\n";
  svg += "<line x1=\"50\" y1=\"30\" x2=\"50\" y2=\"360\" stroke=\"#333333\" "
         "stroke-width=\"1\"/>\n";
  svg += "<text x=\"415\" y=\"390\" font-family=\"sans-serif\" font-size=\"12\" "
         "text-anchor=\"middle\" fill=\"#333333\">tokens by ascending "
         "frequency</text>\n";
  svg += "<text x=\"16\" y=\"195\" font-family=\"sans-serif\" font-size=\"12\" "
         "text-anchor=\"middle\" fill=\"#333333\" transform=\"rotate(-90 16 "
         "195)\">normalized LMI</text>\n";
  svg += "<text x=\"46\" y=\"364\" font-family=\"sans-serif\" font-size=\"10\" "
         "text-anchor=\"end\" fill=\"#333333\">0</text>\n";
  svg += "<text x=\"46\" y=\"34\" font-family=\"sans-serif\" font-size=\"10\" "
         "text-anchor=\"end\" fill=\"#333333\">" +
         detail::fmt_fixed(vmax, 4) + "</text>\n";
  if (!title.empty()) {
    svg += "<text x=\"415\" y=\"18\" font-family=\"sans-serif\" "
           "font-size=\"13\" text-anchor=\"middle\" fill=\"#333333\">" +
           detail::xml_escape(title) + "</text>\n";
  }

  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t token = rank_order[r];
    svg += "<circle cx=\"" + detail::fmt_fixed(x_at(r), 2) + "\" cy=\"" +
           detail::fmt_fixed(y_at(dist.values[token]), 2) +
           "\" r=\"2\" fill=\"#1976d2\"/>\n";
  }

  std::vector<std::size_t> by_value(n);
  std::iota(by_value.begin(), by_value.end(), 0);
  std::sort(by_value.begin(), by_value.end(),
            [&dist](std::size_t a, std::size_t b) {
              if (dist.values[a] != dist.values[b]) {
                return dist.values[a] > dist.values[b];
              }
              return a < b;
            });
  const std::size_t annotations = std::min(annotate_top, n);
  for (std::size_t i = 0; i < annotations; ++i) {
    const std::size_t token = by_value[i];
    if (dist.values[token] <= 0.0) break;
    const double cx = x_at(rank_of[token]);
    const double cy = y_at(dist.values[token]);
    const bool left_half = cx < (x0 + x1) / 2.0;
    svg += "<text x=\"" + detail::fmt_fixed(cx + (left_half ? 5.0 : -5.0), 2) +
           "\" y=\"" + detail::fmt_fixed(cy - 5.0, 2) +
           "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"" +
           (left_half ? "start" : "end") + "\" fill=\"#b71c1c\">" +
           detail::xml_escape(vocab.token(static_cast<int>(token))) +
           "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

// Confusion-matrix heat grid. Rows are ground truth, columns predictions;
// diagonal cells use a green ramp, off-diagonal cells a pink one, intensity
// proportional to count/max; every count is printed.
inline std::string render_confusion_svg(
    const std::vector<std::vector<std::int64_t>>& matrix,
    const std::vector<std::string>& labels, const std::string& title = "") {
  const std::size_t C = matrix.size();
  if (C == 0) {
    throw std::invalid_argument("plot_confusion: empty matrix");
  }
  for (const auto& row : matrix) {
    if (row.size() != C) {
      throw std::invalid_argument("plot_confusion: matrix is not square");
    }
  }
  if (labels.size() != C) {
    throw std::invalid_argument("plot_confusion: need one label per class");
  }

  std::int64_t max_count = 0;
  for (const auto& row : matrix) {
    for (auto v : row) max_count = std::max(max_count, v);
  }

  const double grid_x0 = 260.0, grid_y0 = 60.0;
  const double grid_w = 440.0, grid_h = 300.0;
  const double cell = std::min(grid_w / static_cast<double>(C),
                               grid_h / static_cast<double>(C));
  const double ox = grid_x0 + (grid_w - cell * static_cast<double>(C)) / 2.0;
  const double oy = grid_y0 + (grid_h - cell * static_cast<double>(C)) / 2.0;

  std::string svg = detail::svg_open();
  if (!title.empty()) {
    svg += "<text x=\"400\" y=\"22\" font-family=\"sans-serif\" "
           "font-size=\"13\" text-anchor=\"middle\" fill=\"#333333\">" +
           detail::xml_escape(title) + "</text>\n";
  }
  svg += "<text x=\"" + detail::fmt_fixed(ox + cell * C / 2.0, 2) +
         "\" y=\"" + detail::fmt_fixed(oy - 28.0, 2) +
         "\" font-family=\"sans-serif\" font-size=\"12\" "
         "text-anchor=\"middle\" fill=\"#333333\">predicted</text>\n";
  svg += "<text x=\"" + detail::fmt_fixed(ox - 90.0, 2) + "\" y=\"" +
         detail::fmt_fixed(oy + cell * C / 2.0, 2) +
         "\" font-family=\"sans-serif\" font-size=\"12\" "
         "text-anchor=\"middle\" fill=\"#333333\" transform=\"rotate(-90 " +
         detail::fmt_fixed(ox - 90.0, 2) + " " +
         detail::fmt_fixed(oy + cell * C / 2.0, 2) + ")\">truth</text>\n";

  for (std::size_t col = 0; col < C; ++col) {
    svg += "<text x=\"" +
           detail::fmt_fixed(ox + cell * (static_cast<double>(col) + 0.5), 2) +
           "\" y=\"" + detail::fmt_fixed(oy - 8.0, 2) +
           "\" font-family=\"sans-serif\" font-size=\"11\" "
           "text-anchor=\"middle\" fill=\"#333333\">" +
           detail::xml_escape(labels[col]) + "</text>\n";
  }
  for (std::size_t row = 0; row < C; ++row) {
    svg += "<text x=\"" + detail::fmt_fixed(ox - 8.0, 2) + "\" y=\"" +
           detail::fmt_fixed(oy + cell * (static_cast<double>(row) + 0.5) + 4.0,
                             2) +
           "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\" "
           "fill=\"#333333\">" +
           detail::xml_escape(labels[row]) + "</text>\n";
  }

  for (std::size_t row = 0; row < C; ++row) {
    for (std::size_t col = 0; col < C; ++col) {
      const double t = max_count == 0
                           ? 0.0
                           : static_cast<double>(matrix[row][col]) /
                                 static_cast<double>(max_count);
      const std::string fill =
          row == col ? detail::lerp_color(232, 245, 233, 27, 94, 32, t)
                     : detail::lerp_color(252, 228, 236, 136, 14, 72, t);
      const double x = ox + cell * static_cast<double>(col);
      const double y = oy + cell * static_cast<double>(row);
      svg += "<rect x=\"" + detail::fmt_fixed(x, 2) + "\" y=\"" +
             detail::fmt_fixed(y, 2) + "\" width=\"" +
             detail::fmt_fixed(cell, 2) + "\" height=\"" +
             detail::fmt_fixed(cell, 2) + "\" fill=\"" + fill +
             "\" stroke=\"#999999\" stroke-width=\"1\"/>\n";
      const std::string text_color = t > 0.55 ? "#ffffff" : "#333333";
      svg += "<text x=\"" + detail::fmt_fixed(x + cell / 2.0, 2) + "\" y=\"" +
             detail::fmt_fixed(y + cell / 2.0 + 4.0, 2) +
             "\" font-family=\"sans-serif\" font-size=\"12\" "
             "text-anchor=\"middle\" fill=\"" +
             text_color + "\">" + std::to_string(matrix[row][col]) +
             "</text>\n";
    }
  }
  svg += "</svg>\n";
  return svg;
}

inline void write_text_file(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << body;
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline void plot_lmi(const LmiDistribution& dist, const Vocabulary& vocab,
                     std::size_t annotate_top, const std::string& out_path,
                     const std::string& title = "") {
  write_text_file(out_path, render_lmi_svg(dist, vocab, annotate_top, title));
}

inline void plot_confusion(const std::vector<std::vector<std::int64_t>>& matrix,
                           const std::vector<std::string>& labels,
                           const std::string& out_path,
                           const std::string& title = "") {
  write_text_file(out_path, render_confusion_svg(matrix, labels, title));
}

}  // namespace fewlens
