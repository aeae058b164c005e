#pragma once

// Minimal SVG line charts for persisted runs and sweeps.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mfcount/experiment.hpp"

namespace mfcount {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::string color = "#1f77b4";
  bool dashed = false;
};

struct Chart {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
  bool log_y = false;
  std::vector<Series> series;
};

namespace detail {

inline std::string svg_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

inline std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", x);
  return buf;
}

}  // namespace detail

/// Renders the chart. Points that are non-finite, or non-positive on a log axis, are skipped.
inline std::string render_svg(const Chart& chart) {
  constexpr double W = 640, H = 420, left = 70, right = 20, top = 40, bottom = 50;
  auto tx = [&](double v) { return chart.log_x ? std::log10(v) : v; };
  auto ty = [&](double v) { return chart.log_y ? std::log10(v) : v; };
  auto usable = [&](double x, double y) {
    return std::isfinite(x) && std::isfinite(y) && (!chart.log_x || x > 0) && (!chart.log_y || y > 0);
  };

  double x0 = kInfinity, x1 = -kInfinity, y0 = kInfinity, y1 = -kInfinity;
  std::size_t points = 0;
  for (const auto& s : chart.series)
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!usable(s.x[i], s.y[i])) continue;
      ++points;
      x0 = std::min(x0, tx(s.x[i]));
      x1 = std::max(x1, tx(s.x[i]));
      y0 = std::min(y0, ty(s.y[i]));
      y1 = std::max(y1, ty(s.y[i]));
    }
  if (points == 0) throw InvalidArgument("chart '" + chart.title + "' has no plottable points");
  if (x1 - x0 <= 0) { x0 -= 0.5; x1 += 0.5; }
  if (y1 - y0 <= 0) { y0 -= 0.5; y1 += 0.5; }
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double v) { return left + (tx(v) - x0) / (x1 - x0) * (W - left - right); };
  auto py = [&](double v) { return H - bottom - (ty(v) - y0) / (y1 - y0) * (H - top - bottom); };

  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"420\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += "<text x=\"320\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" + detail::svg_escape(chart.title) + "</text>\n";
  out += "<rect x=\"" + detail::fmt(left) + "\" y=\"" + detail::fmt(top) + "\" width=\"" + detail::fmt(W - left - right) +
         "\" height=\"" + detail::fmt(H - top - bottom) + "\" fill=\"none\" stroke=\"black\"/>\n";

  for (int k = 0; k <= 4; ++k) {
    const double fx = x0 + k * (x1 - x0) / 4, fy = y0 + k * (y1 - y0) / 4;
    const double vx = chart.log_x ? std::pow(10.0, fx) : fx, vy = chart.log_y ? std::pow(10.0, fy) : fy;
    out += "<text x=\"" + detail::fmt(px(vx)) + "\" y=\"" + detail::fmt(H - bottom + 16) + "\" text-anchor=\"middle\">" +
           detail::fmt(vx) + "</text>\n";
    out += "<text x=\"" + detail::fmt(left - 6) + "\" y=\"" + detail::fmt(py(vy) + 4) + "\" text-anchor=\"end\">" +
           detail::fmt(vy) + "</text>\n";
  }
  out += "<text x=\"320\" y=\"" + detail::fmt(H - 10) + "\" text-anchor=\"middle\">" + detail::svg_escape(chart.x_label) + "</text>\n";
  out += "<text x=\"16\" y=\"" + detail::fmt(H / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " + detail::fmt(H / 2) +
         ")\">" + detail::svg_escape(chart.y_label) + "</text>\n";

  double legend_y = top + 16;
  for (const auto& s : chart.series) {
    std::string path;
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!usable(s.x[i], s.y[i])) continue;
      path += (path.empty() ? "M" : " L") + detail::fmt(px(s.x[i])) + "," + detail::fmt(py(s.y[i]));
    }
    if (path.empty()) continue;
    out += "<path d=\"" + path + "\" fill=\"none\" stroke=\"" + s.color + "\" stroke-width=\"1.5\"" +
           (s.dashed ? " stroke-dasharray=\"6,4\"" : "") + "/>\n";
    out += "<text x=\"" + detail::fmt(W - right - 8) + "\" y=\"" + detail::fmt(legend_y) + "\" text-anchor=\"end\" fill=\"" +
           s.color + "\">" + detail::svg_escape(s.label) + "</text>\n";
    legend_y += 16;
  }
  out += "</svg>\n";
  return out;
}

inline void write_svg(const Chart& chart, const fs::path& path) {
  const std::string svg = render_svg(chart);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << svg;
}

/// Writes alpha_vs_gronwall.svg, gamma_vs_lemma2.svg and density_vs_bound.svg
/// into a run directory. Returns the files written.
inline std::vector<fs::path> plot_run(const fs::path& dir) {
  const Json report = read_json(dir / "report.json");
  const int n = report.at("particles").get<int>();
  const TimeSeries ts = read_timeseries(dir / "timeseries.tsv");
  if (ts.rows() == 0) throw InvalidArgument("time series in " + dir.string() + " is empty");
  const auto& t = ts.column("time");
  const auto& a = ts.column("alpha");

  // Smallest C^t column at the final time gives the tightest Lemma 2 curve.
  std::string best_c;
  for (const auto& name : ts.columns)
    if (name.rfind("c_t_r", 0) == 0 && (best_c.empty() || ts.column(name).back() < ts.column(best_c).back()))
      best_c = name;
  std::vector<double> abs_gamma, lemma2, op_bound;
  for (std::size_t i = 0; i < ts.rows(); ++i) {
    abs_gamma.push_back(std::abs(ts.column("gamma")[i]));
    if (!best_c.empty()) lemma2.push_back(ts.column(best_c)[i] * (a[i] + 1.0 / n));
    const double ai = std::max(a[i], 0.0);
    op_bound.push_back(2.0 * std::sqrt(ai) + 2.0 * ai);
  }

  std::vector<fs::path> written;
  Chart c1{"alpha vs Gronwall bound, N = " + std::to_string(n), "t", "value", false, true,
           {{"alpha", t, a, "#1f77b4"}, {"Gronwall bound", t, ts.column("gronwall_bound"), "#d62728", true}}};
  write_svg(c1, dir / "alpha_vs_gronwall.svg");
  written.push_back(dir / "alpha_vs_gronwall.svg");

  Chart c2{"|gamma| vs C^t (alpha + 1/N)", "t", "value", false, false, {{"|gamma|", t, abs_gamma, "#1f77b4"}}};
  if (!best_c.empty()) c2.series.push_back({"bound (" + best_c + ")", t, lemma2, "#d62728", true});
  write_svg(c2, dir / "gamma_vs_lemma2.svg");
  written.push_back(dir / "gamma_vs_lemma2.svg");

  Chart c3{"one-body density distance", "t", "value", false, false,
           {{"operator norm", t, ts.column("op_distance"), "#1f77b4"},
            {"trace norm", t, ts.column("trace_distance"), "#2ca02c"},
            {"2 sqrt(alpha) + 2 alpha", t, op_bound, "#d62728", true}}};
  write_svg(c3, dir / "density_vs_bound.svg");
  written.push_back(dir / "density_vs_bound.svg");
  return written;
}

/// Plots every run of a sweep plus n_decay.svg (max alpha against N with a 1/N guide).
inline std::vector<fs::path> plot_sweep(const fs::path& dir) {
  const Json sweep = read_json(dir / "sweep.json");
  std::vector<fs::path> written;
  std::vector<double> ns, max_alpha, envelope;
  for (const auto& e : sweep.at("entries")) {
    const fs::path run = dir / e.at("directory").get<std::string>();
    if (fs::exists(run / "report.json")) {
      auto files = plot_run(run);
      written.insert(written.end(), files.begin(), files.end());
    }
    if (e.at("max_alpha").is_number()) {
      ns.push_back(e.at("particles").get<double>());
      max_alpha.push_back(e.at("max_alpha").get<double>());
      envelope.push_back(e.at("envelope").is_number() ? e.at("envelope").get<double>() : std::nan(""));
    }
  }
  if (ns.empty()) throw InvalidArgument("sweep in " + dir.string() + " has no completed runs to plot");
  std::vector<double> guide;
  for (double n : ns) guide.push_back(max_alpha.front() * ns.front() / n);
  Chart c{"max alpha against N", "N", "max_t alpha", true, true,
          {{"max alpha", ns, max_alpha, "#1f77b4"},
           {"(e^{int C} - 1)/N", ns, envelope, "#d62728", true},
           {"1/N guide", ns, guide, "#7f7f7f", true}}};
  write_svg(c, dir / "n_decay.svg");
  written.push_back(dir / "n_decay.svg");
  return written;
}

/// Dispatches on the directory layout: sweep.json means a sweep, report.json a single run.
inline std::vector<fs::path> plot_directory(const fs::path& dir) {
  if (fs::exists(dir / "sweep.json")) return plot_sweep(dir);
  if (fs::exists(dir / "report.json")) return plot_run(dir);
  throw InvalidArgument(dir.string() + " holds neither report.json nor sweep.json");
}

}  // namespace mfcount
