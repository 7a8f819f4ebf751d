#include "tgd/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "tgd/errors.hpp"

namespace tgd::plot {

namespace {

constexpr double kW = 640, kH = 420, kLeft = 70, kRight = 20, kTop = 40, kBottom = 55;
const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

std::string esc(const std::string& s) {
  std::string o;
  for (char c : s) {
    if (c == '<') o += "&lt;";
    else if (c == '>') o += "&gt;";
    else if (c == '&') o += "&amp;";
    else o += c;
  }
  return o;
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

struct Range {
  double lo = 0.0, hi = 1.0;
};

Range padded(double lo, double hi) {
  if (!std::isfinite(lo) || !std::isfinite(hi)) return {};
  if (hi - lo < 1e-12) {
    const double d = std::max(std::abs(lo) * 0.1, 1e-3);
    return {lo - d, hi + d};
  }
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

void frame(std::ostringstream& o, const std::string& title, const std::string& xlabel, const std::string& ylabel) {
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << esc(title) << "</text>\n"
    << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << kW - kLeft - kRight << "\" height=\""
    << kH - kTop - kBottom << "\" fill=\"none\" stroke=\"black\"/>\n"
    << "<text x=\"" << (kLeft + kW - kRight) / 2 << "\" y=\"" << kH - 12 << "\" text-anchor=\"middle\">" << esc(xlabel)
    << "</text>\n"
    << "<text x=\"16\" y=\"" << (kTop + kH - kBottom) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << (kTop + kH - kBottom) / 2 << ")\">" << esc(ylabel) << "</text>\n";
}

}  // namespace

std::string render_svg(const LinePlot& p) {
  double xlo = std::numeric_limits<double>::infinity(), xhi = -xlo, ylo = xlo, yhi = -xlo;
  for (const auto& s : p.series)
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      xlo = std::min(xlo, s.x[i]);
      xhi = std::max(xhi, s.x[i]);
      ylo = std::min(ylo, s.y[i]);
      yhi = std::max(yhi, s.y[i]);
    }
  if (p.hline) {
    ylo = std::min(ylo, *p.hline);
    yhi = std::max(yhi, *p.hline);
  }
  const Range xr = padded(xlo, xhi), yr = padded(ylo, yhi);
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  auto X = [&](double v) { return kLeft + (v - xr.lo) / (xr.hi - xr.lo) * pw; };
  auto Y = [&](double v) { return kTop + ph - (v - yr.lo) / (yr.hi - yr.lo) * ph; };

  std::ostringstream o;
  frame(o, p.title, p.xlabel, p.ylabel);
  for (int t = 0; t <= 4; ++t) {
    const double xv = xr.lo + (xr.hi - xr.lo) * t / 4.0, yv = yr.lo + (yr.hi - yr.lo) * t / 4.0;
    o << "<text x=\"" << X(xv) << "\" y=\"" << kTop + ph + 16 << "\" text-anchor=\"middle\">" << fmt(xv) << "</text>\n"
      << "<text x=\"" << kLeft - 6 << "\" y=\"" << Y(yv) + 4 << "\" text-anchor=\"end\">" << fmt(yv) << "</text>\n";
  }
  if (p.hline) {
    o << "<line x1=\"" << kLeft << "\" x2=\"" << kLeft + pw << "\" y1=\"" << Y(*p.hline) << "\" y2=\"" << Y(*p.hline)
      << "\" stroke=\"gray\" stroke-dasharray=\"5,4\"/>\n";
    if (!p.hline_label.empty())
      o << "<text x=\"" << kLeft + pw - 4 << "\" y=\"" << Y(*p.hline) - 4 << "\" text-anchor=\"end\" fill=\"gray\">"
        << esc(p.hline_label) << "</text>\n";
  }
  if (p.vline) {
    o << "<line y1=\"" << kTop << "\" y2=\"" << kTop + ph << "\" x1=\"" << X(*p.vline) << "\" x2=\"" << X(*p.vline)
      << "\" stroke=\"gray\" stroke-dasharray=\"2,3\"/>\n";
    if (!p.vline_label.empty())
      o << "<text x=\"" << X(*p.vline) + 4 << "\" y=\"" << kTop + 14 << "\">" << esc(p.vline_label) << "</text>\n";
  }
  for (std::size_t k = 0; k < p.series.size(); ++k) {
    const auto& s = p.series[k];
    const char* color = kColors[k % std::size(kColors)];
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i)
      if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) o << X(s.x[i]) << ',' << Y(s.y[i]) << ' ';
    o << "\"/>\n"
      << "<text x=\"" << kLeft + 8 << "\" y=\"" << kTop + 16 + 15 * k << "\" fill=\"" << color << "\">" << esc(s.name)
      << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::string render_svg(const BarPlot& p) {
  double yhi = 0.0, ylo = 0.0;
  for (const auto& s : p.values)
    for (double v : s)
      if (std::isfinite(v)) {
        yhi = std::max(yhi, v);
        ylo = std::min(ylo, v);
      }
  const Range yr = padded(ylo, yhi);
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  auto Y = [&](double v) { return kTop + ph - (v - yr.lo) / (yr.hi - yr.lo) * ph; };
  std::ostringstream o;
  frame(o, p.title, "", p.ylabel);
  for (int t = 0; t <= 4; ++t) {
    const double yv = yr.lo + (yr.hi - yr.lo) * t / 4.0;
    o << "<text x=\"" << kLeft - 6 << "\" y=\"" << Y(yv) + 4 << "\" text-anchor=\"end\">" << fmt(yv) << "</text>\n";
  }
  const std::size_t nc = std::max<std::size_t>(p.categories.size(), 1), ns = std::max<std::size_t>(p.values.size(), 1);
  const double group = pw / nc, bar = group * 0.8 / ns;
  for (std::size_t c = 0; c < p.categories.size(); ++c) {
    const double gx = kLeft + group * c + group * 0.1;
    for (std::size_t s = 0; s < p.values.size(); ++s) {
      if (c >= p.values[s].size() || !std::isfinite(p.values[s][c])) continue;
      const double v = p.values[s][c];
      const double top = Y(std::max(v, 0.0)), base = Y(std::min(v, 0.0));
      o << "<rect x=\"" << gx + bar * s << "\" y=\"" << top << "\" width=\"" << bar * 0.95 << "\" height=\""
        << std::max(base - top, 0.5) << "\" fill=\"" << kColors[s % std::size(kColors)] << "\"><title>"
        << fmt(v) << "</title></rect>\n";
    }
    o << "<text x=\"" << gx + group * 0.4 << "\" y=\"" << kTop + ph + 16 << "\" text-anchor=\"middle\">"
      << esc(p.categories[c]) << "</text>\n";
  }
  for (std::size_t s = 0; s < p.series_names.size(); ++s)
    o << "<text x=\"" << kLeft + pw - 8 << "\" y=\"" << kTop + 16 + 15 * s << "\" text-anchor=\"end\" fill=\""
      << kColors[s % std::size(kColors)] << "\">" << esc(p.series_names[s]) << "</text>\n";
  o << "</svg>\n";
  return o.str();
}

void write_svg(const std::filesystem::path& path, const std::string& svg) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write plot " + path.string());
  out << svg;
}

}  // namespace tgd::plot
