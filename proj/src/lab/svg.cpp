#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "alab/lab.hpp"

namespace alab {

namespace {

constexpr double kW = 640, kH = 400;
constexpr double kLeft = 64, kRight = 150, kTop = 40, kBottom = 56;

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
                                "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#393b79", "#637939"};

std::string esc(const std::string& s) {
  std::string r;
  for (char c : s) {
    switch (c) {
      case '&': r += "&amp;"; break;
      case '<': r += "&lt;"; break;
      case '>': r += "&gt;"; break;
      case '"': r += "&quot;"; break;
      default: r += c;
    }
  }
  return r;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", std::abs(v) < 1e-12 ? 0.0 : v);
  return buf;
}

struct Range {
  double lo, hi;
  double span() const { return hi - lo; }
};

Range padded(double lo, double hi) {
  if (!std::isfinite(lo) || !std::isfinite(hi)) return {0, 1};
  if (hi - lo < 1e-12) return {lo - 0.5, hi + 0.5};
  return {lo, hi};
}

std::string open_svg(const std::string& title) {
  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << kW << ' ' << kH << "\" width=\"" << kW
     << "\" height=\"" << kH << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
     << "<rect width=\"" << kW << "\" height=\"" << kH << "\" fill=\"white\"/>\n"
     << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << esc(title)
     << "</text>\n";
  return os.str();
}

/// Frame, y ticks and axis labels shared by both chart kinds.
std::string frame(const Range& y, const std::string& x_label, const std::string& y_label) {
  const double x0 = kLeft, x1 = kW - kRight, y0 = kH - kBottom, y1 = kTop;
  std::ostringstream os;
  os << "<rect x=\"" << x0 << "\" y=\"" << y1 << "\" width=\"" << x1 - x0 << "\" height=\"" << y0 - y1
     << "\" fill=\"none\" stroke=\"#333\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double v = y.lo + y.span() * i / 5.0;
    const double py = y0 - (y0 - y1) * i / 5.0;
    os << "<line x1=\"" << x0 - 4 << "\" y1=\"" << num(py) << "\" x2=\"" << x0 << "\" y2=\"" << num(py)
       << "\" stroke=\"#333\"/>\n"
       << "<text x=\"" << x0 - 7 << "\" y=\"" << num(py + 4) << "\" text-anchor=\"end\">" << tick_label(v)
       << "</text>\n";
  }
  os << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << kH - 12 << "\" text-anchor=\"middle\">" << esc(x_label)
     << "</text>\n"
     << "<text transform=\"translate(16 " << (y0 + y1) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
     << esc(y_label) << "</text>\n";
  return os.str();
}

}  // namespace

std::string svg_line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<Series>& series) {
  double xl = INFINITY, xh = -INFINITY, yl = INFINITY, yh = -INFINITY;
  for (const Series& s : series) {
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      xl = std::min(xl, s.x[i]);
      xh = std::max(xh, s.x[i]);
      yl = std::min(yl, s.y[i]);
      yh = std::max(yh, s.y[i]);
    }
  }
  const Range xr = padded(xl, xh), yr = padded(yl, yh);
  const double x0 = kLeft, x1 = kW - kRight, y0 = kH - kBottom, y1 = kTop;
  auto px = [&](double v) { return x0 + (x1 - x0) * (v - xr.lo) / xr.span(); };
  auto py = [&](double v) { return y0 - (y0 - y1) * (v - yr.lo) / yr.span(); };

  std::ostringstream os;
  os << open_svg(title) << frame(yr, x_label, y_label);
  for (int i = 0; i <= 5; ++i) {
    const double v = xr.lo + xr.span() * i / 5.0;
    os << "<line x1=\"" << num(px(v)) << "\" y1=\"" << y0 << "\" x2=\"" << num(px(v)) << "\" y2=\"" << y0 + 4
       << "\" stroke=\"#333\"/>\n"
       << "<text x=\"" << num(px(v)) << "\" y=\"" << y0 + 16 << "\" text-anchor=\"middle\">" << tick_label(v)
       << "</text>\n";
  }
  for (std::size_t k = 0; k < series.size(); ++k) {
    const Series& s = series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    bool first = true;
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      os << (first ? "" : " ") << num(px(s.x[i])) << ',' << num(py(s.y[i]));
      first = false;
    }
    os << "\"/>\n";
    const double ly = kTop + 8 + 16.0 * static_cast<double>(k);
    os << "<line x1=\"" << x1 + 10 << "\" y1=\"" << ly << "\" x2=\"" << x1 + 28 << "\" y2=\"" << ly
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
       << "<text x=\"" << x1 + 32 << "\" y=\"" << ly + 4 << "\">" << esc(s.name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string svg_violin(const std::string& title, const std::string& y_label,
                       const std::vector<std::pair<std::string, std::vector<double>>>& groups) {
  double yl = INFINITY, yh = -INFINITY;
  for (const auto& [name, v] : groups) {
    for (double e : v) {
      if (!std::isfinite(e)) continue;
      yl = std::min(yl, e);
      yh = std::max(yh, e);
    }
  }
  const Range yr = padded(std::min(yl, 0.0), std::max(yh, 1.0));
  const double x0 = kLeft, x1 = kW - kRight + 120, y0 = kH - kBottom, y1 = kTop;
  auto py = [&](double v) { return y0 - (y0 - y1) * (v - yr.lo) / yr.span(); };
  const double slot = groups.empty() ? 0.0 : (x1 - x0) / static_cast<double>(groups.size());

  std::ostringstream os;
  os << open_svg(title);
  // The violin plot has no legend, so its frame spans the full width.
  os << "<rect x=\"" << x0 << "\" y=\"" << y1 << "\" width=\"" << x1 - x0 << "\" height=\"" << y0 - y1
     << "\" fill=\"none\" stroke=\"#333\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double v = yr.lo + yr.span() * i / 5.0;
    os << "<text x=\"" << x0 - 7 << "\" y=\"" << num(py(v) + 4) << "\" text-anchor=\"end\">" << tick_label(v)
       << "</text>\n";
  }
  os << "<text transform=\"translate(16 " << (y0 + y1) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
     << esc(y_label) << "</text>\n";

  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& [name, raw] = groups[g];
    const double cx = x0 + slot * (static_cast<double>(g) + 0.5);
    const char* color = kPalette[g % std::size(kPalette)];
    os << "<text x=\"" << num(cx) << "\" y=\"" << y0 + 16 << "\" text-anchor=\"middle\">" << esc(name)
       << "</text>\n";
    std::vector<double> v;
    for (double e : raw) {
      if (std::isfinite(e)) v.push_back(e);
    }
    if (v.empty()) continue;
    double mean = 0.0, var = 0.0;
    for (double e : v) mean += e;
    mean /= static_cast<double>(v.size());
    for (double e : v) var += (e - mean) * (e - mean);
    const double sd = std::sqrt(var / static_cast<double>(v.size()));
    const double bw = std::max(1.06 * sd * std::pow(static_cast<double>(v.size()), -0.2), 1e-3 * yr.span());
    const auto [mn, mx] = std::minmax_element(v.begin(), v.end());

    // Gaussian KDE sampled between the extremes, scaled to the slot.
    constexpr int kSteps = 48;
    std::vector<double> ys, dens;
    double peak = 0.0;
    for (int i = 0; i <= kSteps; ++i) {
      const double y = *mn + (*mx - *mn) * i / kSteps;
      double d = 0.0;
      for (double e : v) d += std::exp(-0.5 * ((y - e) / bw) * ((y - e) / bw));
      ys.push_back(y);
      dens.push_back(d);
      peak = std::max(peak, d);
    }
    const double half = 0.4 * slot;
    os << "<polygon fill=\"" << color << "\" fill-opacity=\"0.35\" stroke=\"" << color << "\" points=\"";
    for (int i = 0; i <= kSteps; ++i) {
      os << (i ? " " : "") << num(cx + half * dens[i] / peak) << ',' << num(py(ys[i]));
    }
    for (int i = kSteps; i >= 0; --i) os << ' ' << num(cx - half * dens[i] / peak) << ',' << num(py(ys[i]));
    os << "\"/>\n";
    for (double y : {*mn, mean, *mx}) {
      const double w = y == mean ? 0.3 * slot : 0.12 * slot;
      os << "<line x1=\"" << num(cx - w) << "\" y1=\"" << num(py(y)) << "\" x2=\"" << num(cx + w) << "\" y2=\""
         << num(py(y)) << "\" stroke=\"#222\"/>\n";
    }
    os << "<line x1=\"" << num(cx) << "\" y1=\"" << num(py(*mn)) << "\" x2=\"" << num(cx) << "\" y2=\""
       << num(py(*mx)) << "\" stroke=\"#222\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace alab
