#include "svg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>


namespace nfid::cli {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string escape(const std::string& s) {
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

// Fixed precision keeps the files small and stable across platforms.
std::string coord(double v) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(1);
  os << v;
  return os.str();
}

std::string tick(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

}  // namespace

std::string line_chart(const std::vector<ChartSeries>& series, const ChartOptions& opts) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (std::size_t k = 0; k < std::min(s.x.size(), s.y.size()); ++k) {
      if (!std::isfinite(s.x[k]) || !std::isfinite(s.y[k])) continue;
      x0 = std::min(x0, s.x[k]);
      x1 = std::max(x1, s.x[k]);
      y0 = std::min(y0, s.y[k]);
      y1 = std::max(y1, s.y[k]);
    }
  }
  if (!std::isfinite(x0)) x0 = 0.0, x1 = 1.0, y0 = 0.0, y1 = 1.0;
  if (x1 == x0) x1 = x0 + 1.0;
  if (y1 == y0) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;

  const double left = 70, right = 20, top = 30, bottom = 45;
  const double W = opts.width, H = opts.height;
  const double pw = W - left - right, ph = H - top - bottom;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << opts.width << "\" height=\""
     << opts.height << "\" viewBox=\"0 0 " << opts.width << ' ' << opts.height
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << coord(W / 2) << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">"
     << escape(opts.title) << "</text>\n";
  os << "<rect x=\"" << coord(left) << "\" y=\"" << coord(top) << "\" width=\"" << coord(pw)
     << "\" height=\"" << coord(ph) << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double fx = x0 + (x1 - x0) * k / 4.0;
    const double fy = y0 + (y1 - y0) * k / 4.0;
    os << "<text x=\"" << coord(px(fx)) << "\" y=\"" << coord(top + ph + 15)
       << "\" text-anchor=\"middle\">" << tick(fx) << "</text>\n";
    os << "<text x=\"" << coord(left - 5) << "\" y=\"" << coord(py(fy) + 4)
       << "\" text-anchor=\"end\">" << tick(fy) << "</text>\n";
    os << "<line x1=\"" << coord(left) << "\" x2=\"" << coord(left + pw) << "\" y1=\""
       << coord(py(fy)) << "\" y2=\"" << coord(py(fy)) << "\" stroke=\"#ddd\"/>\n";
  }
  os << "<text x=\"" << coord(left + pw / 2) << "\" y=\"" << coord(H - 8)
     << "\" text-anchor=\"middle\">" << escape(opts.x_label) << "</text>\n";
  os << "<text transform=\"translate(14," << coord(top + ph / 2)
     << ") rotate(-90)\" text-anchor=\"middle\">" << escape(opts.y_label) << "</text>\n";

  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& ser = series[s];
    const char* colour = kPalette[s % std::size(kPalette)];
    const std::size_t n = std::min(ser.x.size(), ser.y.size());
    const std::size_t stride = std::max<std::size_t>(1, n / std::max<std::size_t>(1, opts.max_points));
    os << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.2\" points=\"";
    for (std::size_t k = 0; k < n; k += stride) {
      if (!std::isfinite(ser.x[k]) || !std::isfinite(ser.y[k])) continue;
      os << coord(px(ser.x[k])) << ',' << coord(py(ser.y[k])) << ' ';
    }
    os << "\"/>\n";
    if (ser.markers) {
      for (std::size_t k = 0; k < n; k += stride) {
        if (!std::isfinite(ser.y[k])) continue;
        os << "<circle cx=\"" << coord(px(ser.x[k])) << "\" cy=\"" << coord(py(ser.y[k]))
           << "\" r=\"3\" fill=\"" << colour << "\"/>\n";
      }
    }
    const double ly = top + 14 + 14 * static_cast<double>(s);
    os << "<line x1=\"" << coord(left + pw - 120) << "\" x2=\"" << coord(left + pw - 100)
       << "\" y1=\"" << coord(ly - 4) << "\" y2=\"" << coord(ly - 4) << "\" stroke=\"" << colour
       << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << coord(left + pw - 95) << "\" y=\"" << coord(ly) << "\">"
       << escape(ser.label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace nfid::cli
