#include "bevrecon/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace bevrecon {

namespace {

constexpr int kWidth = 720;
constexpr int kHeight = 480;
constexpr int kMarginL = 70, kMarginR = 160, kMarginT = 40, kMarginB = 55;

const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                         "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

struct Axis {
  double lo = 0, hi = 1;
  bool log = false;

  double map(double v, double pix_lo, double pix_hi) const {
    double a = log ? std::log10(v) : v;
    double l = log ? std::log10(lo) : lo;
    double h = log ? std::log10(hi) : hi;
    if (h <= l) h = l + 1;
    return pix_lo + (a - l) / (h - l) * (pix_hi - pix_lo);
  }

  std::vector<double> ticks() const {
    std::vector<double> out;
    if (log) {
      const int e0 = static_cast<int>(std::floor(std::log10(lo)));
      const int e1 = static_cast<int>(std::ceil(std::log10(hi)));
      for (int e = e0; e <= e1; ++e) {
        const double v = std::pow(10.0, e);
        if (v >= lo * 0.999 && v <= hi * 1.001) out.push_back(v);
      }
      if (out.size() < 2) {
        out = {lo, hi};
      }
    } else {
      const double span = hi - lo;
      const double raw = span / 5.0;
      const double mag = std::pow(10.0, std::floor(std::log10(raw)));
      double step = mag;
      for (double m : {1.0, 2.0, 5.0, 10.0}) {
        if (raw <= m * mag) {
          step = m * mag;
          break;
        }
      }
      for (double v = std::ceil(lo / step) * step; v <= hi + 1e-12 * span; v += step) {
        out.push_back(v);
      }
    }
    return out;
  }
};

}  // namespace

void write_svg_plot(const std::string& path, const std::string& title,
                    const std::string& xlabel, const std::string& ylabel,
                    const std::vector<PlotSeries>& series, bool log_x, bool log_y) {
  double xmin = std::numeric_limits<double>::max(), xmax = std::numeric_limits<double>::lowest();
  double ymin = xmin, ymax = xmax;
  for (const auto& s : series) {
    for (double v : s.x) {
      xmin = std::min(xmin, v);
      xmax = std::max(xmax, v);
    }
    for (double v : s.y) {
      ymin = std::min(ymin, v);
      ymax = std::max(ymax, v);
    }
  }
  if (xmin > xmax) throw std::invalid_argument("write_svg_plot: empty series");
  if (log_x && xmin <= 0) throw std::invalid_argument("log x axis with non-positive data");
  if (log_y && ymin <= 0) throw std::invalid_argument("log y axis with non-positive data");
  if (xmin == xmax) {
    xmin -= 0.5;
    xmax += 0.5;
  }
  if (ymin == ymax) {
    ymin -= 0.5;
    ymax += 0.5;
  }
  if (!log_y) {
    const double pad = 0.06 * (ymax - ymin);
    ymin -= pad;
    ymax += pad;
  }
  Axis ax{xmin, xmax, log_x}, ay{ymin, ymax, log_y};

  const double px0 = kMarginL, px1 = kWidth - kMarginR;
  const double py0 = kHeight - kMarginB, py1 = kMarginT;  // y grows upward

  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write plot: " + path);
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << kWidth << "' height='" << kHeight
     << "' font-family='sans-serif' font-size='12'>\n";
  os << "<rect width='100%' height='100%' fill='white'/>\n";
  os << "<text x='" << (px0 + px1) / 2 << "' y='20' text-anchor='middle' font-size='15'>"
     << title << "</text>\n";

  for (double t : ax.ticks()) {
    const double x = ax.map(t, px0, px1);
    os << "<line x1='" << x << "' y1='" << py0 << "' x2='" << x << "' y2='" << py1
       << "' stroke='#dddddd'/>\n";
    os << "<text x='" << x << "' y='" << py0 + 18 << "' text-anchor='middle'>" << fmt(t)
       << "</text>\n";
  }
  for (double t : ay.ticks()) {
    const double y = ay.map(t, py0, py1);
    os << "<line x1='" << px0 << "' y1='" << y << "' x2='" << px1 << "' y2='" << y
       << "' stroke='#dddddd'/>\n";
    os << "<text x='" << px0 - 6 << "' y='" << y + 4 << "' text-anchor='end'>" << fmt(t)
       << "</text>\n";
  }
  os << "<line x1='" << px0 << "' y1='" << py0 << "' x2='" << px1 << "' y2='" << py0
     << "' stroke='black'/>\n";
  os << "<line x1='" << px0 << "' y1='" << py0 << "' x2='" << px0 << "' y2='" << py1
     << "' stroke='black'/>\n";
  os << "<text x='" << (px0 + px1) / 2 << "' y='" << kHeight - 12
     << "' text-anchor='middle'>" << xlabel << "</text>\n";
  os << "<text x='18' y='" << (py0 + py1) / 2 << "' text-anchor='middle' transform='rotate(-90 18 "
     << (py0 + py1) / 2 << ")'>" << ylabel << "</text>\n";

  for (size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const char* color = kColors[si % (sizeof(kColors) / sizeof(kColors[0]))];
    os << "<polyline fill='none' stroke='" << color << "' stroke-width='1.8' points='";
    for (size_t i = 0; i < s.x.size(); ++i) {
      os << ax.map(s.x[i], px0, px1) << "," << ay.map(s.y[i], py0, py1) << " ";
    }
    os << "'/>\n";
    for (size_t i = 0; i < s.x.size(); ++i) {
      os << "<circle cx='" << ax.map(s.x[i], px0, px1) << "' cy='" << ay.map(s.y[i], py0, py1)
         << "' r='3' fill='" << color << "'/>\n";
    }
    const double ly = kMarginT + 16 + 18 * static_cast<double>(si);
    os << "<rect x='" << px1 + 12 << "' y='" << ly - 9 << "' width='12' height='12' fill='"
       << color << "'/>\n";
    os << "<text x='" << px1 + 30 << "' y='" << ly + 2 << "'>" << s.label << "</text>\n";
  }
  os << "</svg>\n";
}

}  // namespace bevrecon
