#include "fmm/svg.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace fmm::svg {

namespace {

constexpr double kWidth = 640;
constexpr double kHeight = 400;
constexpr double kLeft = 60;
constexpr double kRight = 170;
constexpr double kTop = 40;
constexpr double kBottom = 50;

const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                         "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Frame {
  const Axes& axes;
  double px(double x) const { return kLeft + x * (kWidth - kLeft - kRight); }
  double py(double y) const {
    const double span = axes.y_max - axes.y_min;
    const double t = span > 0 ? (y - axes.y_min) / span : 0.0;
    return kHeight - kBottom - std::clamp(t, 0.0, 1.0) * (kHeight - kTop - kBottom);
  }
};

void open(std::ostringstream& o, const Axes& a) {
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << num(kWidth / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << escape(a.title)
    << "</text>\n";
  Frame f{a};
  o << "<line x1=\"" << num(kLeft) << "\" y1=\"" << num(f.py(a.y_min)) << "\" x2=\"" << num(f.px(1.0)) << "\" y2=\""
    << num(f.py(a.y_min)) << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << num(kLeft) << "\" y1=\"" << num(f.py(a.y_min)) << "\" x2=\"" << num(kLeft) << "\" y2=\""
    << num(f.py(a.y_max)) << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double y = a.y_min + (a.y_max - a.y_min) * i / 4.0;
    o << "<text x=\"" << num(kLeft - 6) << "\" y=\"" << num(f.py(y) + 4) << "\" text-anchor=\"end\">" << num(y)
      << "</text>\n";
  }
  o << "<text x=\"" << num(f.px(0.5)) << "\" y=\"" << num(kHeight - 12) << "\" text-anchor=\"middle\">"
    << escape(a.x_label) << "</text>\n";
  o << "<text x=\"16\" y=\"" << num(kHeight / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << num(kHeight / 2) << ")\">" << escape(a.y_label) << "</text>\n";
  if (a.has_reference) {
    o << "<line x1=\"" << num(kLeft) << "\" y1=\"" << num(f.py(a.reference)) << "\" x2=\"" << num(f.px(1.0))
      << "\" y2=\"" << num(f.py(a.reference)) << "\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n";
  }
}

}  // namespace

std::string line_plot(const Axes& axes, const std::vector<Series>& series) {
  std::ostringstream o;
  open(o, axes);
  Frame f{axes};
  for (int i = 0; i <= 10; i += 2) {
    o << "<text x=\"" << num(f.px(i / 10.0)) << "\" y=\"" << num(kHeight - kBottom + 16)
      << "\" text-anchor=\"middle\">" << i * 10 << "%</text>\n";
  }
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kColors[s % std::size(kColors)];
    const auto& sr = series[s];
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < sr.x.size() && i < sr.y.size(); ++i) {
      o << (i ? " " : "") << num(f.px(sr.x[i])) << "," << num(f.py(sr.y[i]));
    }
    o << "\"/>\n";
    for (std::size_t i = 0; i < sr.x.size() && i < sr.y.size(); ++i) {
      o << "<circle cx=\"" << num(f.px(sr.x[i])) << "\" cy=\"" << num(f.py(sr.y[i])) << "\" r=\"2.5\" fill=\""
        << color << "\"/>\n";
    }
    const double ly = kTop + 10 + 18.0 * static_cast<double>(s);
    o << "<line x1=\"" << num(kWidth - kRight + 10) << "\" y1=\"" << num(ly) << "\" x2=\""
      << num(kWidth - kRight + 30) << "\" y2=\"" << num(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << num(kWidth - kRight + 35) << "\" y=\"" << num(ly + 4) << "\">" << escape(sr.label)
      << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::string bar_plot(const Axes& axes, const std::vector<Bar>& bars) {
  std::ostringstream o;
  open(o, axes);
  Frame f{axes};
  const double n = static_cast<double>(std::max<std::size_t>(bars.size(), 1));
  const double slot = 1.0 / n;
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const auto& b = bars[i];
    const double x0 = f.px(slot * (static_cast<double>(i) + 0.15));
    const double x1 = f.px(slot * (static_cast<double>(i) + 0.85));
    const double top = f.py(b.value);
    const double base = f.py(std::max(axes.y_min, 0.0));
    o << "<rect x=\"" << num(x0) << "\" y=\"" << num(std::min(top, base)) << "\" width=\"" << num(x1 - x0)
      << "\" height=\"" << num(std::abs(base - top)) << "\" fill=\"" << kColors[i % std::size(kColors)]
      << "\"/>\n";
    if (b.lo <= b.hi) {
      const double xm = (x0 + x1) / 2;
      o << "<line x1=\"" << num(xm) << "\" y1=\"" << num(f.py(b.lo)) << "\" x2=\"" << num(xm) << "\" y2=\""
        << num(f.py(b.hi)) << "\" stroke=\"black\"/>\n";
    }
    o << "<text x=\"" << num((x0 + x1) / 2) << "\" y=\"" << num(kHeight - kBottom + 16)
      << "\" text-anchor=\"middle\" font-size=\"10\">" << escape(b.label) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace fmm::svg
