#pragma once

#include <string>
#include <vector>

namespace fmm::svg {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct Axes {
  std::string title;
  std::string x_label;
  std::string y_label;
  double y_min = 0.0;
  double y_max = 1.0;
  /// Optional dashed horizontal reference line (e.g. alpha).
  bool has_reference = false;
  double reference = 0.0;
};

/// Line plot with markers. x is assumed to span [0, 1].
std::string line_plot(const Axes& axes, const std::vector<Series>& series);

struct Bar {
  std::string label;
  double value = 0.0;
  /// Optional whisker, drawn when lo <= hi.
  double lo = 1.0;
  double hi = 0.0;
};

std::string bar_plot(const Axes& axes, const std::vector<Bar>& bars);

}  // namespace fmm::svg
