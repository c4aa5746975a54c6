#pragma once

#include <string>
#include <vector>

namespace entlab::plot {

struct Series {
  std::string name;
  std::vector<double> y;    // NaN points are skipped
  std::vector<double> err;  // optional symmetric error bars, same length as y
};

// Points are placed at evenly spaced category positions labeled `x_labels`.
struct LineChart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<std::string> x_labels;
  std::vector<Series> series;
  double y_min = 0.0;
  double y_max = 1.0;
};

struct BarChart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<std::string> x_labels;
  std::vector<Series> series;  // grouped bars
};

std::string render(const LineChart& chart);
std::string render(const BarChart& chart);

}  // namespace entlab::plot
