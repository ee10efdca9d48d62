#pragma once

// Self-contained SVG line charts for reports (no scripts, no external fonts).

#include <string>
#include <vector>

namespace nfid::cli {

struct ChartSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  bool markers = false;
};

struct ChartOptions {
  std::string title;
  std::string x_label;
  std::string y_label;
  int width = 720;
  int height = 360;
  std::size_t max_points = 2000;  // longer series are decimated for drawing
};

std::string line_chart(const std::vector<ChartSeries>& series, const ChartOptions& opts);

}  // namespace nfid::cli
