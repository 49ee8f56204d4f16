#pragma once

#include <string>
#include <vector>

namespace bevrecon {

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

/// Writes a simple line plot as a standalone SVG file.
void write_svg_plot(const std::string& path, const std::string& title,
                    const std::string& xlabel, const std::string& ylabel,
                    const std::vector<PlotSeries>& series, bool log_x = false,
                    bool log_y = false);

}  // namespace bevrecon
