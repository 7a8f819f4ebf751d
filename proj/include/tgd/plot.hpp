#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace tgd::plot {

struct Series {
  std::string name;
  std::vector<double> x, y;
};

struct LinePlot {
  std::string title, xlabel, ylabel;
  std::vector<Series> series;
  std::optional<double> hline;
  std::string hline_label;
  std::optional<double> vline;
  std::string vline_label;
};

struct BarPlot {
  std::string title, ylabel;
  std::vector<std::string> categories;   // x-axis groups
  std::vector<std::string> series_names; // one bar per series within a group
  std::vector<std::vector<double>> values; // [series][category]
};

std::string render_svg(const LinePlot& p);
std::string render_svg(const BarPlot& p);
void write_svg(const std::filesystem::path& path, const std::string& svg);

}  // namespace tgd::plot
