#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ensemblenet/landscape.hpp"

namespace enet {

/// Colour-mapped heatmap of a landscape grid with a marker at the origin.
void write_heatmap(const LandscapeGrid& grid, const std::filesystem::path& path,
                   const std::string& title);

struct Series {
  std::string name;
  std::vector<double> values;
};

/// Simple line chart over categorical x labels; values in [0, 1].
void write_line_plot(const std::vector<std::string>& x_labels, const std::vector<Series>& series,
                     const std::filesystem::path& path, const std::string& title);

/// Grouped bar chart over categorical x labels; values in [0, 1].
void write_bar_plot(const std::vector<std::string>& x_labels, const std::vector<Series>& series,
                    const std::filesystem::path& path, const std::string& title);

}  // namespace enet
