#include "ensemblenet/plot.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "ensemblenet/error.hpp"

namespace enet {

namespace {

constexpr int kFont = cv::FONT_HERSHEY_SIMPLEX;

const std::array<cv::Scalar, 8> kPalette{
    cv::Scalar(180, 119, 31), cv::Scalar(14, 127, 255), cv::Scalar(44, 160, 44),
    cv::Scalar(40, 39, 214),  cv::Scalar(189, 103, 148), cv::Scalar(75, 86, 140),
    cv::Scalar(194, 119, 227), cv::Scalar(127, 127, 127)};

void save(const cv::Mat& img, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), img)) throw IoError("cannot write image " + path.string());
}

void put(cv::Mat& img, const std::string& text, cv::Point at, double scale = 0.45) {
  cv::putText(img, text, at, kFont, scale, cv::Scalar(20, 20, 20), 1, cv::LINE_AA);
}

std::string fixed(double v, int digits = 2) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

struct Frame {
  cv::Rect area;
  int groups;
  double slot() const { return static_cast<double>(area.width) / groups; }
  int x_center(int i) const { return area.x + static_cast<int>((i + 0.5) * slot()); }
  int y_of(double v) const {
    return area.y + area.height - static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * area.height));
  }
};

Frame draw_axes(cv::Mat& img, const std::vector<std::string>& labels, const std::string& title) {
  Frame f{cv::Rect(60, 40, img.cols - 200, img.rows - 90), static_cast<int>(labels.size())};
  put(img, title, {60, 25}, 0.55);
  for (int t = 0; t <= 4; ++t) {
    const double v = t / 4.0;
    const int y = f.y_of(v);
    cv::line(img, {f.area.x, y}, {f.area.x + f.area.width, y}, cv::Scalar(225, 225, 225), 1);
    put(img, fixed(v), {15, y + 4}, 0.4);
  }
  cv::rectangle(img, f.area, cv::Scalar(60, 60, 60), 1);
  for (int i = 0; i < f.groups; ++i) {
    put(img, labels[i], {f.x_center(i) - 4 * static_cast<int>(labels[i].size()), f.area.y + f.area.height + 20}, 0.4);
  }
  return f;
}

void draw_legend(cv::Mat& img, const std::vector<Series>& series) {
  for (std::size_t s = 0; s < series.size(); ++s) {
    const int y = 55 + static_cast<int>(s) * 20;
    cv::rectangle(img, cv::Rect(img.cols - 130, y - 9, 12, 12), kPalette[s % kPalette.size()], cv::FILLED);
    put(img, series[s].name, {img.cols - 112, y + 2}, 0.4);
  }
}

void check_series(const std::vector<std::string>& labels, const std::vector<Series>& series) {
  if (labels.empty()) throw ValidationError("plot needs at least one x label");
  for (const Series& s : series) {
    if (s.values.size() != labels.size()) {
      throw ValidationError("series '" + s.name + "' does not match the number of x labels");
    }
  }
}

}  // namespace

void write_heatmap(const LandscapeGrid& grid, const std::filesystem::path& path,
                   const std::string& title) {
  const int rows = static_cast<int>(grid.values.rows());
  const int cols = static_cast<int>(grid.values.cols());
  if (rows == 0 || cols == 0) throw ValidationError("empty landscape grid");
  const int cell = std::max(8, 320 / std::max(rows, cols));

  // Rows of the image run over beta (top = largest), columns over alpha.
  cv::Mat levels(cols, rows, CV_8UC1);
  const double lo = grid.values.minCoeff();
  const double hi = grid.values.maxCoeff();
  const double span = hi > lo ? hi - lo : 1.0;
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      const double t = (grid.values(i, j) - lo) / span;
      levels.at<std::uint8_t>(cols - 1 - j, i) = static_cast<std::uint8_t>(std::lround(t * 255.0));
    }
  }
  cv::Mat big;
  cv::resize(levels, big, cv::Size(rows * cell, cols * cell), 0, 0, cv::INTER_NEAREST);
  cv::Mat colored;
  cv::applyColorMap(big, colored, cv::COLORMAP_VIRIDIS);

  cv::Mat canvas(colored.rows + 80, colored.cols + 160, CV_8UC3, cv::Scalar(255, 255, 255));
  colored.copyTo(canvas(cv::Rect(50, 40, colored.cols, colored.rows)));
  put(canvas, title, {10, 25}, 0.5);
  put(canvas, "alpha", {50 + colored.cols / 2 - 20, canvas.rows - 15}, 0.45);
  put(canvas, "beta", {5, 40 + colored.rows / 2}, 0.45);
  put(canvas, "min " + fixed(lo, 3), {colored.cols + 58, 60}, 0.4);
  put(canvas, "max " + fixed(hi, 3), {colored.cols + 58, 80}, 0.4);

  const auto ia = std::find(grid.alphas.begin(), grid.alphas.end(), 0.0);
  const auto ib = std::find(grid.betas.begin(), grid.betas.end(), 0.0);
  if (ia != grid.alphas.end() && ib != grid.betas.end()) {
    const int x = 50 + static_cast<int>(ia - grid.alphas.begin()) * cell + cell / 2;
    const int y = 40 + (cols - 1 - static_cast<int>(ib - grid.betas.begin())) * cell + cell / 2;
    cv::drawMarker(canvas, {x, y}, cv::Scalar(255, 255, 255), cv::MARKER_CROSS, cell / 2 + 4, 2);
  }
  save(canvas, path);
}

void write_line_plot(const std::vector<std::string>& x_labels, const std::vector<Series>& series,
                     const std::filesystem::path& path, const std::string& title) {
  check_series(x_labels, series);
  cv::Mat img(420, 720, CV_8UC3, cv::Scalar(255, 255, 255));
  const Frame f = draw_axes(img, x_labels, title);
  for (std::size_t s = 0; s < series.size(); ++s) {
    const cv::Scalar color = kPalette[s % kPalette.size()];
    for (int i = 0; i < f.groups; ++i) {
      const cv::Point p{f.x_center(i), f.y_of(series[s].values[i])};
      cv::circle(img, p, 3, color, cv::FILLED, cv::LINE_AA);
      if (i > 0) {
        cv::line(img, {f.x_center(i - 1), f.y_of(series[s].values[i - 1])}, p, color, 2, cv::LINE_AA);
      }
    }
  }
  draw_legend(img, series);
  save(img, path);
}

void write_bar_plot(const std::vector<std::string>& x_labels, const std::vector<Series>& series,
                    const std::filesystem::path& path, const std::string& title) {
  check_series(x_labels, series);
  cv::Mat img(420, 720, CV_8UC3, cv::Scalar(255, 255, 255));
  const Frame f = draw_axes(img, x_labels, title);
  const int n = std::max<int>(1, static_cast<int>(series.size()));
  const double bar = f.slot() * 0.8 / n;
  for (std::size_t s = 0; s < series.size(); ++s) {
    for (int i = 0; i < f.groups; ++i) {
      const int x0 = static_cast<int>(f.area.x + i * f.slot() + f.slot() * 0.1 + s * bar);
      const int y0 = f.y_of(series[s].values[i]);
      cv::rectangle(img, cv::Rect(x0, y0, std::max(1, static_cast<int>(bar) - 1), f.y_of(0.0) - y0),
                    kPalette[s % kPalette.size()], cv::FILLED);
    }
  }
  draw_legend(img, series);
  save(img, path);
}

}  // namespace enet
