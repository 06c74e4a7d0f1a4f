#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace enet {

/// Interleaved H x W x 3 image with pixel values in [0, 1].
class Image {
 public:
  Image() = default;
  Image(int height, int width, float fill = 0.0f)
      : height_(height), width_(width), data_(static_cast<std::size_t>(height) * width * 3, fill) {}

  int height() const { return height_; }
  int width() const { return width_; }
  static constexpr int channels() { return 3; }
  bool empty() const { return data_.empty(); }

  float& at(int y, int x, int c) { return data_[(static_cast<std::size_t>(y) * width_ + x) * 3 + c]; }
  float at(int y, int x, int c) const {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * 3 + c];
  }

  std::span<float> pixels() { return data_; }
  std::span<const float> pixels() const { return data_; }

  bool operator==(const Image&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<float> data_;
};

Image flip_horizontal(const Image& img);

/// Bilinear resize with half-pixel centers.
Image resize_bilinear(const Image& img, int height, int width);

/// Zero-pad every border by `pad` pixels.
Image pad_image(const Image& img, int pad);

Image crop(const Image& img, int top, int left, int height, int width);

/// Decode a raster file into RGB [0, 1]. Throws IoError on failure.
Image read_image(const std::string& path);

void write_image(const std::string& path, const Image& img);

}  // namespace enet
