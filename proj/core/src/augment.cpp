#include <cmath>
#include <random>

#include "ensemblenet/data.hpp"
#include "ensemblenet/error.hpp"

namespace enet {

void AugmentConfig::validate() const {
  if (target_height <= 0 || target_width <= 0) {
    throw ValidationError("augment target size must be positive");
  }
  if (erase_probability < 0.0 || erase_probability > 1.0) {
    throw ValidationError("erase_probability must lie in [0, 1]");
  }
  if (flip_probability < 0.0 || flip_probability > 1.0) {
    throw ValidationError("flip_probability must lie in [0, 1]");
  }
  if (erase_area_range.first <= 0.0 || erase_area_range.first > erase_area_range.second ||
      erase_area_range.second > 1.0) {
    throw ValidationError("erase_area_range must satisfy 0 < lo <= hi <= 1");
  }
  if (erase_aspect_range.first <= 0.0 || erase_aspect_range.first > erase_aspect_range.second) {
    throw ValidationError("erase_aspect_range must satisfy 0 < lo <= hi");
  }
  if (pad_pixels < 0) throw ValidationError("pad_pixels must be >= 0");
}

namespace {

bool coin(Rng& rng, double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p; }

int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

void random_erase(Image& img, const AugmentConfig& cfg, Rng& rng) {
  const double area = static_cast<double>(img.height()) * img.width();
  std::uniform_real_distribution<double> area_dist(cfg.erase_area_range.first,
                                                   cfg.erase_area_range.second);
  std::uniform_real_distribution<double> aspect_dist(cfg.erase_aspect_range.first,
                                                     cfg.erase_aspect_range.second);
  for (int attempt = 0; attempt < 100; ++attempt) {
    const double target = area_dist(rng) * area;
    const double aspect = aspect_dist(rng);
    const int h = static_cast<int>(std::lround(std::sqrt(target * aspect)));
    const int w = static_cast<int>(std::lround(std::sqrt(target / aspect)));
    if (h < 1 || w < 1 || h >= img.height() || w >= img.width()) continue;
    const int top = uniform_int(rng, 0, img.height() - h);
    const int left = uniform_int(rng, 0, img.width() - w);
    for (int y = top; y < top + h; ++y) {
      for (int x = left; x < left + w; ++x) {
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = cfg.erase_fill[c];
      }
    }
    return;
  }
}

}  // namespace

Image augment(const Image& image, const AugmentConfig& cfg, Rng& rng) {
  if (image.empty()) throw ValidationError("cannot augment an empty image");
  Image out = resize_bilinear(image, cfg.target_height, cfg.target_width);

  if (cfg.crop_enabled && cfg.pad_pixels > 0) {
    const Image padded = pad_image(out, cfg.pad_pixels);
    const int top = uniform_int(rng, 0, 2 * cfg.pad_pixels);
    const int left = uniform_int(rng, 0, 2 * cfg.pad_pixels);
    out = crop(padded, top, left, cfg.target_height, cfg.target_width);
  }
  if (cfg.flip_enabled && coin(rng, cfg.flip_probability)) out = flip_horizontal(out);
  if (cfg.erase_enabled && coin(rng, cfg.erase_probability)) random_erase(out, cfg, rng);
  return out;
}

AugmentConfig fill_erase_from_data(const AugmentConfig& cfg, const Dataset& data) {
  AugmentConfig out = cfg;
  if (cfg.erase_fill_from_data && !data.train.empty()) out.erase_fill = channel_mean(data.train);
  return out;
}

Image augment(const Sample& sample, const AugmentConfig& cfg, Rng& rng) {
  return augment(sample.image, cfg, rng);
}

}  // namespace enet
