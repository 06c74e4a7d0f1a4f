#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ensemblenet/image.hpp"

namespace enet {

inline constexpr int kJunkId = -1;
inline constexpr int kDistractorId = 0;

enum class Split { kTrain, kQuery, kGallery };

std::string_view to_string(Split s);
Split split_from_string(std::string_view s);

struct Sample {
  Image image;
  /// Original identity: >= 1 real person, 0 distractor, -1 junk.
  int person_id = 0;
  int camera_id = 1;
  std::string path;
  /// Contiguous training label in [0, C); -1 outside the train split.
  int label = -1;
};

struct Dataset {
  std::vector<Sample> train;
  std::vector<Sample> query;
  std::vector<Sample> gallery;
  int num_train_classes = 0;
};

enum class Layout { kMarketStyle, kSynthetic };

Layout layout_from_string(std::string_view s);
std::string_view to_string(Layout l);

struct ParsedName {
  int person_id;
  int camera_id;
};

/// Parse `<pid>_c<cam>...` Market1501 style names.
ParsedName parse_market_filename(std::string_view name);

/// Relabel train person ids to 0..C-1 in ascending order of original id and
/// set num_train_classes. Junk samples are rejected.
void relabel_train(Dataset& ds);

Dataset load_dataset(const std::filesystem::path& root, Layout layout);

struct SyntheticSpec {
  int num_ids = 20;
  int images_per_id = 8;
  int num_cams = 3;
  int height = 64;
  int width = 32;
  std::uint64_t seed = 7;
};

/// One manifest row. `seed` drives per-image nuisance (pose jitter, noise);
/// identity appearance is fixed by (dataset seed, id) and camera look by
/// (dataset seed, camera).
struct ManifestRow {
  int person_id;
  int camera_id;
  Split split;
  std::uint64_t seed;
};

struct SyntheticManifest {
  SyntheticSpec spec;
  std::vector<ManifestRow> rows;
};

SyntheticManifest make_synthetic_manifest(const SyntheticSpec& spec);
Dataset render_synthetic(const SyntheticManifest& manifest);

Dataset make_synthetic_dataset(int num_ids, int images_per_id, int num_cams,
                               std::pair<int, int> size, std::uint64_t seed);
Dataset make_synthetic_dataset(const SyntheticSpec& spec);

inline constexpr const char* kManifestName = "manifest.csv";

void write_manifest(const std::filesystem::path& file, const SyntheticManifest& m);
SyntheticManifest read_manifest(const std::filesystem::path& file);

struct AugmentConfig {
  int target_height = 384;
  int target_width = 128;
  bool crop_enabled = true;
  bool flip_enabled = true;
  bool erase_enabled = true;
  double flip_probability = 0.5;
  double erase_probability = 0.5;
  std::pair<double, double> erase_area_range{0.02, 0.4};
  std::pair<double, double> erase_aspect_range{0.3, 3.33};
  /// Fill value for erased pixels, in [0, 1] pixel space.
  std::array<float, 3> erase_fill{0.485f, 0.456f, 0.406f};
  /// Replace erase_fill with the per-channel mean of the train split before
  /// training (see fill_erase_from_data).
  bool erase_fill_from_data = true;
  int pad_pixels = 10;

  void validate() const;
};

using Rng = std::mt19937_64;

/// resize -> pad + random crop -> random horizontal flip -> random erasing.
Image augment(const Sample& sample, const AugmentConfig& cfg, Rng& rng);
Image augment(const Image& image, const AugmentConfig& cfg, Rng& rng);

/// Per-channel mean of all pixels in `samples`.
std::array<float, 3> channel_mean(const std::vector<Sample>& samples);

/// Copy of `cfg` with erase_fill set to the train-split channel mean when
/// erase_fill_from_data is on.
AugmentConfig fill_erase_from_data(const AugmentConfig& cfg, const Dataset& data);

}  // namespace enet
