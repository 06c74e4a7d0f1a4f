#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ensemblenet/data.hpp"
#include "ensemblenet/model.hpp"

namespace enet {

using FloatMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct DimTag {
  std::string label;
  std::uint64_t offset = 0;
  std::uint64_t length = 0;

  bool operator==(const DimTag&) const = default;
};

/// Row-per-image descriptors plus identity/camera metadata.
struct FeatureMatrix {
  FloatMatrix vectors;
  std::vector<int> person_ids;
  std::vector<int> camera_ids;
  std::vector<DimTag> dim_tags;

  std::size_t rows() const { return static_cast<std::size_t>(vectors.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(vectors.cols()); }

  /// Throws ValidationError when the fields are inconsistent.
  void validate() const;

  /// Columns covered by dim_tags[segment].
  FeatureMatrix segment(std::size_t segment) const;

  /// Subset of rows, preserving order.
  FeatureMatrix select_rows(std::span<const std::size_t> rows) const;
};

/// Flip-averaged descriptor: mean of the concatenated part descriptors of
/// the image and its mirror. The model must have `image` at its input size.
Vector extract_descriptor(Model& model, const Image& image);

struct ExtractOptions {
  int batch_size = 32;
  std::string label = "model";
};

FeatureMatrix extract_all(Model& model, std::span<const Sample> samples,
                          const ExtractOptions& options = {});

/// Horizontal concatenation of aligned feature matrices.
FeatureMatrix concat_ensemble(std::span<const FeatureMatrix> parts);

/// Binary "ENSF" file, little-endian:
///   "ENSF", u32 version=1, u64 n_rows, u64 dim, u32 n_segments,
///   per segment (u16 label length, label bytes, u64 offset, u64 length),
///   n_rows i32 person ids, n_rows i32 camera ids, row-major f32 vectors.
void save_features(const FeatureMatrix& fm, const std::filesystem::path& path);
FeatureMatrix load_features(const std::filesystem::path& path);

}  // namespace enet
