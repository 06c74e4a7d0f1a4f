#include "ensemblenet/features.hpp"

#include "binary_io.hpp"
#include "ensemblenet/error.hpp"
#include "ensemblenet/training.hpp"

namespace enet {

void FeatureMatrix::validate() const {
  if (person_ids.size() != rows() || camera_ids.size() != rows()) {
    throw ValidationError("feature matrix metadata has " + std::to_string(person_ids.size()) +
                          "/" + std::to_string(camera_ids.size()) + " entries for " +
                          std::to_string(rows()) + " rows");
  }
  std::uint64_t expected_offset = 0;
  for (const auto& tag : dim_tags) {
    if (tag.offset != expected_offset) {
      throw ValidationError("feature segment '" + tag.label + "' is not contiguous");
    }
    expected_offset += tag.length;
  }
  if (expected_offset != dim()) {
    throw ValidationError("feature segments cover " + std::to_string(expected_offset) +
                          " columns, matrix has " + std::to_string(dim()));
  }
}

FeatureMatrix FeatureMatrix::segment(std::size_t segment) const {
  const DimTag& tag = dim_tags.at(segment);
  FeatureMatrix out;
  out.vectors = vectors.middleCols(static_cast<Eigen::Index>(tag.offset),
                                   static_cast<Eigen::Index>(tag.length));
  out.person_ids = person_ids;
  out.camera_ids = camera_ids;
  out.dim_tags = {{tag.label, 0, tag.length}};
  return out;
}

FeatureMatrix FeatureMatrix::select_rows(std::span<const std::size_t> rows_to_keep) const {
  FeatureMatrix out;
  out.vectors.resize(static_cast<Eigen::Index>(rows_to_keep.size()), vectors.cols());
  for (std::size_t i = 0; i < rows_to_keep.size(); ++i) {
    const auto r = rows_to_keep[i];
    if (r >= rows()) throw ValidationError("row index out of range");
    out.vectors.row(static_cast<Eigen::Index>(i)) = vectors.row(static_cast<Eigen::Index>(r));
    out.person_ids.push_back(person_ids[r]);
    out.camera_ids.push_back(camera_ids[r]);
  }
  out.dim_tags = dim_tags;
  return out;
}

namespace {

void check_input_size(const Model& model, const Image& image) {
  const auto& cfg = model.config();
  if (image.height() != cfg.input_height || image.width() != cfg.input_width) {
    throw ShapeError("descriptor extraction expects " + std::to_string(cfg.input_height) + "x" +
                     std::to_string(cfg.input_width) + " images, got " +
                     std::to_string(image.height()) + "x" + std::to_string(image.width()));
  }
}

/// Concatenated part descriptors, one row per image.
Matrix describe(Model& model, std::span<const Image* const> images) {
  const auto& cfg = model.config();
  const ForwardOutput out =
      model.forward(make_batch(images, cfg.pixel_mean, cfg.pixel_std), Mode::kEval);
  const auto& parts = out.descriptors(cfg.descriptor_tap);
  Matrix desc(static_cast<Eigen::Index>(images.size()), model.descriptor_dim());
  Eigen::Index col = 0;
  for (const Matrix& p : parts) {
    desc.middleCols(col, p.cols()) = p;
    col += p.cols();
  }
  return desc;
}

}  // namespace

Vector extract_descriptor(Model& model, const Image& image) {
  check_input_size(model, image);
  const Image flipped = flip_horizontal(image);
  const Image* original[] = {&image};
  const Image* mirror[] = {&flipped};
  const Matrix a = describe(model, original);
  const Matrix b = describe(model, mirror);
  return ((a.row(0) + b.row(0)) * 0.5).transpose();
}

FeatureMatrix extract_all(Model& model, std::span<const Sample> samples,
                          const ExtractOptions& options) {
  if (options.batch_size < 1) throw ValidationError("extraction batch size must be >= 1");
  const int dim = model.descriptor_dim();
  FeatureMatrix fm;
  fm.vectors.resize(static_cast<Eigen::Index>(samples.size()), dim);
  fm.dim_tags = {{options.label, 0, static_cast<std::uint64_t>(dim)}};

  for (std::size_t begin = 0; begin < samples.size(); begin += options.batch_size) {
    const std::size_t end = std::min(samples.size(), begin + options.batch_size);
    std::vector<Image> flipped;
    std::vector<const Image*> originals;
    for (std::size_t i = begin; i < end; ++i) {
      check_input_size(model, samples[i].image);
      originals.push_back(&samples[i].image);
      flipped.push_back(flip_horizontal(samples[i].image));
    }
    std::vector<const Image*> mirrors;
    for (const auto& img : flipped) mirrors.push_back(&img);
    const Matrix a = describe(model, originals);
    const Matrix b = describe(model, mirrors);
    fm.vectors.middleRows(static_cast<Eigen::Index>(begin), a.rows()) =
        ((a + b) * 0.5).cast<float>();
  }
  for (const auto& s : samples) {
    fm.person_ids.push_back(s.person_id);
    fm.camera_ids.push_back(s.camera_id);
  }
  return fm;
}

FeatureMatrix concat_ensemble(std::span<const FeatureMatrix> parts) {
  if (parts.empty()) throw ValidationError("concat_ensemble needs at least one feature matrix");
  const FeatureMatrix& first = parts.front();
  first.validate();
  std::size_t total = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const FeatureMatrix& p = parts[k];
    p.validate();
    if (p.rows() != first.rows()) {
      throw AlignmentError("feature matrix " + std::to_string(k) + " has " +
                           std::to_string(p.rows()) + " rows, expected " +
                           std::to_string(first.rows()));
    }
    for (std::size_t r = 0; r < p.rows(); ++r) {
      if (p.person_ids[r] != first.person_ids[r] || p.camera_ids[r] != first.camera_ids[r]) {
        throw AlignmentError("feature matrix " + std::to_string(k) +
                             " disagrees on identity/camera at row " + std::to_string(r));
      }
    }
    total += p.dim();
  }

  FeatureMatrix out;
  out.person_ids = first.person_ids;
  out.camera_ids = first.camera_ids;
  out.vectors.resize(static_cast<Eigen::Index>(first.rows()), static_cast<Eigen::Index>(total));
  std::uint64_t offset = 0;
  for (const auto& p : parts) {
    out.vectors.middleCols(static_cast<Eigen::Index>(offset), static_cast<Eigen::Index>(p.dim())) =
        p.vectors;
    for (const auto& tag : p.dim_tags) out.dim_tags.push_back({tag.label, offset + tag.offset, tag.length});
    offset += p.dim();
  }
  return out;
}

namespace {
constexpr char kMagic[4] = {'E', 'N', 'S', 'F'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void save_features(const FeatureMatrix& fm, const std::filesystem::path& path) {
  fm.validate();
  detail::BinaryWriter w(path);
  w.bytes(kMagic, 4);
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint64_t>(fm.rows());
  w.put<std::uint64_t>(fm.dim());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(fm.dim_tags.size()));
  for (const auto& tag : fm.dim_tags) {
    if (tag.label.size() > 0xffff) throw ValidationError("segment label too long");
    w.put<std::uint16_t>(static_cast<std::uint16_t>(tag.label.size()));
    w.bytes(tag.label.data(), tag.label.size());
    w.put<std::uint64_t>(tag.offset);
    w.put<std::uint64_t>(tag.length);
  }
  for (int id : fm.person_ids) w.put<std::int32_t>(id);
  for (int cam : fm.camera_ids) w.put<std::int32_t>(cam);
  w.bytes(fm.vectors.data(), fm.rows() * fm.dim() * sizeof(float));
  w.finish(path);
}

FeatureMatrix load_features(const std::filesystem::path& path) {
  detail::BinaryReader r(path);
  if (r.str(4) != std::string(kMagic, 4)) throw FormatError("bad feature file magic", 0);
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) {
    throw FormatError("unsupported feature file version " + std::to_string(version), 4);
  }
  const auto n_rows = r.get<std::uint64_t>();
  const auto dim = r.get<std::uint64_t>();
  const auto n_segments = r.get<std::uint32_t>();

  FeatureMatrix fm;
  for (std::uint32_t s = 0; s < n_segments; ++s) {
    DimTag tag;
    tag.label = r.str(r.get<std::uint16_t>());
    tag.offset = r.get<std::uint64_t>();
    tag.length = r.get<std::uint64_t>();
    fm.dim_tags.push_back(std::move(tag));
  }
  const auto meta_offset = r.offset();
  r.need(n_rows * 2 * sizeof(std::int32_t));
  for (std::uint64_t i = 0; i < n_rows; ++i) fm.person_ids.push_back(r.get<std::int32_t>());
  for (std::uint64_t i = 0; i < n_rows; ++i) fm.camera_ids.push_back(r.get<std::int32_t>());
  r.need(n_rows * dim * sizeof(float));
  fm.vectors.resize(static_cast<Eigen::Index>(n_rows), static_cast<Eigen::Index>(dim));
  r.read(fm.vectors.data(), n_rows * dim * sizeof(float));
  if (r.remaining() != 0) throw FormatError("trailing bytes after feature data", r.offset());
  try {
    fm.validate();
  } catch (const ValidationError& e) {
    throw FormatError(std::string("inconsistent feature file: ") + e.what(), meta_offset);
  }
  return fm;
}

}  // namespace enet
