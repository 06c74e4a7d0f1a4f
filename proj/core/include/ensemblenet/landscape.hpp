#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ensemblenet/data.hpp"
#include "ensemblenet/layers.hpp"

namespace enet {

class Model;

/// Perturbation direction aligned with Model::parameters().
struct Direction {
  std::vector<Tensor> tensors;
  std::uint64_t seed = 0;

  Direction operator-() const;
};

/// Gaussian direction rescaled filter by filter to the model's filter norms.
/// Filters are the output-channel slices of conv/linear weights; bias and
/// normalization parameters get a zero direction, and buffers are untouched.
Direction random_direction(Model& model, std::uint64_t seed);

enum class LandscapeMetric { kMap, kRank1 };

std::string_view to_string(LandscapeMetric m);

struct LandscapeGrid {
  std::vector<double> alphas;
  std::vector<double> betas;
  /// values(i, j) at (alphas[i], betas[j]).
  Matrix values;
  LandscapeMetric metric = LandscapeMetric::kMap;
  std::vector<std::string> warnings;

  /// Area of the cells whose value is at least `fraction` of the center value.
  double area_within(double fraction) const;
  double center() const;

  /// Rows of `alpha,beta,value`.
  void write_csv(std::ostream& os) const;
  static LandscapeGrid read_csv(std::istream& is, LandscapeMetric metric);
};

/// n points symmetric around zero in [-radius, radius]; exact negation
/// symmetry (a[i] == -a[n-1-i]) and an exact 0 for odd n.
std::vector<double> symmetric_axis(int n, double radius);

struct EvalBundle {
  std::vector<Sample> query;
  std::vector<Sample> gallery;
  std::vector<int> ranks{1};
};

/// Cap the bundle to the first `max_query` / `max_gallery` samples.
EvalBundle make_eval_bundle(const Dataset& ds, std::size_t max_query = 200,
                            std::size_t max_gallery = 500);

struct SurfacePair {
  LandscapeGrid map;
  LandscapeGrid rank1;
};

/// Evaluate mAP and rank-1 at theta + a * delta + b * eta for every grid
/// point. Parameters are restored bitwise before returning.
SurfacePair performance_surfaces(Model& model, const Direction& delta, const Direction& eta,
                                 std::span<const double> alphas, std::span<const double> betas,
                                 const EvalBundle& bundle);

LandscapeGrid performance_surface(Model& model, const Direction& delta, const Direction& eta,
                                  std::span<const double> alphas, std::span<const double> betas,
                                  const EvalBundle& bundle, LandscapeMetric metric);

}  // namespace enet
