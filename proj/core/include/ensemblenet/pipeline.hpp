#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ensemblenet/config.hpp"
#include "ensemblenet/evaluation.hpp"
#include "ensemblenet/features.hpp"
#include "ensemblenet/model.hpp"
#include "ensemblenet/training.hpp"

namespace enet {

/// Resolve the dataset described by `cfg`. A synthetic layout with a root
/// reads `<root>/manifest.csv`; without a root it renders in memory.
Dataset load_data(const DataConfig& cfg);

/// Bilinearly resize every image that is not already height x width.
void resize_images(Dataset& data, int height, int width);

struct RunOutcome {
  Model model;
  TrainResult train;
  FeatureMatrix query;
  FeatureMatrix gallery;
  EvalReport report;
};

/// Build, initialize (seed = cfg.seed), train, extract and evaluate. Query and
/// gallery images must already be at the model input size.
RunOutcome train_and_evaluate(const RunConfig& cfg, const Dataset& data,
                              const std::filesystem::path& checkpoint_dir = {},
                              const std::function<void(const EpochRecord&)>& on_epoch = {});

/// Mean and variance (n - 1 denominator) of metrics over random r-subsets.
struct SubsetStats {
  int r = 0;
  int repeats = 0;
  double mean_map = 0.0;
  double var_map = 0.0;
  double mean_rank1 = 0.0;
  double var_rank1 = 0.0;
  std::vector<std::vector<int>> selections;

  bool operator==(const SubsetStats&) const = default;
};

/// For every r in `sizes`, draw `repeats` subsets of r distinct models
/// (sorted indices), concatenate their features and evaluate with cosine
/// distance. Draws for each r come from an RNG seeded with (seed, r).
std::vector<SubsetStats> ensemble_subsets(std::span<const FeatureMatrix> query,
                                          std::span<const FeatureMatrix> gallery,
                                          std::span<const int> sizes, int repeats,
                                          std::uint64_t seed,
                                          std::span<const int> ranks = kDefaultRanks);

void write_subset_csv(std::ostream& os, std::span<const SubsetStats> stats);
std::vector<SubsetStats> read_subset_csv(std::istream& is);

enum class SweepAxis { kStride, kBranches, kAap };

std::string_view to_string(SweepAxis a);
SweepAxis sweep_axis_from_string(std::string_view s);

/// Axis values: stride {1, 2}; branches and aap 1..6.
std::vector<int> default_sweep_points(SweepAxis axis);

/// `base` with the swept field set to `value` (GAP_only for the branches axis).
RunConfig sweep_config(const RunConfig& base, SweepAxis axis, int value);

struct SweepRow {
  int value = 0;
  int num_objectives = 0;
  EvalReport report;
  std::string status = "ok";
};

/// Header `<axis>,num_objectives,mAP,Rank<k>...,status`; failed rows carry
/// empty metric fields.
void write_sweep_csv(std::ostream& os, SweepAxis axis, std::span<const SweepRow> rows,
                     std::span<const int> ranks);
std::vector<SweepRow> read_sweep_csv(std::istream& is);

}  // namespace enet
