#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ensemblenet/data.hpp"
#include "ensemblenet/evaluation.hpp"
#include "ensemblenet/model.hpp"
#include "ensemblenet/training.hpp"

namespace enet {

struct DataConfig {
  Layout layout = Layout::kSynthetic;
  /// Dataset directory. For the synthetic layout an empty root means "render
  /// from `synthetic` in memory".
  std::string root;
  SyntheticSpec synthetic;
};

struct LandscapeConfig {
  int grid = 21;
  double radius = 1.0;
  std::uint64_t seed_delta = 1;
  std::uint64_t seed_eta = 2;
  int max_query = 200;
  int max_gallery = 500;
};

/// Everything a CLI run needs. Serialized as JSON; every field can be set
/// from the command line with a dotted key such as `model.num_branches=3`.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  AugmentConfig augment;
  RerankParams rerank;
  DataConfig data;
  LandscapeConfig landscape;
  std::vector<int> ranks{1, 5, 10, 20};
  int extract_batch = 32;
  std::string out = "runs/default";
  std::uint64_t seed = 0;

  /// Desk-scale defaults: synthetic 20-id data, small backbone, 10 epochs.
  static RunConfig desk();

  std::string to_json() const;
  /// Keys missing from `text` keep their desk() values.
  static RunConfig from_json(std::string_view text);
  static RunConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  /// Apply `key=value` overrides; keys are dotted JSON paths. Values are
  /// parsed as JSON when possible and as plain strings otherwise.
  void apply_overrides(const std::vector<std::string>& overrides);

  void validate() const;
};

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(std::string_view text);

}  // namespace enet
