#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ensemblenet/data.hpp"
#include "ensemblenet/layers.hpp"
#include "ensemblenet/loss.hpp"

namespace enet {

class Model;

struct TrainConfig {
  int epochs = 80;
  int batch_size = 32;
  double base_lr = 0.01;
  std::vector<int> decay_epochs{40, 60};
  double decay_factor = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  double new_param_lr_multiplier = 10.0;
  LossReduction loss_reduction = LossReduction::kMean;
  std::uint64_t seed = 0;

  void validate() const;

  /// 10-epoch schedule for the synthetic desk dataset.
  static TrainConfig desk();
};

struct LearningRates {
  double pretrained;
  double new_params;
};

LearningRates lr_schedule(int epoch, const TrainConfig& cfg);

/// Unweighted sum of per-objective losses; `expected` is the objective count M.
double total_loss(std::span<const double> per_objective, int expected);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double mean_total_loss = 0.0;
  std::vector<double> objective_losses;
  double wall_seconds = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> records;

  /// CSV header: epoch,lr,mean_total_loss,loss_0..loss_{M-1},wall_seconds
  void write_csv(std::ostream& os, bool include_timing = true) const;
  void save_csv(const std::filesystem::path& path, bool include_timing = true) const;
  static TrainLog read_csv(std::istream& is);
};

/// Momentum SGD with decoupled learning-rate groups:
///   g = grad + wd * w (weights only);  v = m * v + g;  w -= lr * v
class Sgd {
 public:
  Sgd(std::vector<Parameter*> params, double momentum, double weight_decay);

  void step(const LearningRates& lr);
  void zero_grad();
  std::span<Parameter* const> parameters() const { return params_; }

  /// Whether weight decay is applied to `p` by this optimizer.
  bool decays(const Parameter& p) const { return weight_decay_ > 0.0 && p.decays(); }

 private:
  std::vector<Parameter*> params_;
  std::vector<Tensor> velocity_;
  double momentum_;
  double weight_decay_;
};

struct TrainOptions {
  AugmentConfig augment;
  /// Checkpoints are written here when non-empty.
  std::filesystem::path checkpoint_dir;
  /// Called after every epoch.
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  TrainLog log;
  std::vector<std::filesystem::path> checkpoints;
};

/// Build a normalized B x 3 x H x W batch tensor from images already at the
/// model's input size.
Tensor make_batch(std::span<const Image* const> images, const std::array<float, 3>& mean,
                  const std::array<float, 3>& stddev);

TrainResult train(Model& model, const Dataset& dataset, const TrainConfig& cfg,
                  const TrainOptions& options);

}  // namespace enet
