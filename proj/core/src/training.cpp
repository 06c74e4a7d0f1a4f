#include "ensemblenet/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>

#include "ensemblenet/checkpoint.hpp"
#include "ensemblenet/csv.hpp"
#include "ensemblenet/error.hpp"
#include "ensemblenet/model.hpp"

namespace enet {

void TrainConfig::validate() const {
  if (epochs < 1) throw ValidationError("epochs must be >= 1");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (!(base_lr > 0.0)) throw ValidationError("base_lr must be positive");
  if (!(decay_factor > 0.0)) throw ValidationError("decay_factor must be positive");
  if (!(new_param_lr_multiplier > 0.0)) {
    throw ValidationError("new_param_lr_multiplier must be positive");
  }
  if (momentum < 0.0 || momentum >= 1.0) throw ValidationError("momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw ValidationError("weight_decay must be >= 0");
  for (std::size_t i = 0; i < decay_epochs.size(); ++i) {
    if (decay_epochs[i] <= 0 || decay_epochs[i] >= epochs) {
      throw ValidationError("decay epoch " + std::to_string(decay_epochs[i]) +
                            " outside (0, epochs)");
    }
    if (i > 0 && decay_epochs[i] <= decay_epochs[i - 1]) {
      throw ValidationError("decay_epochs must be strictly increasing");
    }
  }
}

TrainConfig TrainConfig::desk() {
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.batch_size = 16;
  cfg.decay_epochs = {7, 9};
  return cfg;
}

LearningRates lr_schedule(int epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.epochs) {
    throw ValidationError("epoch " + std::to_string(epoch) + " outside [0, " +
                          std::to_string(cfg.epochs) + ")");
  }
  double lr = cfg.base_lr;
  for (int d : cfg.decay_epochs) {
    if (epoch >= d) lr *= cfg.decay_factor;
  }
  return {lr, lr * cfg.new_param_lr_multiplier};
}

double total_loss(std::span<const double> per_objective, int expected) {
  if (static_cast<int>(per_objective.size()) != expected) {
    throw ValidationError("expected " + std::to_string(expected) + " objective losses, got " +
                          std::to_string(per_objective.size()));
  }
  return std::accumulate(per_objective.begin(), per_objective.end(), 0.0);
}

// ---------------------------------------------------------------------------
// TrainLog

void TrainLog::write_csv(std::ostream& os, bool include_timing) const {
  const std::size_t m = records.empty() ? 0 : records.front().objective_losses.size();
  os << "epoch,lr,mean_total_loss";
  for (std::size_t j = 0; j < m; ++j) os << ",loss_" << j;
  if (include_timing) os << ",wall_seconds";
  os << '\n';
  for (const auto& r : records) {
    os << r.epoch << ',' << csv::format(r.lr) << ',' << csv::format(r.mean_total_loss);
    for (double l : r.objective_losses) os << ',' << csv::format(l);
    if (include_timing) os << ',' << csv::format(r.wall_seconds);
    os << '\n';
  }
}

void TrainLog::save_csv(const std::filesystem::path& path, bool include_timing) const {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  write_csv(os, include_timing);
}

TrainLog TrainLog::read_csv(std::istream& is) {
  TrainLog log;
  std::vector<std::string> fields;
  if (!csv::next_row(is, fields) || fields.size() < 3 || fields[0] != "epoch") {
    throw ParseError("train log: missing header");
  }
  const bool timing = fields.back() == "wall_seconds";
  const std::size_t m = fields.size() - 3 - (timing ? 1 : 0);
  const std::size_t width = fields.size();
  while (csv::next_row(is, fields)) {
    if (fields.size() != width) throw ParseError("train log: ragged row");
    EpochRecord r;
    r.epoch = static_cast<int>(csv::parse_int(fields[0]));
    r.lr = csv::parse_double(fields[1]);
    r.mean_total_loss = csv::parse_double(fields[2]);
    for (std::size_t j = 0; j < m; ++j) r.objective_losses.push_back(csv::parse_double(fields[3 + j]));
    if (timing) r.wall_seconds = csv::parse_double(fields.back());
    log.records.push_back(std::move(r));
  }
  return log;
}

// ---------------------------------------------------------------------------
// Optimizer

Sgd::Sgd(std::vector<Parameter*> params, double momentum, double weight_decay)
    : params_(std::move(params)), velocity_(params_.size()), momentum_(momentum),
      weight_decay_(weight_decay) {}

void Sgd::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

void Sgd::step(const LearningRates& lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    if (p.grad.shape() != p.value.shape()) continue;
    Tensor& v = velocity_[i];
    if (v.shape() != p.value.shape()) v.resize(p.value.shape());
    const double rate = p.group == ParamGroup::kNew ? lr.new_params : lr.pretrained;
    const bool decay = decays(p);
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      double g = p.grad[k];
      if (decay) g += weight_decay_ * p.value[k];
      v[k] = momentum_ * v[k] + g;
      p.value[k] -= rate * v[k];
    }
  }
}

// ---------------------------------------------------------------------------
// Training loop

Tensor make_batch(std::span<const Image* const> images, const std::array<float, 3>& mean,
                  const std::array<float, 3>& stddev) {
  if (images.empty()) throw ValidationError("empty batch");
  const int h = images.front()->height();
  const int w = images.front()->width();
  Tensor batch({static_cast<int>(images.size()), 3, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& img = *images[n];
    if (img.height() != h || img.width() != w) throw ShapeError("batch images differ in size");
    for (int c = 0; c < 3; ++c) {
      const double inv = 1.0 / stddev[c];
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          batch.at(static_cast<int>(n), c, y, x) = (img.at(y, x, c) - mean[c]) * inv;
        }
      }
    }
  }
  return batch;
}

TrainResult train(Model& model, const Dataset& dataset, const TrainConfig& cfg,
                  const TrainOptions& options) {
  cfg.validate();
  options.augment.validate();
  const ModelConfig& mc = model.config();
  if (dataset.num_train_classes != mc.num_classes) {
    throw ConfigError("dataset has " + std::to_string(dataset.num_train_classes) +
                      " train classes but the model was built for " +
                      std::to_string(mc.num_classes));
  }
  if (options.augment.target_height != mc.input_height ||
      options.augment.target_width != mc.input_width) {
    throw ConfigError("augmentation target size does not match the model input size");
  }
  if (dataset.train.empty()) throw ValidationError("empty train split");

  const int m = model.num_parts();
  Sgd opt(model.parameters(), cfg.momentum, cfg.weight_decay);
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(dataset.train.size());
  std::iota(order.begin(), order.end(), 0);

  if (!options.checkpoint_dir.empty()) std::filesystem::create_directories(options.checkpoint_dir);

  TrainResult result;
  const double n_samples = static_cast<double>(order.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const LearningRates lr = lr_schedule(epoch, cfg);
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<double> objective_sum(m, 0.0);
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      std::vector<Image> images;
      std::vector<int> labels;
      for (std::size_t k = begin; k < end; ++k) {
        const Sample& s = dataset.train[order[k]];
        images.push_back(augment(s, options.augment, rng));
        labels.push_back(s.label);
      }
      std::vector<const Image*> ptrs;
      for (const auto& img : images) ptrs.push_back(&img);
      const Tensor batch = make_batch(ptrs, mc.pixel_mean, mc.pixel_std);

      opt.zero_grad();
      const ForwardOutput out = model.forward(batch, Mode::kTrain);
      const double scale =
          cfg.loss_reduction == LossReduction::kMean ? 1.0 / static_cast<double>(labels.size()) : 1.0;
      std::vector<Matrix> grads;
      std::vector<double> losses;
      for (int j = 0; j < m; ++j) {
        const double loss = softmax_log_loss(out.logits[j], labels);
        if (!std::isfinite(loss)) {
          throw NumericError("non-finite loss for objective " + std::to_string(j) + " in epoch " +
                             std::to_string(epoch + 1));
        }
        objective_sum[j] += loss;
        losses.push_back(loss * scale);
        grads.push_back(softmax_log_loss_grad(out.logits[j], labels) * scale);
      }
      total_loss(losses, m);
      model.backward(grads);
      opt.step(lr);
    }

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.lr = lr.pretrained;
    for (double s : objective_sum) rec.objective_losses.push_back(s / n_samples);
    rec.mean_total_loss = total_loss(rec.objective_losses, m);
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.records.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);

    if (!options.checkpoint_dir.empty()) {
      const int next = epoch + 1;
      const bool at_decay = std::find(cfg.decay_epochs.begin(), cfg.decay_epochs.end(), next) !=
                            cfg.decay_epochs.end();
      if (at_decay || next == cfg.epochs) {
        const auto path = options.checkpoint_dir /
                          (next == cfg.epochs ? std::string("checkpoint_final.ensc")
                                              : "checkpoint_epoch_" + std::to_string(next) + ".ensc");
        make_checkpoint(model).save(path);
        result.checkpoints.push_back(path);
      }
    }
  }
  return result;
}

}  // namespace enet
