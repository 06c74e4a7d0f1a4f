#pragma once

#include <span>

#include "ensemblenet/tensor.hpp"

namespace enet {

enum class LossReduction { kSum, kMean };

/// Sum over the batch of -log softmax(logits_i)[label_i], max-shifted.
double softmax_log_loss(const Matrix& logits, std::span<const int> labels);

/// Gradient of softmax_log_loss w.r.t. the logits (sum reduction).
Matrix softmax_log_loss_grad(const Matrix& logits, std::span<const int> labels);

}  // namespace enet
