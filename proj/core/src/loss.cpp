#include "ensemblenet/loss.hpp"

#include <cmath>
#include <string>

#include "ensemblenet/error.hpp"

namespace enet {

namespace {

void check_labels(const Matrix& logits, std::span<const int> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != logits.rows()) {
    throw ShapeError("softmax loss: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(logits.rows()) + " rows");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= logits.cols()) {
      throw ValidationError("softmax loss: label " + std::to_string(labels[i]) + " at row " +
                            std::to_string(i) + " outside [0, " + std::to_string(logits.cols()) +
                            ")");
    }
  }
}

}  // namespace

double softmax_log_loss(const Matrix& logits, std::span<const int> labels) {
  check_labels(logits, labels);
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double shift = logits.row(i).maxCoeff();
    const double log_sum = std::log((logits.row(i).array() - shift).exp().sum());
    total += log_sum - (logits(i, labels[i]) - shift);
  }
  return total;
}

Matrix softmax_log_loss_grad(const Matrix& logits, std::span<const int> labels) {
  check_labels(logits, labels);
  Matrix grad(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double shift = logits.row(i).maxCoeff();
    grad.row(i) = (logits.row(i).array() - shift).exp();
    grad.row(i) /= grad.row(i).sum();
    grad(i, labels[i]) -= 1.0;
  }
  return grad;
}

}  // namespace enet
