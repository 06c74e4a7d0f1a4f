#pragma once

#include <memory>
#include <string>
#include <vector>

#include "ensemblenet/tensor.hpp"

namespace enet {

enum class Mode { kTrain, kEval };

/// What a parameter does; drives weight decay and filter normalization.
enum class ParamRole { kWeight, kNormScale, kNormShift, kBias };

/// Learning-rate group: backbone layers (pretrained-capable) or layers that
/// only exist in the re-ID head.
enum class ParamGroup { kBackbone, kNew };

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  ParamRole role = ParamRole::kWeight;
  ParamGroup group = ParamGroup::kBackbone;

  bool decays() const { return role == ParamRole::kWeight; }
  Tensor& ensure_grad();
  void zero_grad();
};

/// Non-trainable state such as batch-norm running statistics.
struct Buffer {
  std::string name;
  Tensor value;
};

/// A differentiable layer. forward() in kTrain mode caches what backward()
/// needs; kEval forward leaves the layer untouched. backward() accumulates
/// parameter gradients and returns the gradient w.r.t. the input.
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, Mode mode) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual Shape output_shape(const Shape& in) const = 0;
  virtual void collect_parameters(std::vector<Parameter*>& /*out*/) {}
  virtual void collect_buffers(std::vector<Buffer*>& /*out*/) {}
};

class Conv2d final : public Layer {
 public:
  Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride, int pad,
         bool bias, ParamGroup group);

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  Shape output_shape(const Shape& in) const override;
  void collect_parameters(std::vector<Parameter*>& out) override;

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  Parameter& weight() { return weight_; }
  Parameter* bias() { return has_bias_ ? &bias_ : nullptr; }

 private:
  void check_input(const Shape& in) const;

  int in_, out_, kernel_, stride_, pad_;
  bool has_bias_;
  Parameter weight_;
  Parameter bias_;
  Tensor input_;
};

class BatchNorm final : public Layer {
 public:
  BatchNorm(std::string name, int channels, ParamGroup group, double momentum = 0.1,
            double eps = 1e-5);

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  Shape output_shape(const Shape& in) const override { return in; }
  void collect_parameters(std::vector<Parameter*>& out) override;
  void collect_buffers(std::vector<Buffer*>& out) override;

  Parameter& scale() { return gamma_; }
  Parameter& shift() { return beta_; }
  Buffer& running_mean() { return running_mean_; }
  Buffer& running_var() { return running_var_; }

 private:
  int channels_;
  double momentum_, eps_;
  Parameter gamma_, beta_;
  Buffer running_mean_, running_var_;
  Tensor xhat_;
  std::vector<double> inv_std_;
};

/// max(x, slope * x); slope 0 is a plain rectifier.
class LeakyRelu final : public Layer {
 public:
  explicit LeakyRelu(double slope = 0.0) : slope_(slope) {}
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  Shape output_shape(const Shape& in) const override { return in; }

 private:
  double slope_;
  Tensor input_;
};

class MaxPool2d final : public Layer {
 public:
  MaxPool2d(int kernel, int stride, int pad) : kernel_(kernel), stride_(stride), pad_(pad) {}
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  Shape output_shape(const Shape& in) const override;

 private:
  int kernel_, stride_, pad_;
  Shape in_shape_{};
  std::vector<std::size_t> argmax_;
};

enum class BlockKind { kBasic, kBottleneck };

/// Residual block. Basic: 3x3 -> 3x3. Bottleneck: 1x1 -> 3x3 (strided) -> 1x1
/// with 4x expansion. A projection shortcut is added when shape changes.
class ResidualBlock final : public Layer {
 public:
  ResidualBlock(const std::string& name, BlockKind kind, int in_channels, int width, int stride,
                ParamGroup group);

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  Shape output_shape(const Shape& in) const override;
  void collect_parameters(std::vector<Parameter*>& out) override;
  void collect_buffers(std::vector<Buffer*>& out) override;

  int out_channels() const { return out_channels_; }

 private:
  int out_channels_;
  std::vector<std::unique_ptr<Layer>> main_;
  std::vector<std::unique_ptr<Layer>> shortcut_;
  LeakyRelu final_relu_{0.0};
};

class Sequential final : public Layer {
 public:
  Sequential() = default;
  void add(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }
  std::size_t size() const { return layers_.size(); }

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  Shape output_shape(const Shape& in) const override;
  void collect_parameters(std::vector<Parameter*>& out) override;
  void collect_buffers(std::vector<Buffer*>& out) override;

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

}  // namespace enet
