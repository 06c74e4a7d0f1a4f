#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ensemblenet/layers.hpp"
#include "ensemblenet/tensor.hpp"

namespace enet {

enum class Pooling { kGapOnly, kAap };
enum class BackboneKind { kPaperScale, kDeskScale };
enum class DescriptorTap { kPreRelu, kPostRelu };

std::string_view to_string(Pooling p);
std::string_view to_string(BackboneKind b);
std::string_view to_string(DescriptorTap t);
Pooling pooling_from_string(std::string_view s);
BackboneKind backbone_from_string(std::string_view s);
DescriptorTap descriptor_tap_from_string(std::string_view s);

struct ModelConfig {
  int num_branches = 3;
  int reduce_dim = 256;
  int last_stride = 1;
  Pooling pooling = Pooling::kAap;
  int num_classes = 751;
  BackboneKind backbone = BackboneKind::kPaperScale;
  bool pretrained = false;
  double leaky_slope = 0.1;
  DescriptorTap descriptor_tap = DescriptorTap::kPreRelu;
  int input_height = 384;
  int input_width = 128;
  std::array<float, 3> pixel_mean{0.485f, 0.456f, 0.406f};
  std::array<float, 3> pixel_std{0.229f, 0.224f, 0.225f};

  void validate() const;

  /// Desk-scale defaults: small residual backbone on 64x32 inputs.
  static ModelConfig desk(int num_classes);
};

/// Number of part vectors (and objectives): n(n+1)/2 with AAP, n with GAP.
int num_part_vectors(int n_branches, Pooling pooling);

/// Row range [begin, end) of vertical bin `part` out of `n_parts` over `height` rows.
std::pair<int, int> vertical_bin(int part, int n_parts, int height);

/// Split a B x K x H x W map into n_parts vertical bins, averaging each bin
/// over its rows and all columns. Returns n_parts matrices of shape B x K.
std::vector<Matrix> adaptive_vertical_pool(const Tensor& fmap, int n_parts);

/// Gradient of adaptive_vertical_pool w.r.t. its input map.
Tensor adaptive_vertical_pool_backward(std::span<const Matrix> part_grads, const Shape& fmap_shape);

/// 1x1 conv -> batch norm -> leaky rectifier on pooled part vectors.
class ReductionHead {
 public:
  ReductionHead(const std::string& name, int in_channels, int out_dim, double leaky_slope);

  struct Output {
    Matrix pre_relu;
    Matrix post_relu;
  };

  Output forward(const Matrix& parts, Mode mode);
  Matrix backward(const Matrix& grad_post_relu);

  int in_channels() const { return conv_.in_channels(); }
  int out_dim() const { return conv_.out_channels(); }
  Conv2d& conv() { return conv_; }
  BatchNorm& norm() { return norm_; }
  void collect_parameters(std::vector<Parameter*>& out);
  void collect_buffers(std::vector<Buffer*>& out);

 private:
  Conv2d conv_;
  BatchNorm norm_;
  LeakyRelu relu_;
};

/// Linear identity classifier (1x1 conv with bias) on one part descriptor.
class ClassifierHead {
 public:
  ClassifierHead(const std::string& name, int in_dim, int num_classes);

  Matrix forward(const Matrix& features, Mode mode);
  Matrix backward(const Matrix& grad_logits);

  Parameter& weight() { return conv_.weight(); }
  Parameter& bias() { return *conv_.bias(); }
  void collect_parameters(std::vector<Parameter*>& out);

 private:
  Conv2d conv_;
};

struct PartInfo {
  int branch;
  int index_in_branch;
};

struct PartDescriptorSet {
  std::vector<Vector> parts;
  std::vector<int> branch_of_part;
  std::vector<int> index_in_branch;
};

struct ForwardOutput {
  std::vector<Matrix> pre_relu;
  std::vector<Matrix> post_relu;
  std::vector<Matrix> logits;
  Shape branch_map_shape{};

  const std::vector<Matrix>& descriptors(DescriptorTap tap) const {
    return tap == DescriptorTap::kPreRelu ? pre_relu : post_relu;
  }
};

/// Shared trunk, N replicated final stages, per-part reduction and
/// classifier heads. Parts are ordered branch-major, then by bin index.
class Model {
 public:
  explicit Model(ModelConfig cfg);
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ModelConfig& config() const { return cfg_; }
  int num_parts() const { return static_cast<int>(layout_.size()); }
  const std::vector<PartInfo>& part_layout() const { return layout_; }
  int descriptor_dim() const { return cfg_.reduce_dim * num_parts(); }
  int backbone_channels() const { return backbone_channels_; }

  /// Batch of B images shaped B x 3 x input_height x input_width.
  ForwardOutput forward(const Tensor& batch, Mode mode);
  /// Back-propagate gradients w.r.t. each logit matrix of the last kTrain forward.
  void backward(std::span<const Matrix> logit_grads);

  PartDescriptorSet part_descriptors(const ForwardOutput& out, int image) const;

  std::vector<Parameter*> parameters();
  std::vector<Buffer*> buffers();
  std::vector<Parameter*> trunk_parameters();
  std::vector<Parameter*> branch_parameters(int branch);
  std::vector<Parameter*> head_parameters(int part);
  void zero_grad();

  Sequential& trunk() { return *trunk_; }
  Sequential& branch(int b) { return *branches_.at(b); }
  ReductionHead& reduction(int part) { return *reductions_.at(part); }
  ClassifierHead& classifier(int part) { return *classifiers_.at(part); }

  /// Shape of one branch's output map for a single configured input.
  Shape branch_map_shape() const;

 private:
  ModelConfig cfg_;
  int backbone_channels_ = 0;
  std::vector<PartInfo> layout_;
  std::unique_ptr<Sequential> trunk_;
  std::vector<std::unique_ptr<Sequential>> branches_;
  std::vector<std::unique_ptr<ReductionHead>> reductions_;
  std::vector<std::unique_ptr<ClassifierHead>> classifiers_;
  std::vector<Shape> branch_shapes_;
};

Model build_model(const ModelConfig& cfg);

class Checkpoint;

/// He (fan-in) normal initialization for every conv/linear weight, zero
/// biases and BN shift, unit BN scale. All branches receive identical
/// final-stage weights: copied from `pretrained` when given, otherwise drawn
/// once and replicated.
void init_model(Model& model, std::uint64_t seed, const Checkpoint* pretrained = nullptr);

/// Parameter name prefix used for final-stage layers in backbone checkpoints.
inline constexpr std::string_view kFinalStagePrefix = "final_stage";

/// Export trunk plus branch 0 (renamed to `final_stage.*`) as a backbone
/// checkpoint suitable for init_model.
Checkpoint export_backbone(Model& model);

std::size_t count_parameters(std::span<Parameter* const> params);

}  // namespace enet
