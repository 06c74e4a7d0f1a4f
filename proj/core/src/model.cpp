#include "ensemblenet/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "ensemblenet/checkpoint.hpp"
#include "ensemblenet/config.hpp"
#include "ensemblenet/error.hpp"
#include "ensemblenet/loss.hpp"

namespace enet {

std::string_view to_string(Pooling p) { return p == Pooling::kAap ? "AAP" : "GAP_only"; }

std::string_view to_string(BackboneKind b) {
  return b == BackboneKind::kPaperScale ? "paper_scale" : "desk_scale";
}

std::string_view to_string(DescriptorTap t) {
  return t == DescriptorTap::kPreRelu ? "pre_relu" : "post_relu";
}

Pooling pooling_from_string(std::string_view s) {
  if (s == "AAP" || s == "aap") return Pooling::kAap;
  if (s == "GAP_only" || s == "gap_only" || s == "GAP" || s == "gap") return Pooling::kGapOnly;
  throw ConfigError("unknown pooling '" + std::string(s) + "'");
}

BackboneKind backbone_from_string(std::string_view s) {
  if (s == "paper_scale" || s == "resnet50") return BackboneKind::kPaperScale;
  if (s == "desk_scale") return BackboneKind::kDeskScale;
  throw ConfigError("unsupported backbone '" + std::string(s) + "'");
}

DescriptorTap descriptor_tap_from_string(std::string_view s) {
  if (s == "pre_relu") return DescriptorTap::kPreRelu;
  if (s == "post_relu") return DescriptorTap::kPostRelu;
  throw ConfigError("unknown descriptor tap '" + std::string(s) + "'");
}

void ModelConfig::validate() const {
  if (num_branches < 1) throw ValidationError("num_branches must be >= 1");
  if (reduce_dim < 1) throw ValidationError("reduce_dim must be >= 1");
  if (last_stride != 1 && last_stride != 2) throw ConfigError("last_stride must be 1 or 2");
  if (num_classes < 1) throw ValidationError("num_classes must be >= 1");
  if (input_height < 1 || input_width < 1) throw ValidationError("input size must be positive");
  if (leaky_slope < 0.0) throw ValidationError("leaky_slope must be >= 0");
  for (float s : pixel_std) {
    if (!(s > 0.0f)) throw ValidationError("pixel_std entries must be positive");
  }
}

ModelConfig ModelConfig::desk(int num_classes) {
  ModelConfig cfg;
  cfg.backbone = BackboneKind::kDeskScale;
  cfg.num_classes = num_classes;
  cfg.input_height = 64;
  cfg.input_width = 32;
  return cfg;
}

int num_part_vectors(int n_branches, Pooling pooling) {
  if (n_branches < 1) throw ValidationError("number of branches must be >= 1");
  return pooling == Pooling::kAap ? n_branches * (n_branches + 1) / 2 : n_branches;
}

// ---------------------------------------------------------------------------
// Adaptive vertical pooling

std::pair<int, int> vertical_bin(int part, int n_parts, int height) {
  const int begin = static_cast<int>(static_cast<long long>(part) * height / n_parts);
  const int end = static_cast<int>((static_cast<long long>(part + 1) * height + n_parts - 1) / n_parts);
  return {begin, end};
}

std::vector<Matrix> adaptive_vertical_pool(const Tensor& fmap, int n_parts) {
  const Shape s = fmap.shape();
  if (n_parts < 1 || n_parts > s.h) {
    throw ValidationError("adaptive pooling needs 1 <= n_parts <= height (n_parts=" +
                          std::to_string(n_parts) + ", height=" + std::to_string(s.h) + ")");
  }
  std::vector<Matrix> parts(n_parts, Matrix::Zero(s.n, s.c));
  for (int p = 0; p < n_parts; ++p) {
    const auto [begin, end] = vertical_bin(p, n_parts, s.h);
    const double inv = 1.0 / (static_cast<double>(end - begin) * s.w);
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        double sum = 0.0;
        for (int y = begin; y < end; ++y) {
          for (int x = 0; x < s.w; ++x) sum += fmap.at(n, c, y, x);
        }
        parts[p](n, c) = sum * inv;
      }
    }
  }
  return parts;
}

Tensor adaptive_vertical_pool_backward(std::span<const Matrix> part_grads, const Shape& fmap_shape) {
  const int n_parts = static_cast<int>(part_grads.size());
  Tensor dx(fmap_shape);
  for (int p = 0; p < n_parts; ++p) {
    const auto [begin, end] = vertical_bin(p, n_parts, fmap_shape.h);
    const double inv = 1.0 / (static_cast<double>(end - begin) * fmap_shape.w);
    for (int n = 0; n < fmap_shape.n; ++n) {
      for (int c = 0; c < fmap_shape.c; ++c) {
        const double g = part_grads[p](n, c) * inv;
        for (int y = begin; y < end; ++y) {
          for (int x = 0; x < fmap_shape.w; ++x) dx.at(n, c, y, x) += g;
        }
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Heads

namespace {

Tensor matrix_to_tensor(const Matrix& m) {
  Tensor t({static_cast<int>(m.rows()), static_cast<int>(m.cols()), 1, 1});
  t.as_matrix() = m;
  return t;
}

}  // namespace

ReductionHead::ReductionHead(const std::string& name, int in_channels, int out_dim,
                             double leaky_slope)
    : conv_(name + ".conv", in_channels, out_dim, 1, 1, 0, false, ParamGroup::kNew),
      norm_(name + ".bn", out_dim, ParamGroup::kNew),
      relu_(leaky_slope) {}

ReductionHead::Output ReductionHead::forward(const Matrix& parts, Mode mode) {
  if (parts.cols() != conv_.in_channels()) {
    throw ShapeError("reduction head expects " + std::to_string(conv_.in_channels()) +
                     " channels, got " + std::to_string(parts.cols()));
  }
  const Tensor pre = norm_.forward(conv_.forward(matrix_to_tensor(parts), mode), mode);
  const Tensor post = relu_.forward(pre, mode);
  return {pre.as_matrix(), post.as_matrix()};
}

Matrix ReductionHead::backward(const Matrix& grad_post_relu) {
  return conv_.backward(norm_.backward(relu_.backward(matrix_to_tensor(grad_post_relu))))
      .as_matrix();
}

void ReductionHead::collect_parameters(std::vector<Parameter*>& out) {
  conv_.collect_parameters(out);
  norm_.collect_parameters(out);
}

void ReductionHead::collect_buffers(std::vector<Buffer*>& out) { norm_.collect_buffers(out); }

ClassifierHead::ClassifierHead(const std::string& name, int in_dim, int num_classes)
    : conv_(name, in_dim, num_classes, 1, 1, 0, true, ParamGroup::kNew) {}

Matrix ClassifierHead::forward(const Matrix& features, Mode mode) {
  return conv_.forward(matrix_to_tensor(features), mode).as_matrix();
}

Matrix ClassifierHead::backward(const Matrix& grad_logits) {
  return conv_.backward(matrix_to_tensor(grad_logits)).as_matrix();
}

void ClassifierHead::collect_parameters(std::vector<Parameter*>& out) {
  conv_.collect_parameters(out);
}

// ---------------------------------------------------------------------------
// Model

namespace {

struct BackboneLayout {
  BlockKind block;
  int stem_channels;
  int stem_kernel;
  bool stem_pool;
  std::vector<int> widths;  // per stage
  std::vector<int> blocks;  // per stage
  int expansion;
};

BackboneLayout layout_for(BackboneKind kind) {
  if (kind == BackboneKind::kPaperScale) {
    return {BlockKind::kBottleneck, 64, 7, true, {64, 128, 256, 512}, {3, 4, 6, 3}, 4};
  }
  return {BlockKind::kBasic, 16, 3, false, {16, 32, 64, 128}, {1, 1, 1, 1}, 1};
}

void add_stage(Sequential& seq, const std::string& prefix, const BackboneLayout& l, int stage,
               int& channels, int stride) {
  for (int b = 0; b < l.blocks[stage]; ++b) {
    auto block = std::make_unique<ResidualBlock>(
        prefix + ".layer" + std::to_string(stage + 1) + "." + std::to_string(b), l.block, channels,
        l.widths[stage], b == 0 ? stride : 1, ParamGroup::kBackbone);
    channels = block->out_channels();
    seq.add(std::move(block));
  }
}

}  // namespace

Model::Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const BackboneLayout l = layout_for(cfg_.backbone);

  trunk_ = std::make_unique<Sequential>();
  const int stem_stride = 2;
  trunk_->add(std::make_unique<Conv2d>("trunk.conv1", 3, l.stem_channels, l.stem_kernel,
                                       stem_stride, l.stem_kernel / 2, false,
                                       ParamGroup::kBackbone));
  trunk_->add(std::make_unique<BatchNorm>("trunk.bn1", l.stem_channels, ParamGroup::kBackbone));
  trunk_->add(std::make_unique<LeakyRelu>(0.0));
  if (l.stem_pool) trunk_->add(std::make_unique<MaxPool2d>(3, 2, 1));

  int channels = l.stem_channels;
  for (int stage = 0; stage < 3; ++stage) {
    add_stage(*trunk_, "trunk", l, stage, channels, stage == 0 ? 1 : 2);
  }
  const int trunk_channels = channels;

  for (int b = 0; b < cfg_.num_branches; ++b) {
    auto branch = std::make_unique<Sequential>();
    int ch = trunk_channels;
    add_stage(*branch, "branch" + std::to_string(b), l, 3, ch, cfg_.last_stride);
    backbone_channels_ = ch;
    branches_.push_back(std::move(branch));
  }

  const Shape map = branch_map_shape();
  for (int b = 0; b < cfg_.num_branches; ++b) {
    const int n_parts = cfg_.pooling == Pooling::kAap ? b + 1 : 1;
    if (n_parts > map.h) {
      throw ValidationError("branch " + std::to_string(b) + " needs " + std::to_string(n_parts) +
                            " vertical parts but the final map has only " +
                            std::to_string(map.h) + " rows");
    }
    for (int p = 0; p < n_parts; ++p) {
      const int j = static_cast<int>(layout_.size());
      layout_.push_back({b, p});
      const std::string head = "head" + std::to_string(j);
      reductions_.push_back(std::make_unique<ReductionHead>(head + ".reduce", backbone_channels_,
                                                            cfg_.reduce_dim, cfg_.leaky_slope));
      classifiers_.push_back(
          std::make_unique<ClassifierHead>(head + ".classifier", cfg_.reduce_dim, cfg_.num_classes));
    }
  }
}

Shape Model::branch_map_shape() const {
  const Shape in{1, 3, cfg_.input_height, cfg_.input_width};
  return branches_.front()->output_shape(trunk_->output_shape(in));
}

ForwardOutput Model::forward(const Tensor& batch, Mode mode) {
  const Shape s = batch.shape();
  if (s.c != 3 || s.h != cfg_.input_height || s.w != cfg_.input_width) {
    throw ShapeError("model expects input [B,3," + std::to_string(cfg_.input_height) + "," +
                     std::to_string(cfg_.input_width) + "], got " + to_string(s));
  }
  ForwardOutput out;
  const Tensor shared = trunk_->forward(batch, mode);
  branch_shapes_.clear();
  for (int b = 0; b < cfg_.num_branches; ++b) {
    const Tensor fmap = branches_[b]->forward(shared, mode);
    out.branch_map_shape = fmap.shape();
    branch_shapes_.push_back(fmap.shape());
    const int n_parts = cfg_.pooling == Pooling::kAap ? b + 1 : 1;
    for (const Matrix& part : adaptive_vertical_pool(fmap, n_parts)) {
      const int j = static_cast<int>(out.logits.size());
      auto red = reductions_[j]->forward(part, mode);
      out.logits.push_back(classifiers_[j]->forward(red.post_relu, mode));
      out.pre_relu.push_back(std::move(red.pre_relu));
      out.post_relu.push_back(std::move(red.post_relu));
    }
  }
  return out;
}

void Model::backward(std::span<const Matrix> logit_grads) {
  if (static_cast<int>(logit_grads.size()) != num_parts()) {
    throw ValidationError("expected " + std::to_string(num_parts()) + " logit gradients, got " +
                          std::to_string(logit_grads.size()));
  }
  if (branch_shapes_.size() != branches_.size()) {
    throw ValidationError("backward() requires a preceding training forward()");
  }
  Tensor shared_grad;
  int j = 0;
  for (int b = 0; b < cfg_.num_branches; ++b) {
    const int n_parts = cfg_.pooling == Pooling::kAap ? b + 1 : 1;
    std::vector<Matrix> part_grads;
    for (int p = 0; p < n_parts; ++p, ++j) {
      part_grads.push_back(reductions_[j]->backward(classifiers_[j]->backward(logit_grads[j])));
    }
    const Tensor fmap_grad = adaptive_vertical_pool_backward(part_grads, branch_shapes_[b]);
    Tensor g = branches_[b]->backward(fmap_grad);
    if (shared_grad.empty()) {
      shared_grad = std::move(g);
    } else {
      shared_grad += g;
    }
  }
  trunk_->backward(shared_grad);
}

PartDescriptorSet Model::part_descriptors(const ForwardOutput& out, int image) const {
  PartDescriptorSet set;
  const auto& desc = out.descriptors(cfg_.descriptor_tap);
  for (int j = 0; j < num_parts(); ++j) {
    set.parts.push_back(desc[j].row(image).transpose());
    set.branch_of_part.push_back(layout_[j].branch);
    set.index_in_branch.push_back(layout_[j].index_in_branch);
  }
  return set;
}

std::vector<Parameter*> Model::trunk_parameters() {
  std::vector<Parameter*> out;
  trunk_->collect_parameters(out);
  return out;
}

std::vector<Parameter*> Model::branch_parameters(int branch) {
  std::vector<Parameter*> out;
  branches_.at(branch)->collect_parameters(out);
  return out;
}

std::vector<Parameter*> Model::head_parameters(int part) {
  std::vector<Parameter*> out;
  reductions_.at(part)->collect_parameters(out);
  classifiers_.at(part)->collect_parameters(out);
  return out;
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out = trunk_parameters();
  for (int b = 0; b < cfg_.num_branches; ++b) branches_[b]->collect_parameters(out);
  for (int j = 0; j < num_parts(); ++j) {
    reductions_[j]->collect_parameters(out);
    classifiers_[j]->collect_parameters(out);
  }
  return out;
}

std::vector<Buffer*> Model::buffers() {
  std::vector<Buffer*> out;
  trunk_->collect_buffers(out);
  for (auto& b : branches_) b->collect_buffers(out);
  for (auto& r : reductions_) r->collect_buffers(out);
  return out;
}

void Model::zero_grad() {
  for (Parameter* p : parameters()) p->zero_grad();
}

Model build_model(const ModelConfig& cfg) { return Model(cfg); }

std::size_t count_parameters(std::span<Parameter* const> params) {
  std::size_t n = 0;
  for (const Parameter* p : params) n += p->value.size();
  return n;
}

// ---------------------------------------------------------------------------
// Initialization

namespace {

void he_normal(Parameter& p, Rng& rng) {
  const Shape s = p.value.shape();
  const double fan_in = static_cast<double>(s.c) * s.h * s.w;
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (double& v : p.value.values()) v = dist(rng);
}

void init_parameter(Parameter& p, Rng& rng) {
  switch (p.role) {
    case ParamRole::kWeight: he_normal(p, rng); break;
    case ParamRole::kNormScale: p.value.fill(1.0); break;
    case ParamRole::kNormShift:
    case ParamRole::kBias: p.value.fill(0.0); break;
  }
}

void reset_buffer(Buffer& b) {
  const bool is_var = b.name.ends_with("running_var");
  b.value.fill(is_var ? 1.0 : 0.0);
}

std::string final_stage_name(const std::string& branch_name) {
  return std::string(kFinalStagePrefix) + branch_name.substr(branch_name.find('.'));
}

template <typename T>
void copy_from(const Checkpoint& ckpt, T& target, const std::string& key,
               std::vector<std::string>& problems) {
  const CheckpointEntry* e = ckpt.find(key);
  if (e == nullptr) {
    problems.push_back(key + " (missing)");
    return;
  }
  const Shape s = target.value.shape();
  const std::vector<std::uint64_t> want{static_cast<std::uint64_t>(s.n),
                                        static_cast<std::uint64_t>(s.c),
                                        static_cast<std::uint64_t>(s.h),
                                        static_cast<std::uint64_t>(s.w)};
  if (e->dims != want || e->data.size() != target.value.size()) {
    problems.push_back(key + " (shape mismatch)");
    return;
  }
  std::copy(e->data.begin(), e->data.end(), target.value.data());
}

}  // namespace

void init_model(Model& model, std::uint64_t seed, const Checkpoint* pretrained) {
  Rng rng(seed);
  const int n_branches = model.config().num_branches;

  std::vector<Parameter*> trunk;
  std::vector<Buffer*> trunk_buffers;
  model.trunk().collect_parameters(trunk);
  model.trunk().collect_buffers(trunk_buffers);
  std::vector<Parameter*> first;
  std::vector<Buffer*> first_buffers;
  model.branch(0).collect_parameters(first);
  model.branch(0).collect_buffers(first_buffers);

  if (pretrained != nullptr) {
    std::vector<std::string> problems;
    for (Parameter* p : trunk) copy_from(*pretrained, *p, p->name, problems);
    for (Buffer* b : trunk_buffers) copy_from(*pretrained, *b, b->name, problems);
    for (Parameter* p : first) copy_from(*pretrained, *p, final_stage_name(p->name), problems);
    for (Buffer* b : first_buffers) copy_from(*pretrained, *b, final_stage_name(b->name), problems);
    if (!problems.empty()) {
      std::string msg = "pretrained weights do not match the backbone:";
      for (const auto& s : problems) msg += "\n  " + s;
      throw LoadError(msg);
    }
  } else {
    for (Parameter* p : trunk) init_parameter(*p, rng);
    for (Buffer* b : trunk_buffers) reset_buffer(*b);
    for (Parameter* p : first) init_parameter(*p, rng);
    for (Buffer* b : first_buffers) reset_buffer(*b);
  }

  for (int b = 1; b < n_branches; ++b) {
    std::vector<Parameter*> params;
    std::vector<Buffer*> bufs;
    model.branch(b).collect_parameters(params);
    model.branch(b).collect_buffers(bufs);
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = first[i]->value;
    for (std::size_t i = 0; i < bufs.size(); ++i) bufs[i]->value = first_buffers[i]->value;
  }

  for (int j = 0; j < model.num_parts(); ++j) {
    for (Parameter* p : model.head_parameters(j)) init_parameter(*p, rng);
    std::vector<Buffer*> bufs;
    model.reduction(j).collect_buffers(bufs);
    for (Buffer* b : bufs) reset_buffer(*b);
  }
  model.zero_grad();
}

Checkpoint export_backbone(Model& model) {
  Checkpoint ckpt;
  ckpt.metadata = model_config_to_json(model.config());
  auto add = [&](const std::string& name, EntryKind kind, const Tensor& t) {
    const Shape s = t.shape();
    ckpt.entries.push_back({name, kind,
                            {static_cast<std::uint64_t>(s.n), static_cast<std::uint64_t>(s.c),
                             static_cast<std::uint64_t>(s.h), static_cast<std::uint64_t>(s.w)},
                            std::vector<double>(t.values().begin(), t.values().end())});
  };
  std::vector<Parameter*> params;
  std::vector<Buffer*> bufs;
  model.trunk().collect_parameters(params);
  model.trunk().collect_buffers(bufs);
  for (Parameter* p : params) add(p->name, EntryKind::kParameter, p->value);
  for (Buffer* b : bufs) add(b->name, EntryKind::kBuffer, b->value);
  params.clear();
  bufs.clear();
  model.branch(0).collect_parameters(params);
  model.branch(0).collect_buffers(bufs);
  for (Parameter* p : params) add(final_stage_name(p->name), EntryKind::kParameter, p->value);
  for (Buffer* b : bufs) add(final_stage_name(b->name), EntryKind::kBuffer, b->value);
  return ckpt;
}

}  // namespace enet
