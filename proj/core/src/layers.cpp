#include "ensemblenet/layers.hpp"

#include <cmath>
#include <limits>

#include "ensemblenet/error.hpp"

namespace enet {

std::string to_string(const Shape& s) {
  return "[" + std::to_string(s.n) + "," + std::to_string(s.c) + "," + std::to_string(s.h) + "," +
         std::to_string(s.w) + "]";
}

Tensor& Tensor::operator+=(const Tensor& other) {
  if (!(shape_ == other.shape_)) {
    throw ShapeError("tensor add: " + to_string(shape_) + " vs " + to_string(other.shape_));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Parameter::ensure_grad() {
  if (grad.shape() != value.shape()) grad.resize(value.shape());
  return grad;
}

void Parameter::zero_grad() {
  if (grad.shape() != value.shape()) {
    grad.resize(value.shape());
  } else {
    grad.fill(0.0);
  }
}

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride, int pad,
               bool bias, ParamGroup group)
    : in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride), pad_(pad),
      has_bias_(bias) {
  if (in_ < 1 || out_ < 1 || kernel_ < 1 || stride_ < 1 || pad_ < 0) {
    throw ValidationError("invalid conv geometry for " + name);
  }
  weight_.name = name + ".weight";
  weight_.value = Tensor({out_, in_, kernel_, kernel_});
  weight_.role = ParamRole::kWeight;
  weight_.group = group;
  if (has_bias_) {
    bias_.name = name + ".bias";
    bias_.value = Tensor({out_, 1, 1, 1});
    bias_.role = ParamRole::kBias;
    bias_.group = group;
  }
}

void Conv2d::check_input(const Shape& in) const {
  if (in.c != in_) {
    throw ShapeError(weight_.name + ": expected " + std::to_string(in_) + " input channels, got " +
                     std::to_string(in.c));
  }
  if (in.h + 2 * pad_ < kernel_ || in.w + 2 * pad_ < kernel_) {
    throw ShapeError(weight_.name + ": input " + to_string(in) + " smaller than kernel");
  }
}

Shape Conv2d::output_shape(const Shape& in) const {
  check_input(in);
  return {in.n, out_, (in.h + 2 * pad_ - kernel_) / stride_ + 1,
          (in.w + 2 * pad_ - kernel_) / stride_ + 1};
}

void Conv2d::collect_parameters(std::vector<Parameter*>& out) {
  out.push_back(&weight_);
  if (has_bias_) out.push_back(&bias_);
}

namespace {

void im2col(const double* img, int channels, int height, int width, int kernel, int stride,
            int pad, int out_h, int out_w, Matrix& cols) {
  cols.resize(static_cast<Eigen::Index>(channels) * kernel * kernel,
              static_cast<Eigen::Index>(out_h) * out_w);
  for (int c = 0; c < channels; ++c) {
    const double* plane = img + static_cast<std::size_t>(c) * height * width;
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        double* row = cols.row((c * kernel + ky) * kernel + kx).data();
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          double* dst = row + static_cast<std::size_t>(oy) * out_w;
          if (iy < 0 || iy >= height) {
            std::fill(dst, dst + out_w, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < width) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const Matrix& cols, int channels, int height, int width, int kernel, int stride,
            int pad, int out_h, int out_w, double* img) {
  for (int c = 0; c < channels; ++c) {
    double* plane = img + static_cast<std::size_t>(c) * height * width;
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        const double* row = cols.row((c * kernel + ky) * kernel + kx).data();
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= height) continue;
          const double* src = row + static_cast<std::size_t>(oy) * out_w;
          double* dst = plane + static_cast<std::size_t>(iy) * width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

using ConstMap = Eigen::Map<const Matrix>;
using MutMap = Eigen::Map<Matrix>;

}  // namespace

Tensor Conv2d::forward(const Tensor& x, Mode mode) {
  const Shape in = x.shape();
  const Shape os = output_shape(in);
  Tensor y(os);
  const ConstMap w(weight_.value.data(), out_, static_cast<Eigen::Index>(in_) * kernel_ * kernel_);

  if (kernel_ == 1 && in.h == 1 && in.w == 1) {
    // Pointwise conv on 1x1 maps is a plain batched linear map.
    y.as_matrix().noalias() = x.as_matrix() * w.transpose();
    if (has_bias_) {
      const Eigen::Map<const Eigen::RowVectorXd> b(bias_.value.data(), out_);
      y.as_matrix().rowwise() += b;
    }
  } else {
    Matrix cols;
    const bool pointwise = kernel_ == 1 && stride_ == 1 && pad_ == 0;
    for (int i = 0; i < in.n; ++i) {
      MutMap out(y.image(i), out_, static_cast<Eigen::Index>(os.plane()));
      if (pointwise) {
        out.noalias() = w * ConstMap(x.image(i), in_, static_cast<Eigen::Index>(in.plane()));
      } else {
        im2col(x.image(i), in_, in.h, in.w, kernel_, stride_, pad_, os.h, os.w, cols);
        out.noalias() = w * cols;
      }
      if (has_bias_) {
        for (int c = 0; c < out_; ++c) out.row(c).array() += bias_.value[c];
      }
    }
  }
  if (mode == Mode::kTrain) input_ = x;
  return y;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  const Shape in = input_.shape();
  const Shape os = output_shape(in);
  if (grad_out.shape() != os) throw ShapeError(weight_.name + ": gradient shape mismatch");
  const Eigen::Index patch = static_cast<Eigen::Index>(in_) * kernel_ * kernel_;
  const ConstMap w(weight_.value.data(), out_, patch);
  MutMap dw(weight_.ensure_grad().data(), out_, patch);
  Tensor dx(in);

  if (kernel_ == 1 && in.h == 1 && in.w == 1) {
    dw.noalias() += grad_out.as_matrix().transpose() * input_.as_matrix();
    dx.as_matrix().noalias() = grad_out.as_matrix() * w;
    if (has_bias_) {
      Eigen::Map<Eigen::RowVectorXd> db(bias_.ensure_grad().data(), out_);
      db += grad_out.as_matrix().colwise().sum();
    }
    return dx;
  }

  Matrix cols;
  Matrix dcols;
  const bool pointwise = kernel_ == 1 && stride_ == 1 && pad_ == 0;
  for (int i = 0; i < in.n; ++i) {
    const ConstMap g(grad_out.image(i), out_, static_cast<Eigen::Index>(os.plane()));
    if (pointwise) {
      const ConstMap xi(input_.image(i), in_, static_cast<Eigen::Index>(in.plane()));
      dw.noalias() += g * xi.transpose();
      MutMap(dx.image(i), in_, static_cast<Eigen::Index>(in.plane())).noalias() = w.transpose() * g;
    } else {
      im2col(input_.image(i), in_, in.h, in.w, kernel_, stride_, pad_, os.h, os.w, cols);
      dw.noalias() += g * cols.transpose();
      dcols.noalias() = w.transpose() * g;
      col2im(dcols, in_, in.h, in.w, kernel_, stride_, pad_, os.h, os.w, dx.image(i));
    }
    if (has_bias_) {
      Tensor& db = bias_.ensure_grad();
      for (int c = 0; c < out_; ++c) db[c] += g.row(c).sum();
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// BatchNorm

BatchNorm::BatchNorm(std::string name, int channels, ParamGroup group, double momentum, double eps)
    : channels_(channels), momentum_(momentum), eps_(eps) {
  gamma_.name = name + ".weight";
  gamma_.value = Tensor({channels, 1, 1, 1}, 1.0);
  gamma_.role = ParamRole::kNormScale;
  gamma_.group = group;
  beta_.name = name + ".bias";
  beta_.value = Tensor({channels, 1, 1, 1}, 0.0);
  beta_.role = ParamRole::kNormShift;
  beta_.group = group;
  running_mean_.name = name + ".running_mean";
  running_mean_.value = Tensor({channels, 1, 1, 1}, 0.0);
  running_var_.name = name + ".running_var";
  running_var_.value = Tensor({channels, 1, 1, 1}, 1.0);
}

void BatchNorm::collect_parameters(std::vector<Parameter*>& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
}

void BatchNorm::collect_buffers(std::vector<Buffer*>& out) {
  out.push_back(&running_mean_);
  out.push_back(&running_var_);
}

Tensor BatchNorm::forward(const Tensor& x, Mode mode) {
  const Shape s = x.shape();
  if (s.c != channels_) {
    throw ShapeError(gamma_.name + ": expected " + std::to_string(channels_) + " channels, got " +
                     std::to_string(s.c));
  }
  const std::size_t plane = s.plane();
  const double count = static_cast<double>(s.n) * static_cast<double>(plane);
  Tensor y(s);

  if (mode == Mode::kEval) {
    for (int c = 0; c < s.c; ++c) {
      const double inv = 1.0 / std::sqrt(running_var_.value[c] + eps_);
      const double a = gamma_.value[c] * inv;
      const double b = beta_.value[c] - running_mean_.value[c] * a;
      for (int n = 0; n < s.n; ++n) {
        const double* src = x.image(n) + c * plane;
        double* dst = y.image(n) + c * plane;
        for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] * a + b;
      }
    }
    return y;
  }

  xhat_.resize(s);
  inv_std_.assign(s.c, 0.0);
  for (int c = 0; c < s.c; ++c) {
    double mean = 0.0;
    for (int n = 0; n < s.n; ++n) {
      const double* src = x.image(n) + c * plane;
      for (std::size_t i = 0; i < plane; ++i) mean += src[i];
    }
    mean /= count;
    double var = 0.0;
    for (int n = 0; n < s.n; ++n) {
      const double* src = x.image(n) + c * plane;
      for (std::size_t i = 0; i < plane; ++i) var += (src[i] - mean) * (src[i] - mean);
    }
    var /= count;
    const double inv = 1.0 / std::sqrt(var + eps_);
    inv_std_[c] = inv;
    for (int n = 0; n < s.n; ++n) {
      const double* src = x.image(n) + c * plane;
      double* xh = xhat_.image(n) + c * plane;
      double* dst = y.image(n) + c * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        xh[i] = (src[i] - mean) * inv;
        dst[i] = gamma_.value[c] * xh[i] + beta_.value[c];
      }
    }
    const double unbiased = count > 1 ? var * count / (count - 1) : var;
    running_mean_.value[c] = (1 - momentum_) * running_mean_.value[c] + momentum_ * mean;
    running_var_.value[c] = (1 - momentum_) * running_var_.value[c] + momentum_ * unbiased;
  }
  return y;
}

Tensor BatchNorm::backward(const Tensor& grad_out) {
  const Shape s = xhat_.shape();
  if (grad_out.shape() != s) throw ShapeError(gamma_.name + ": gradient shape mismatch");
  const std::size_t plane = s.plane();
  const double count = static_cast<double>(s.n) * static_cast<double>(plane);
  Tensor& dgamma = gamma_.ensure_grad();
  Tensor& dbeta = beta_.ensure_grad();
  Tensor dx(s);
  for (int c = 0; c < s.c; ++c) {
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (int n = 0; n < s.n; ++n) {
      const double* g = grad_out.image(n) + c * plane;
      const double* xh = xhat_.image(n) + c * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy += g[i];
        sum_dy_xhat += g[i] * xh[i];
      }
    }
    dgamma[c] += sum_dy_xhat;
    dbeta[c] += sum_dy;
    const double k = gamma_.value[c] * inv_std_[c] / count;
    for (int n = 0; n < s.n; ++n) {
      const double* g = grad_out.image(n) + c * plane;
      const double* xh = xhat_.image(n) + c * plane;
      double* d = dx.image(n) + c * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        d[i] = k * (count * g[i] - sum_dy - xh[i] * sum_dy_xhat);
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Activations and pooling

Tensor LeakyRelu::forward(const Tensor& x, Mode mode) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : slope_ * x[i];
  if (mode == Mode::kTrain) input_ = x;
  return y;
}

Tensor LeakyRelu::backward(const Tensor& grad_out) {
  if (grad_out.shape() != input_.shape()) throw ShapeError("leaky relu: gradient shape mismatch");
  Tensor dx(grad_out.shape());
  for (std::size_t i = 0; i < dx.size(); ++i) {
    dx[i] = input_[i] > 0.0 ? grad_out[i] : slope_ * grad_out[i];
  }
  return dx;
}

Shape MaxPool2d::output_shape(const Shape& in) const {
  return {in.n, in.c, (in.h + 2 * pad_ - kernel_) / stride_ + 1,
          (in.w + 2 * pad_ - kernel_) / stride_ + 1};
}

Tensor MaxPool2d::forward(const Tensor& x, Mode mode) {
  const Shape in = x.shape();
  const Shape os = output_shape(in);
  Tensor y(os);
  std::vector<std::size_t> argmax(os.numel());
  std::size_t o = 0;
  for (int n = 0; n < in.n; ++n) {
    for (int c = 0; c < in.c; ++c) {
      for (int oy = 0; oy < os.h; ++oy) {
        for (int ox = 0; ox < os.w; ++ox, ++o) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_idx = 0;
          for (int ky = 0; ky < kernel_; ++ky) {
            const int iy = oy * stride_ - pad_ + ky;
            if (iy < 0 || iy >= in.h) continue;
            for (int kx = 0; kx < kernel_; ++kx) {
              const int ix = ox * stride_ - pad_ + kx;
              if (ix < 0 || ix >= in.w) continue;
              const std::size_t idx =
                  ((static_cast<std::size_t>(n) * in.c + c) * in.h + iy) * in.w + ix;
              if (x[idx] > best) {
                best = x[idx];
                best_idx = idx;
              }
            }
          }
          y[o] = best;
          argmax[o] = best_idx;
        }
      }
    }
  }
  if (mode == Mode::kTrain) {
    in_shape_ = in;
    argmax_ = std::move(argmax);
  }
  return y;
}

Tensor MaxPool2d::backward(const Tensor& grad_out) {
  Tensor dx(in_shape_);
  for (std::size_t o = 0; o < grad_out.size(); ++o) dx[argmax_[o]] += grad_out[o];
  return dx;
}

// ---------------------------------------------------------------------------
// Residual block

ResidualBlock::ResidualBlock(const std::string& name, BlockKind kind, int in_channels, int width,
                             int stride, ParamGroup group) {
  if (kind == BlockKind::kBasic) {
    out_channels_ = width;
    main_.push_back(std::make_unique<Conv2d>(name + ".conv1", in_channels, width, 3, stride, 1,
                                             false, group));
    main_.push_back(std::make_unique<BatchNorm>(name + ".bn1", width, group));
    main_.push_back(std::make_unique<LeakyRelu>(0.0));
    main_.push_back(
        std::make_unique<Conv2d>(name + ".conv2", width, width, 3, 1, 1, false, group));
    main_.push_back(std::make_unique<BatchNorm>(name + ".bn2", width, group));
  } else {
    out_channels_ = width * 4;
    main_.push_back(
        std::make_unique<Conv2d>(name + ".conv1", in_channels, width, 1, 1, 0, false, group));
    main_.push_back(std::make_unique<BatchNorm>(name + ".bn1", width, group));
    main_.push_back(std::make_unique<LeakyRelu>(0.0));
    main_.push_back(
        std::make_unique<Conv2d>(name + ".conv2", width, width, 3, stride, 1, false, group));
    main_.push_back(std::make_unique<BatchNorm>(name + ".bn2", width, group));
    main_.push_back(std::make_unique<LeakyRelu>(0.0));
    main_.push_back(std::make_unique<Conv2d>(name + ".conv3", width, out_channels_, 1, 1, 0, false,
                                             group));
    main_.push_back(std::make_unique<BatchNorm>(name + ".bn3", out_channels_, group));
  }
  if (stride != 1 || in_channels != out_channels_) {
    shortcut_.push_back(std::make_unique<Conv2d>(name + ".downsample.0", in_channels,
                                                 out_channels_, 1, stride, 0, false, group));
    shortcut_.push_back(std::make_unique<BatchNorm>(name + ".downsample.1", out_channels_, group));
  }
}

Shape ResidualBlock::output_shape(const Shape& in) const {
  Shape s = in;
  for (const auto& l : main_) s = l->output_shape(s);
  return s;
}

Tensor ResidualBlock::forward(const Tensor& x, Mode mode) {
  Tensor h = x;
  for (auto& l : main_) h = l->forward(h, mode);
  if (shortcut_.empty()) {
    h += x;
  } else {
    Tensor s = x;
    for (auto& l : shortcut_) s = l->forward(s, mode);
    h += s;
  }
  return final_relu_.forward(h, mode);
}

Tensor ResidualBlock::backward(const Tensor& grad_out) {
  const Tensor g = final_relu_.backward(grad_out);
  Tensor gm = g;
  for (auto it = main_.rbegin(); it != main_.rend(); ++it) gm = (*it)->backward(gm);
  if (shortcut_.empty()) {
    gm += g;
  } else {
    Tensor gs = g;
    for (auto it = shortcut_.rbegin(); it != shortcut_.rend(); ++it) gs = (*it)->backward(gs);
    gm += gs;
  }
  return gm;
}

void ResidualBlock::collect_parameters(std::vector<Parameter*>& out) {
  for (auto& l : main_) l->collect_parameters(out);
  for (auto& l : shortcut_) l->collect_parameters(out);
}

void ResidualBlock::collect_buffers(std::vector<Buffer*>& out) {
  for (auto& l : main_) l->collect_buffers(out);
  for (auto& l : shortcut_) l->collect_buffers(out);
}

// ---------------------------------------------------------------------------
// Sequential

Tensor Sequential::forward(const Tensor& x, Mode mode) {
  Tensor h = x;
  for (auto& l : layers_) h = l->forward(h, mode);
  return h;
}

Tensor Sequential::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

Shape Sequential::output_shape(const Shape& in) const {
  Shape s = in;
  for (const auto& l : layers_) s = l->output_shape(s);
  return s;
}

void Sequential::collect_parameters(std::vector<Parameter*>& out) {
  for (auto& l : layers_) l->collect_parameters(out);
}

void Sequential::collect_buffers(std::vector<Buffer*>& out) {
  for (auto& l : layers_) l->collect_buffers(out);
}

}  // namespace enet
