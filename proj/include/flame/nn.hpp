#pragma once

#include <memory>
#include <string>
#include <vector>

#include "flame/rng.hpp"
#include "flame/tensor.hpp"

namespace flame {

enum class Mode { kTrain, kEval };

// Named parameter array with its gradient accumulator. Biases and batch-norm
// scale/shift are 1 x C; conv kernels are (k*k*cin) x cout; dense weights
// in x out. Running statistics are kept here too with trainable = false so
// they ride along in checkpoints but stay out of the optimizer.
template <typename Scalar>
struct Parameter {
  std::string name;
  MatX<Scalar> value;
  MatX<Scalar> grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Index rows, Index cols, bool train = true)
      : name(std::move(n)),
        value(MatX<Scalar>::Zero(rows, cols)),
        grad(MatX<Scalar>::Zero(rows, cols)),
        trainable(train) {}

  void zero_grad() { grad.setZero(); }
};

template <typename Scalar>
using ParamRefs = std::vector<Parameter<Scalar>*>;

// Fan-in scaled normal init for conv/dense weights.
template <typename Scalar>
void init_fan_in(Parameter<Scalar>& p, Index fan_in, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (Index j = 0; j < p.value.cols(); ++j) {
    for (Index i = 0; i < p.value.rows(); ++i) {
      p.value(i, j) = static_cast<Scalar>(rng.normal(0.0, stddev));
    }
  }
}

inline Index conv_out_size(Index in, Index k, Index stride, Index pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// 2D cross-correlation with zero padding, implemented as im2col + GEMM
// one batch element at a time. Patch column layout: ((ky*k + kx)*cin + ci).
template <typename Scalar>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, Index in_ch, Index out_ch, Index ksize, Index stride,
         Index pad, Rng& rng)
      : in_ch_(in_ch),
        out_ch_(out_ch),
        k_(ksize),
        stride_(stride),
        pad_(pad),
        kernel_(name + ".w", ksize * ksize * in_ch, out_ch),
        bias_(name + ".b", 1, out_ch) {
    init_fan_in(kernel_, ksize * ksize * in_ch, rng);
  }

  Tensor4<Scalar> forward(const Tensor4<Scalar>& x) {
    if (x.channels() != in_ch_) {
      throw std::invalid_argument("conv2d: input has " + std::to_string(x.channels()) +
                                  " channels, kernel expects " + std::to_string(in_ch_));
    }
    x_cache_ = x;
    const Index oh = conv_out_size(x.height(), k_, stride_, pad_);
    const Index ow = conv_out_size(x.width(), k_, stride_, pad_);
    if (oh < 1 || ow < 1) throw std::invalid_argument("conv2d: output would be empty");

    Tensor4<Scalar> out = Tensor4<Scalar>::uninitialized(x.batch(), oh, ow, out_ch_);
    if (k_ == 1 && stride_ == 1 && pad_ == 0) {
      out.mat().noalias() = x.mat() * kernel_.value;
    } else {
      MatX<Scalar> patches(oh * ow, k_ * k_ * in_ch_);
      for (Index n = 0; n < x.batch(); ++n) {
        im2col(x, n, oh, ow, patches);
        out.mat().middleRows(n * oh * ow, oh * ow).noalias() = patches * kernel_.value;
      }
    }
    out.mat().rowwise() += bias_.value.row(0);
    return out;
  }

  // Accumulates parameter gradients; the input gradient is skipped when the
  // caller does not need it (first layer of a stream during training).
  Tensor4<Scalar> backward(const Tensor4<Scalar>& gout, bool need_input_grad = true) {
    const Tensor4<Scalar>& x = x_cache_;
    const Index oh = gout.height(), ow = gout.width();
    bias_.grad.row(0) += gout.mat().colwise().sum();

    if (k_ == 1 && stride_ == 1 && pad_ == 0) {
      kernel_.grad.noalias() += x.mat().transpose() * gout.mat();
      if (!need_input_grad) return Tensor4<Scalar>();
      Tensor4<Scalar> gin =
          Tensor4<Scalar>::uninitialized(x.batch(), x.height(), x.width(), x.channels());
      gin.mat().noalias() = gout.mat() * kernel_.value.transpose();
      return gin;
    }

    Tensor4<Scalar> gin;
    if (need_input_grad) gin = Tensor4<Scalar>(x.batch(), x.height(), x.width(), x.channels());
    MatX<Scalar> patches(oh * ow, k_ * k_ * in_ch_);
    MatX<Scalar> gpatches;
    if (need_input_grad) gpatches.resize(oh * ow, k_ * k_ * in_ch_);
    for (Index n = 0; n < x.batch(); ++n) {
      im2col(x, n, oh, ow, patches);
      const auto g_n = gout.mat().middleRows(n * oh * ow, oh * ow);
      kernel_.grad.noalias() += patches.transpose() * g_n;
      if (need_input_grad) {
        gpatches.noalias() = g_n * kernel_.value.transpose();
        col2im(gpatches, n, oh, ow, gin);
      }
    }
    return gin;
  }

  void collect_params(ParamRefs<Scalar>& out) {
    out.push_back(&kernel_);
    out.push_back(&bias_);
  }

  Parameter<Scalar>& kernel() { return kernel_; }
  Parameter<Scalar>& bias() { return bias_; }

 private:
  using StridedVec =
      Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>, 0, Eigen::InnerStride<Eigen::Dynamic>>;
  using ConstStridedVec = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>, 0,
                                     Eigen::InnerStride<Eigen::Dynamic>>;

  // Valid output x-range for kernel column kx: 0 <= ox*stride + kx - pad < W.
  std::pair<Index, Index> ox_range(Index kx, Index w, Index ow) const {
    const Index a = pad_ - kx;
    const Index lo = a <= 0 ? 0 : (a + stride_ - 1) / stride_;
    const Index hi = std::min(ow, (w - 1 - kx + pad_) / stride_ + 1);
    return {lo, hi};
  }

  // Fills every entry of `patches` (no prior zeroing): valid source runs are
  // copied, out-of-image margins written as zeros. The (ky, kx, ci) loops
  // stay outside so one source and one destination column stream through
  // memory at a time; aligned stride-1 columns collapse to one block copy.
  void im2col(const Tensor4<Scalar>& x, Index n, Index oh, Index ow,
              MatX<Scalar>& patches) const {
    const Index h = x.height(), w = x.width();
    for (Index ky = 0; ky < k_; ++ky) {
      const Index oy_lo = std::max<Index>(0, ceil_div(pad_ - ky, stride_));
      const Index oy_hi = std::min(oh, (h - 1 - ky + pad_) / stride_ + 1);
      for (Index kx = 0; kx < k_; ++kx) {
        const auto [lo, hi] = ox_range(kx, w, ow);
        for (Index ci = 0; ci < in_ch_; ++ci) {
          const Index j = (ky * k_ + kx) * in_ch_ + ci;
          auto dst_col = patches.col(j);
          auto src_col = x.mat().col(ci);
          if (oy_lo > 0) dst_col.head(oy_lo * ow).setZero();
          if (oy_hi < oh) dst_col.tail((oh - oy_hi) * ow).setZero();
          if (oy_lo >= oy_hi || lo >= hi) {
            dst_col.segment(oy_lo * ow, std::max<Index>(0, (oy_hi - oy_lo)) * ow).setZero();
            continue;
          }
          if (stride_ == 1 && lo == 0 && hi == ow && ow == w) {
            // Rows align exactly: one contiguous copy for all valid oy.
            const Index iy0 = oy_lo + ky - pad_;
            dst_col.segment(oy_lo * ow, (oy_hi - oy_lo) * ow) =
                src_col.segment((n * h + iy0) * w, (oy_hi - oy_lo) * w);
            continue;
          }
          for (Index oy = oy_lo; oy < oy_hi; ++oy) {
            const Index iy = oy * stride_ + ky - pad_;
            const Index src_base = (n * h + iy) * w;
            auto dst = dst_col.segment(oy * ow, ow);
            if (lo > 0) dst.head(lo).setZero();
            if (hi < ow) dst.tail(ow - hi).setZero();
            const Index ix = lo * stride_ + kx - pad_;
            if (stride_ == 1) {
              dst.segment(lo, hi - lo) = src_col.segment(src_base + ix, hi - lo);
            } else {
              dst.segment(lo, hi - lo) =
                  ConstStridedVec(src_col.data() + src_base + ix, hi - lo,
                                  Eigen::InnerStride<Eigen::Dynamic>(stride_));
            }
          }
        }
      }
    }
  }

  void col2im(const MatX<Scalar>& gpatches, Index n, Index oh, Index ow,
              Tensor4<Scalar>& gin) const {
    const Index h = gin.height(), w = gin.width();
    for (Index ky = 0; ky < k_; ++ky) {
      const Index oy_lo = std::max<Index>(0, ceil_div(pad_ - ky, stride_));
      const Index oy_hi = std::min(oh, (h - 1 - ky + pad_) / stride_ + 1);
      for (Index kx = 0; kx < k_; ++kx) {
        const auto [lo, hi] = ox_range(kx, w, ow);
        if (oy_lo >= oy_hi || lo >= hi) continue;
        for (Index ci = 0; ci < in_ch_; ++ci) {
          const Index j = (ky * k_ + kx) * in_ch_ + ci;
          auto src_col = gpatches.col(j);
          auto dst_col = gin.mat().col(ci);
          if (stride_ == 1 && lo == 0 && hi == ow && ow == w) {
            const Index iy0 = oy_lo + ky - pad_;
            dst_col.segment((n * h + iy0) * w, (oy_hi - oy_lo) * w) +=
                src_col.segment(oy_lo * ow, (oy_hi - oy_lo) * ow);
            continue;
          }
          for (Index oy = oy_lo; oy < oy_hi; ++oy) {
            const Index iy = oy * stride_ + ky - pad_;
            const Index dst_base = (n * h + iy) * w;
            const Index ix = lo * stride_ + kx - pad_;
            if (stride_ == 1) {
              dst_col.segment(dst_base + ix, hi - lo) +=
                  src_col.segment(oy * ow + lo, hi - lo);
            } else {
              StridedVec(dst_col.data() + dst_base + ix, hi - lo,
                         Eigen::InnerStride<Eigen::Dynamic>(stride_)) +=
                  src_col.segment(oy * ow + lo, hi - lo);
            }
          }
        }
      }
    }
  }

  static Index ceil_div(Index a, Index b) { return a <= 0 ? 0 : (a + b - 1) / b; }

  Index in_ch_ = 0, out_ch_ = 0, k_ = 0, stride_ = 1, pad_ = 0;
  Parameter<Scalar> kernel_, bias_;
  Tensor4<Scalar> x_cache_;
};

// Per-channel batch normalization over batch x spatial. Train mode uses
// batch statistics (biased variance) and updates running statistics with
// momentum 0.1 (unbiased variance, matching the usual convention); eval
// mode is a fixed affine map from the running statistics.
template <typename Scalar>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(const std::string& name, Index channels, double eps = 1e-5,
              double momentum = 0.1)
      : eps_(eps),
        momentum_(momentum),
        gamma_(name + ".gamma", 1, channels),
        beta_(name + ".beta", 1, channels),
        running_mean_(name + ".running_mean", 1, channels, false),
        running_var_(name + ".running_var", 1, channels, false) {
    gamma_.value.setOnes();
    running_var_.value.setOnes();
  }

  // Matrix-level forward shared by the Tensor4 and Dense paths; rows are
  // the normalization population. Caches xhat in both modes so the backward
  // pass is uniform for the scale/shift gradients.
  MatX<Scalar> forward_mat(const MatX<Scalar>& x, Mode mode, Index batch) {
    if (mode == Mode::kTrain && batch < 2) {
      throw std::invalid_argument("batch_norm: train mode requires batch >= 2");
    }
    mode_ = mode;
    const Index m = x.rows();
    if (mode == Mode::kTrain) {
      RowVec mu = x.colwise().mean();
      MatX<Scalar> centered = x.rowwise() - mu;
      RowVec var = centered.array().square().colwise().mean().matrix();
      inv_std_ = (var.array() + static_cast<Scalar>(eps_)).sqrt().inverse().matrix();
      xhat_ = (centered.array().rowwise() * inv_std_.row(0).array()).matrix();

      const Scalar mom = static_cast<Scalar>(momentum_);
      const Scalar unbias =
          m > 1 ? static_cast<Scalar>(m) / static_cast<Scalar>(m - 1) : Scalar(1);
      running_mean_.value.row(0) = (Scalar(1) - mom) * running_mean_.value.row(0) + mom * mu;
      running_var_.value.row(0) =
          (Scalar(1) - mom) * running_var_.value.row(0) + mom * (var * unbias);
    } else {
      inv_std_ = (running_var_.value.row(0).array() + static_cast<Scalar>(eps_))
                     .sqrt()
                     .inverse()
                     .matrix();
      xhat_ = ((x.rowwise() - running_mean_.value.row(0)).array().rowwise() *
               inv_std_.row(0).array())
                  .matrix();
    }
    MatX<Scalar> y = (xhat_.array().rowwise() * gamma_.value.row(0).array()).matrix();
    y.rowwise() += beta_.value.row(0);
    return y;
  }

  MatX<Scalar> backward_mat(const MatX<Scalar>& g) {
    beta_.grad.row(0) += g.colwise().sum();
    gamma_.grad.row(0) += (g.array() * xhat_.array()).colwise().sum().matrix();

    if (mode_ == Mode::kEval) {
      // Fixed affine map: dx = g * gamma / sqrt(running_var + eps).
      return (g.array().rowwise() *
              (gamma_.value.row(0).array() * inv_std_.row(0).array()))
          .matrix();
    }

    const Index m = g.rows();
    MatX<Scalar> dxhat = (g.array().rowwise() * gamma_.value.row(0).array()).matrix();
    RowVec sum_dxhat = dxhat.colwise().sum();
    RowVec sum_dxhat_xhat = (dxhat.array() * xhat_.array()).colwise().sum().matrix();

    MatX<Scalar> dx = dxhat * static_cast<Scalar>(m);
    dx.rowwise() -= sum_dxhat;
    dx.array() -= xhat_.array().rowwise() * sum_dxhat_xhat.row(0).array();
    dx.array().rowwise() *= (inv_std_.row(0).array() / static_cast<Scalar>(m));
    return dx;
  }

  Tensor4<Scalar> forward(const Tensor4<Scalar>& x, Mode mode) {
    return Tensor4<Scalar>::from_matrix(x.batch(), x.height(), x.width(),
                                        forward_mat(x.mat(), mode, x.batch()));
  }

  Tensor4<Scalar> backward(const Tensor4<Scalar>& g) {
    return Tensor4<Scalar>::from_matrix(g.batch(), g.height(), g.width(),
                                        backward_mat(g.mat()));
  }

  void collect_params(ParamRefs<Scalar>& out) {
    out.push_back(&gamma_);
    out.push_back(&beta_);
    out.push_back(&running_mean_);
    out.push_back(&running_var_);
  }

  Parameter<Scalar>& gamma() { return gamma_; }
  Parameter<Scalar>& beta() { return beta_; }
  Parameter<Scalar>& running_mean() { return running_mean_; }
  Parameter<Scalar>& running_var() { return running_var_; }

 private:
  using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
  double eps_ = 1e-5, momentum_ = 0.1;
  Parameter<Scalar> gamma_, beta_, running_mean_, running_var_;
  MatX<Scalar> xhat_;
  RowVec inv_std_;
  Mode mode_ = Mode::kTrain;
};

// Affine map on row-vector batches: y = x*W + b.
template <typename Scalar>
class Dense {
 public:
  Dense() = default;
  Dense(const std::string& name, Index in, Index out, Rng& rng)
      : weight_(name + ".w", in, out), bias_(name + ".b", 1, out) {
    init_fan_in(weight_, in, rng);
  }

  MatX<Scalar> forward(const MatX<Scalar>& x) {
    if (x.cols() != weight_.value.rows()) {
      throw std::invalid_argument("dense: input width " + std::to_string(x.cols()) +
                                  " does not match weight rows " +
                                  std::to_string(weight_.value.rows()));
    }
    x_cache_ = x;
    return (x * weight_.value).rowwise() + bias_.value.row(0);
  }

  MatX<Scalar> backward(const MatX<Scalar>& g) {
    weight_.grad.noalias() += x_cache_.transpose() * g;
    bias_.grad.row(0) += g.colwise().sum();
    return g * weight_.value.transpose();
  }

  void collect_params(ParamRefs<Scalar>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

  Parameter<Scalar>& weight() { return weight_; }
  Parameter<Scalar>& bias() { return bias_; }
  Index out_dim() const { return weight_.value.cols(); }

 private:
  Parameter<Scalar> weight_, bias_;
  MatX<Scalar> x_cache_;
};

template <typename Scalar>
MatX<Scalar> sigmoid(const MatX<Scalar>& x) {
  return ((-x.array()).exp() + Scalar(1)).inverse().matrix();
}

// ReLU with cached mask for the backward pass.
template <typename Scalar>
class Relu {
 public:
  MatX<Scalar> forward_mat(const MatX<Scalar>& x) {
    mask_ = (x.array() > Scalar(0)).template cast<Scalar>().matrix();
    return x.cwiseMax(Scalar(0));
  }
  MatX<Scalar> backward_mat(const MatX<Scalar>& g) {
    return (g.array() * mask_.array()).matrix();
  }
  Tensor4<Scalar> forward(const Tensor4<Scalar>& x) {
    return Tensor4<Scalar>::from_matrix(x.batch(), x.height(), x.width(),
                                        forward_mat(x.mat()));
  }
  Tensor4<Scalar> backward(const Tensor4<Scalar>& g) {
    return Tensor4<Scalar>::from_matrix(g.batch(), g.height(), g.width(),
                                        backward_mat(g.mat()));
  }

 private:
  MatX<Scalar> mask_;
};

// 2x2/2 max pooling with floor semantics: odd trailing rows/columns are
// dropped. Ties resolve to the first candidate in (y, x) scan order.
template <typename Scalar>
class MaxPool2x2 {
 public:
  Tensor4<Scalar> forward(const Tensor4<Scalar>& x) {
    const Index oh = x.height() / 2, ow = x.width() / 2;
    if (oh < 1 || ow < 1) throw std::invalid_argument("max_pool: input too small");
    in_rows_ = x.rows();
    in_shape_ = {x.batch(), x.height(), x.width(), x.channels()};
    Tensor4<Scalar> out = Tensor4<Scalar>::uninitialized(x.batch(), oh, ow, x.channels());
    arg_.resize(out.rows(), x.channels());

    for (Index n = 0; n < x.batch(); ++n) {
      for (Index oy = 0; oy < oh; ++oy) {
        for (Index ox = 0; ox < ow; ++ox) {
          const Index r = out.row_of(n, oy, ox);
          const Index s00 = x.row_of(n, 2 * oy, 2 * ox);
          const Index cand[4] = {s00, s00 + 1, s00 + x.width(), s00 + x.width() + 1};
          for (Index c = 0; c < x.channels(); ++c) {
            Scalar best = x.mat()(cand[0], c);
            Index best_r = cand[0];
            for (int k = 1; k < 4; ++k) {
              const Scalar v = x.mat()(cand[k], c);
              if (v > best) {
                best = v;
                best_r = cand[k];
              }
            }
            out.mat()(r, c) = best;
            arg_(r, c) = best_r;
          }
        }
      }
    }
    return out;
  }

  Tensor4<Scalar> backward(const Tensor4<Scalar>& g) {
    Tensor4<Scalar> gin(in_shape_[0], in_shape_[1], in_shape_[2], in_shape_[3]);
    for (Index c = 0; c < g.channels(); ++c) {
      for (Index r = 0; r < g.rows(); ++r) {
        gin.mat()(arg_(r, c), c) += g.mat()(r, c);
      }
    }
    return gin;
  }

 private:
  Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic> arg_;
  Index in_rows_ = 0;
  std::array<Index, 4> in_shape_{};
};

// Inverted dropout on row-vector batches: train mode zeroes with
// probability p and scales survivors by 1/(1-p); eval mode is the identity.
template <typename Scalar>
class Dropout {
 public:
  Dropout() = default;
  Dropout(double p, std::uint64_t seed) : p_(p), rng_(seed) {
    if (!(p >= 0.0 && p < 1.0)) {
      throw std::invalid_argument("dropout: p must be in [0, 1)");
    }
  }

  MatX<Scalar> forward(const MatX<Scalar>& x, Mode mode) {
    if (mode == Mode::kEval || p_ == 0.0) {
      identity_ = true;
      return x;
    }
    identity_ = false;
    const Scalar keep_scale = static_cast<Scalar>(1.0 / (1.0 - p_));
    mask_.resize(x.rows(), x.cols());
    for (Index i = 0; i < x.rows(); ++i) {
      for (Index j = 0; j < x.cols(); ++j) {
        mask_(i, j) = rng_.uniform() < p_ ? Scalar(0) : keep_scale;
      }
    }
    return (x.array() * mask_.array()).matrix();
  }

  MatX<Scalar> backward(const MatX<Scalar>& g) {
    if (identity_) return g;
    return (g.array() * mask_.array()).matrix();
  }

  void reseed(std::uint64_t seed) { rng_ = Rng(seed); }
  double p() const { return p_; }

 private:
  double p_ = 0.0;
  Rng rng_{0};
  MatX<Scalar> mask_;
  bool identity_ = true;
};

// Spatial mean per channel: (N,H,W,C) -> (N,C).
template <typename Scalar>
class GlobalAvgPool {
 public:
  MatX<Scalar> forward(const Tensor4<Scalar>& x) {
    hw_ = x.height() * x.width();
    in_shape_ = {x.batch(), x.height(), x.width(), x.channels()};
    MatX<Scalar> out(x.batch(), x.channels());
    for (Index n = 0; n < x.batch(); ++n) {
      out.row(n) = x.mat().middleRows(n * hw_, hw_).colwise().mean();
    }
    return out;
  }

  Tensor4<Scalar> backward(const MatX<Scalar>& g) {
    Tensor4<Scalar> gin(in_shape_[0], in_shape_[1], in_shape_[2], in_shape_[3]);
    const Scalar inv = Scalar(1) / static_cast<Scalar>(hw_);
    for (Index n = 0; n < in_shape_[0]; ++n) {
      gin.mat().middleRows(n * hw_, hw_).rowwise() = (g.row(n) * inv).eval();
    }
    return gin;
  }

 private:
  Index hw_ = 0;
  std::array<Index, 4> in_shape_{};
};

// (N,H,W,C) -> N x (H*W*C) in (y, x, c) order.
template <typename Scalar>
class Flatten {
 public:
  MatX<Scalar> forward(const Tensor4<Scalar>& x) {
    in_shape_ = {x.batch(), x.height(), x.width(), x.channels()};
    const Index hw = x.height() * x.width();
    const Index c = x.channels();
    MatX<Scalar> out(x.batch(), hw * c);
    for (Index n = 0; n < x.batch(); ++n) {
      for (Index ch = 0; ch < c; ++ch) {
        for (Index r = 0; r < hw; ++r) {
          out(n, r * c + ch) = x.mat()(n * hw + r, ch);
        }
      }
    }
    return out;
  }

  Tensor4<Scalar> backward(const MatX<Scalar>& g) {
    Tensor4<Scalar> gin(in_shape_[0], in_shape_[1], in_shape_[2], in_shape_[3]);
    const Index hw = in_shape_[1] * in_shape_[2];
    const Index c = in_shape_[3];
    for (Index n = 0; n < in_shape_[0]; ++n) {
      for (Index ch = 0; ch < c; ++ch) {
        for (Index r = 0; r < hw; ++r) {
          gin.mat()(n * hw + r, ch) = g(n, r * c + ch);
        }
      }
    }
    return gin;
  }

 private:
  std::array<Index, 4> in_shape_{};
};

// Basic residual block: conv3x3-BN-ReLU, conv3x3-BN, additive skip
// (1x1 conv projection when the channel count changes), ReLU after the add.
template <typename Scalar>
class ResidualBlock {
 public:
  ResidualBlock() = default;
  ResidualBlock(const std::string& name, Index in_ch, Index out_ch, Rng& rng,
                double bn_eps = 1e-5, double bn_momentum = 0.1)
      : conv1_(name + ".conv1", in_ch, out_ch, 3, 1, 1, rng),
        bn1_(name + ".bn1", out_ch, bn_eps, bn_momentum),
        conv2_(name + ".conv2", out_ch, out_ch, 3, 1, 1, rng),
        bn2_(name + ".bn2", out_ch, bn_eps, bn_momentum) {
    if (in_ch != out_ch) {
      proj_ = std::make_unique<Conv2d<Scalar>>(name + ".proj", in_ch, out_ch, 1, 1, 0, rng);
    }
  }

  Tensor4<Scalar> forward(const Tensor4<Scalar>& x, Mode mode) {
    Tensor4<Scalar> y = relu1_.forward(bn1_.forward(conv1_.forward(x), mode));
    y = bn2_.forward(conv2_.forward(y), mode);
    const Tensor4<Scalar> skip = proj_ ? proj_->forward(x) : x;
    y.mat() += skip.mat();
    return relu_out_.forward(y);
  }

  Tensor4<Scalar> backward(const Tensor4<Scalar>& g) {
    const Tensor4<Scalar> ga = relu_out_.backward(g);
    Tensor4<Scalar> gin =
        conv1_.backward(bn1_.backward(relu1_.backward(conv2_.backward(bn2_.backward(ga)))));
    if (proj_) {
      gin.mat() += proj_->backward(ga).mat();
    } else {
      gin.mat() += ga.mat();
    }
    return gin;
  }

  void collect_params(ParamRefs<Scalar>& out) {
    conv1_.collect_params(out);
    bn1_.collect_params(out);
    conv2_.collect_params(out);
    bn2_.collect_params(out);
    if (proj_) proj_->collect_params(out);
  }

  Conv2d<Scalar>& conv1() { return conv1_; }
  Conv2d<Scalar>& conv2() { return conv2_; }
  Conv2d<Scalar>* proj() { return proj_.get(); }

 private:
  Conv2d<Scalar> conv1_, conv2_;
  BatchNorm2d<Scalar> bn1_, bn2_;
  std::unique_ptr<Conv2d<Scalar>> proj_;
  Relu<Scalar> relu1_, relu_out_;
};

}  // namespace flame
