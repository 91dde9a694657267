#pragma once

#include <Eigen/Dense>
#include <stdexcept>

namespace flame {

using Index = Eigen::Index;

template <typename Scalar>
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

// Dense 4D feature map (batch, height, width, channels) stored as an
// (N*H*W) x C column-major matrix, one contiguous column per channel.
// Row index of element (n, y, x) is (n*H + y)*W + x, so channel-wise
// reductions and recalibrations are plain column operations and
// convolution reduces to im2col + GEMM.
template <typename Scalar>
class Tensor4 {
 public:
  using Mat = MatX<Scalar>;

  Tensor4() = default;
  Tensor4(Index n, Index h, Index w, Index c)
      : n_(n), h_(h), w_(w), c_(c), m_(Mat::Zero(n * h * w, c)) {}

  // Storage for results that are fully overwritten; skips the zero fill.
  static Tensor4 uninitialized(Index n, Index h, Index w, Index c) {
    Tensor4 t;
    t.n_ = n;
    t.h_ = h;
    t.w_ = w;
    t.c_ = c;
    t.m_.resize(n * h * w, c);
    return t;
  }

  static Tensor4 from_matrix(Index n, Index h, Index w, Mat m) {
    if (m.rows() != n * h * w) {
      throw std::invalid_argument("Tensor4: matrix rows do not match n*h*w");
    }
    Tensor4 t;
    t.n_ = n;
    t.h_ = h;
    t.w_ = w;
    t.c_ = m.cols();
    t.m_ = std::move(m);
    return t;
  }

  Index batch() const { return n_; }
  Index height() const { return h_; }
  Index width() const { return w_; }
  Index channels() const { return c_; }
  Index rows() const { return n_ * h_ * w_; }
  Index size() const { return rows() * c_; }

  Index row_of(Index n, Index y, Index x) const { return (n * h_ + y) * w_ + x; }

  Scalar operator()(Index n, Index y, Index x, Index c) const {
    return m_(row_of(n, y, x), c);
  }
  Scalar& operator()(Index n, Index y, Index x, Index c) {
    return m_(row_of(n, y, x), c);
  }

  Mat& mat() { return m_; }
  const Mat& mat() const { return m_; }

  bool same_shape(const Tensor4& o) const {
    return n_ == o.n_ && h_ == o.h_ && w_ == o.w_ && c_ == o.c_;
  }

  bool all_finite() const { return m_.allFinite(); }

  void set_zero() { m_.setZero(); }

  template <typename S2>
  Tensor4<S2> cast() const {
    return Tensor4<S2>::from_matrix(n_, h_, w_, m_.template cast<S2>());
  }

 private:
  Index n_ = 0, h_ = 0, w_ = 0, c_ = 0;
  Mat m_;
};

// Stacks single-batch tensors of identical shape along the batch axis.
template <typename Scalar>
Tensor4<Scalar> stack_batch(const std::vector<const Tensor4<Scalar>*>& parts) {
  if (parts.empty()) throw std::invalid_argument("stack_batch: empty input");
  const Tensor4<Scalar>& first = *parts.front();
  Tensor4<Scalar> out(static_cast<Index>(parts.size()) * first.batch(), first.height(),
                      first.width(), first.channels());
  Index row = 0;
  for (const Tensor4<Scalar>* p : parts) {
    if (p->height() != first.height() || p->width() != first.width() ||
        p->channels() != first.channels()) {
      throw std::invalid_argument("stack_batch: mismatched shapes");
    }
    out.mat().middleRows(row, p->rows()) = p->mat();
    row += p->rows();
  }
  return out;
}

}  // namespace flame
