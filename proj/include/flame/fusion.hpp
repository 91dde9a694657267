#pragma once

#include <utility>

#include "flame/nn.hpp"

namespace flame {

// Multimodal transfer module: squeeze both streams by global average
// pooling, map the concatenated descriptor through a joint dense layer
// (ReLU, see `mmtm_z_activation` in the config docs) to Z with
// dim(Z) = floor((c_r + c_h)/4), then through one excitation head per
// stream. Each channel is rescaled by 2*sigmoid(E), so gains live in (0, 2)
// and zero-initialized heads make the block an exact identity.
template <typename Scalar>
class Mmtm {
 public:
  Mmtm() = default;
  Mmtm(const std::string& name, Index c_r, Index c_h, Rng& rng)
      : c_r_(c_r),
        c_h_(c_h),
        z_dim_((c_r + c_h) / 4),
        joint_(name + ".z", c_r + c_h, (c_r + c_h) / 4, rng),
        exc_r_(name + ".er", (c_r + c_h) / 4, c_r, rng),
        exc_h_(name + ".eh", (c_r + c_h) / 4, c_h, rng) {}

  Index z_dim() const { return z_dim_; }

  void zero_excitation() {
    exc_r_.weight().value.setZero();
    exc_r_.bias().value.setZero();
    exc_h_.weight().value.setZero();
    exc_h_.bias().value.setZero();
  }

  std::pair<Tensor4<Scalar>, Tensor4<Scalar>> forward(const Tensor4<Scalar>& r,
                                                      const Tensor4<Scalar>& h) {
    if (r.batch() != h.batch()) throw std::invalid_argument("mmtm: batch mismatch");
    if (r.channels() != c_r_ || h.channels() != c_h_) {
      throw std::invalid_argument("mmtm: channel counts do not match parameters");
    }
    r_cache_ = r;
    h_cache_ = h;

    MatX<Scalar> s(r.batch(), c_r_ + c_h_);
    s.leftCols(c_r_) = gap_r_.forward(r);
    s.rightCols(c_h_) = gap_h_.forward(h);

    const MatX<Scalar> z = relu_z_.forward_mat(joint_.forward(s));
    sig_r_ = sigmoid(exc_r_.forward(z));
    sig_h_ = sigmoid(exc_h_.forward(z));

    return {scale_channels(r, sig_r_), scale_channels(h, sig_h_)};
  }

  std::pair<Tensor4<Scalar>, Tensor4<Scalar>> backward(const Tensor4<Scalar>& gr,
                                                       const Tensor4<Scalar>& gh) {
    // Direct recalibration path.
    Tensor4<Scalar> dr = scale_channels(gr, sig_r_);
    Tensor4<Scalar> dh = scale_channels(gh, sig_h_);

    // Gain path: dE = sum_spatial(g .* x) * d(2*sigmoid)/dE.
    MatX<Scalar> de_r = gain_grad(gr, r_cache_, sig_r_);
    MatX<Scalar> de_h = gain_grad(gh, h_cache_, sig_h_);

    MatX<Scalar> dz = exc_r_.backward(de_r) + exc_h_.backward(de_h);
    const MatX<Scalar> ds = joint_.backward(relu_z_.backward_mat(dz));

    dr.mat() += gap_r_.backward(ds.leftCols(c_r_)).mat();
    dh.mat() += gap_h_.backward(ds.rightCols(c_h_)).mat();
    return {std::move(dr), std::move(dh)};
  }

  void collect_params(ParamRefs<Scalar>& out) {
    joint_.collect_params(out);
    exc_r_.collect_params(out);
    exc_h_.collect_params(out);
  }

  Dense<Scalar>& excitation_r() { return exc_r_; }
  Dense<Scalar>& excitation_h() { return exc_h_; }

 private:
  // out(row in n, c) = 2 * sig(n, c) * x(row, c)
  static Tensor4<Scalar> scale_channels(const Tensor4<Scalar>& x, const MatX<Scalar>& sig) {
    Tensor4<Scalar> out(x.batch(), x.height(), x.width(), x.channels());
    const Index hw = x.height() * x.width();
    for (Index n = 0; n < x.batch(); ++n) {
      out.mat().middleRows(n * hw, hw) =
          (x.mat().middleRows(n * hw, hw).array().rowwise() *
           (Scalar(2) * sig.row(n).array()))
              .matrix();
    }
    return out;
  }

  MatX<Scalar> gain_grad(const Tensor4<Scalar>& g, const Tensor4<Scalar>& x,
                         const MatX<Scalar>& sig) const {
    const Index hw = x.height() * x.width();
    MatX<Scalar> de(x.batch(), x.channels());
    for (Index n = 0; n < x.batch(); ++n) {
      de.row(n) = (g.mat().middleRows(n * hw, hw).array() *
                   x.mat().middleRows(n * hw, hw).array())
                      .colwise()
                      .sum()
                      .matrix();
    }
    // d(2*sigmoid(e))/de = 2*sig*(1-sig)
    de.array() *= Scalar(2) * sig.array() * (Scalar(1) - sig.array());
    return de;
  }

  Index c_r_ = 0, c_h_ = 0, z_dim_ = 0;
  Dense<Scalar> joint_, exc_r_, exc_h_;
  Relu<Scalar> relu_z_;
  GlobalAvgPool<Scalar> gap_r_, gap_h_;
  MatX<Scalar> sig_r_, sig_h_;
  Tensor4<Scalar> r_cache_, h_cache_;
};

// Aggregation A(r, h): channel-wise concatenation (RGB first) followed by
// one residual block producing the hybrid feature map.
template <typename Scalar>
class ConcatResidualAggregation {
 public:
  ConcatResidualAggregation() = default;
  ConcatResidualAggregation(const std::string& name, Index c_r, Index c_h, Index out_ch,
                            Rng& rng, double bn_eps = 1e-5, double bn_momentum = 0.1)
      : c_r_(c_r),
        c_h_(c_h),
        block_(name + ".block", c_r + c_h, out_ch, rng, bn_eps, bn_momentum) {}

  Tensor4<Scalar> forward(const Tensor4<Scalar>& r, const Tensor4<Scalar>& h, Mode mode) {
    if (r.batch() != h.batch() || r.height() != h.height() || r.width() != h.width()) {
      throw std::invalid_argument("aggregate: spatial/batch mismatch");
    }
    Tensor4<Scalar> cat(r.batch(), r.height(), r.width(), c_r_ + c_h_);
    cat.mat().leftCols(c_r_) = r.mat();
    cat.mat().rightCols(c_h_) = h.mat();
    return block_.forward(cat, mode);
  }

  std::pair<Tensor4<Scalar>, Tensor4<Scalar>> backward(const Tensor4<Scalar>& g) {
    Tensor4<Scalar> gcat = block_.backward(g);
    Tensor4<Scalar> gr(g.batch(), gcat.height(), gcat.width(), c_r_);
    Tensor4<Scalar> gh(g.batch(), gcat.height(), gcat.width(), c_h_);
    gr.mat() = gcat.mat().leftCols(c_r_);
    gh.mat() = gcat.mat().rightCols(c_h_);
    return {std::move(gr), std::move(gh)};
  }

  void collect_params(ParamRefs<Scalar>& out) { block_.collect_params(out); }
  ResidualBlock<Scalar>& block() { return block_; }

 private:
  Index c_r_ = 0, c_h_ = 0;
  ResidualBlock<Scalar> block_;
};

// Element-wise additive aggregation used by the F-AF ablation.
template <typename Scalar>
Tensor4<Scalar> aggregate_additive(const Tensor4<Scalar>& r, const Tensor4<Scalar>& h) {
  if (!r.same_shape(h)) throw std::invalid_argument("aggregate_additive: shape mismatch");
  Tensor4<Scalar> out = r;
  out.mat() += h.mat();
  return out;
}

}  // namespace flame
