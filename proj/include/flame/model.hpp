#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>

#include "flame/fusion.hpp"
#include "flame/geometry.hpp"
#include "flame/heatmap.hpp"

namespace flame {

enum class Variant { kFlame, kFAo, kFAf, kFB, kDenseFusion };
enum class Preset { kPaper, kTiny };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kFlame: return "FLAME";
    case Variant::kFAo: return "F_AO";
    case Variant::kFAf: return "F_AF";
    case Variant::kFB: return "F_B";
    case Variant::kDenseFusion: return "DENSE_FUSION";
  }
  return "?";
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "FLAME") return Variant::kFlame;
  if (s == "F_AO") return Variant::kFAo;
  if (s == "F_AF") return Variant::kFAf;
  if (s == "F_B") return Variant::kFB;
  if (s == "DENSE_FUSION") return Variant::kDenseFusion;
  throw std::invalid_argument("unknown variant: " + s +
                              " (expected FLAME, F_AO, F_AF, F_B or DENSE_FUSION)");
}

// Head pose angle pair fed to the regression head, radians, unnormalized.
struct HeadPose {
  double pitch = 0.0;
  double yaw = 0.0;
};

struct ModelSpec {
  Variant variant = Variant::kFlame;
  int input_resolution = 120;  // 120, 60 or 30
  std::array<Index, 3> channel_plan{64, 128, 256};
  std::array<Index, 2> head_widths{512, 512};
  double dropout = 0.2;
  double heatmap_scale = 1.0;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;
  Preset preset = Preset::kPaper;

  static ModelSpec make(Variant v, int resolution = 120, Preset p = Preset::kPaper) {
    ModelSpec s;
    s.variant = v;
    s.input_resolution = resolution;
    s.preset = p;
    if (p == Preset::kTiny) {
      s.channel_plan = {8, 16, 32};
      s.head_widths = {64, 64};
    }
    s.validate();
    return s;
  }

  void validate() const {
    if (input_resolution != 120 && input_resolution != 60 && input_resolution != 30) {
      throw std::invalid_argument("ModelSpec: input_resolution must be 120, 60 or 30");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
      throw std::invalid_argument("ModelSpec: dropout must lie in [0, 1)");
    }
    for (Index c : channel_plan) {
      if (c < 1) throw std::invalid_argument("ModelSpec: channel plan entries must be >= 1");
    }
    for (Index w : head_widths) {
      if (w < 1) throw std::invalid_argument("ModelSpec: head widths must be >= 1");
    }
    if (heatmap_scale <= 0.0) {
      throw std::invalid_argument("ModelSpec: heatmap_scale must be positive");
    }
    if (!(bn_eps > 0.0)) throw std::invalid_argument("ModelSpec: bn_eps must be positive");
    if (!(bn_momentum > 0.0 && bn_momentum <= 1.0)) {
      throw std::invalid_argument("ModelSpec: bn_momentum must lie in (0, 1]");
    }
  }

  // Spatial size of the final feature map: stem pool plus one pool per
  // module, floor division each time.
  Index final_spatial() const {
    Index s = input_resolution;
    for (int i = 0; i < 4; ++i) s /= 2;
    return s;
  }

  // Widths of the dense-fusion coordinate branch modules, derived from the
  // channel plan (paper scale: 1024/512/256).
  std::array<Index, 3> coord_branch_widths() const {
    return {16 * channel_plan[0], 4 * channel_plan[1], channel_plan[2]};
  }
};

// One training/inference batch. `hm` is ignored by F_B and DENSE_FUSION;
// `coords` (28 landmarks as 56 absolute values per row) is used only by
// DENSE_FUSION.
template <typename Scalar>
struct Batch {
  Tensor4<Scalar> rgb;
  Tensor4<Scalar> hm;
  MatX<Scalar> pose;    // N x 2
  MatX<Scalar> coords;  // N x 56
};

namespace detail {

inline void check_finite(bool ok, const char* where) {
  if (!ok) {
    throw std::runtime_error(std::string("non-finite activation after ") + where);
  }
}

}  // namespace detail

// The shared CNN backbone (Fig.-5 style): 3x3 conv stem + BN + ReLU +
// 2x2/2 maxpool, then three modules of two residual blocks and a maxpool,
// with channel_plan channels per module. Stage boundaries after module 2
// and module 3 are exposed for the transfer function.
template <typename Scalar>
class Backbone {
 public:
  Backbone() = default;
  Backbone(const std::string& name, Index in_ch, const std::array<Index, 3>& plan, Rng& rng,
           double bn_eps = 1e-5, double bn_momentum = 0.1)
      : stem_conv_(name + ".stem.conv", in_ch, plan[0], 3, 1, 1, rng),
        stem_bn_(name + ".stem.bn", plan[0], bn_eps, bn_momentum),
        m1a_(name + ".m1.a", plan[0], plan[0], rng, bn_eps, bn_momentum),
        m1b_(name + ".m1.b", plan[0], plan[0], rng, bn_eps, bn_momentum),
        m2a_(name + ".m2.a", plan[0], plan[1], rng, bn_eps, bn_momentum),
        m2b_(name + ".m2.b", plan[1], plan[1], rng, bn_eps, bn_momentum),
        m3a_(name + ".m3.a", plan[1], plan[2], rng, bn_eps, bn_momentum),
        m3b_(name + ".m3.b", plan[2], plan[2], rng, bn_eps, bn_momentum) {}

  // Stem + modules 1 and 2; output is the second-last feature map.
  Tensor4<Scalar> forward_to_stage2(const Tensor4<Scalar>& x, Mode mode) {
    Tensor4<Scalar> y = stem_pool_.forward(stem_relu_.forward(stem_bn_.forward(
        stem_conv_.forward(x), mode)));
    y = pool1_.forward(m1b_.forward(m1a_.forward(y, mode), mode));
    y = pool2_.forward(m2b_.forward(m2a_.forward(y, mode), mode));
    detail::check_finite(y.all_finite(), "backbone module 2");
    return y;
  }

  // Module 3; output is the last feature map.
  Tensor4<Scalar> forward_stage3(const Tensor4<Scalar>& x, Mode mode) {
    Tensor4<Scalar> y = pool3_.forward(m3b_.forward(m3a_.forward(x, mode), mode));
    detail::check_finite(y.all_finite(), "backbone module 3");
    return y;
  }

  Tensor4<Scalar> forward(const Tensor4<Scalar>& x, Mode mode) {
    return forward_stage3(forward_to_stage2(x, mode), mode);
  }

  Tensor4<Scalar> backward_stage3(const Tensor4<Scalar>& g) {
    return m3a_.backward(m3b_.backward(pool3_.backward(g)));
  }

  Tensor4<Scalar> backward_to_stage2(const Tensor4<Scalar>& g, bool need_input_grad = true) {
    Tensor4<Scalar> y = m2a_.backward(m2b_.backward(pool2_.backward(g)));
    y = m1a_.backward(m1b_.backward(pool1_.backward(y)));
    return stem_conv_.backward(
        stem_bn_.backward(stem_relu_.backward(stem_pool_.backward(y))), need_input_grad);
  }

  Tensor4<Scalar> backward(const Tensor4<Scalar>& g, bool need_input_grad = true) {
    return backward_to_stage2(backward_stage3(g), need_input_grad);
  }

  void collect_params(ParamRefs<Scalar>& out) {
    stem_conv_.collect_params(out);
    stem_bn_.collect_params(out);
    m1a_.collect_params(out);
    m1b_.collect_params(out);
    m2a_.collect_params(out);
    m2b_.collect_params(out);
    m3a_.collect_params(out);
    m3b_.collect_params(out);
  }

 private:
  Conv2d<Scalar> stem_conv_;
  BatchNorm2d<Scalar> stem_bn_;
  Relu<Scalar> stem_relu_;
  MaxPool2x2<Scalar> stem_pool_, pool1_, pool2_, pool3_;
  ResidualBlock<Scalar> m1a_, m1b_, m2a_, m2b_, m3a_, m3b_;
};

// Fully connected branch of the Dense-Fusion baseline: a stem dense layer
// then three modules of four dense layers, each followed by BN + ReLU.
template <typename Scalar>
class CoordBranch {
 public:
  CoordBranch() = default;
  CoordBranch(const std::string& name, const std::array<Index, 3>& widths, Rng& rng,
              double bn_eps = 1e-5, double bn_momentum = 0.1)
      : bn_eps_(bn_eps), bn_momentum_(bn_momentum) {
    Index in = 2 * LandmarkSet::kNumPoints;
    add_layer(name + ".stem", in, widths[0], rng);
    in = widths[0];
    for (int m = 0; m < 3; ++m) {
      for (int l = 0; l < 4; ++l) {
        const std::string lname = name + ".m" + std::to_string(m + 1) + "." +
                                  std::to_string(l);
        add_layer(lname, in, widths[m], rng);
        in = widths[m];
      }
    }
    out_dim_ = in;
  }

  Index out_dim() const { return out_dim_; }

  MatX<Scalar> forward(const MatX<Scalar>& coords, Mode mode) {
    MatX<Scalar> y = coords;
    for (std::size_t i = 0; i < dense_.size(); ++i) {
      y = relu_[i]->forward_mat(bn_[i]->forward_mat(dense_[i]->forward(y), mode, y.rows()));
    }
    return y;
  }

  MatX<Scalar> backward(const MatX<Scalar>& g) {
    MatX<Scalar> y = g;
    for (std::size_t i = dense_.size(); i-- > 0;) {
      y = dense_[i]->backward(bn_[i]->backward_mat(relu_[i]->backward_mat(y)));
    }
    return y;
  }

  void collect_params(ParamRefs<Scalar>& out) {
    for (std::size_t i = 0; i < dense_.size(); ++i) {
      dense_[i]->collect_params(out);
      bn_[i]->collect_params(out);
    }
  }

 private:
  void add_layer(const std::string& name, Index in, Index out, Rng& rng) {
    dense_.push_back(std::make_unique<Dense<Scalar>>(name + ".fc", in, out, rng));
    bn_.push_back(
        std::make_unique<BatchNorm2d<Scalar>>(name + ".bn", out, bn_eps_, bn_momentum_));
    relu_.push_back(std::make_unique<Relu<Scalar>>());
  }

  double bn_eps_ = 1e-5, bn_momentum_ = 0.1;
  std::vector<std::unique_ptr<Dense<Scalar>>> dense_;
  std::vector<std::unique_ptr<BatchNorm2d<Scalar>>> bn_;
  std::vector<std::unique_ptr<Relu<Scalar>>> relu_;
  Index out_dim_ = 0;
};

// The full gaze regressor in any of its five variants. Forward maps a batch
// to N x 2 (pitch, yaw) angles; backward propagates a gradient on those
// angles into parameter grads and input grads.
template <typename Scalar>
class FlameNet {
 public:
  FlameNet(const ModelSpec& spec, std::uint64_t seed) : spec_(spec) {
    spec_.validate();
    Rng rng(splitmix64(seed));
    const bool has_hm_stream =
        spec_.variant != Variant::kFB && spec_.variant != Variant::kDenseFusion;

    rgb_stream_ = std::make_unique<Backbone<Scalar>>("rgb", 3, spec_.channel_plan, rng,
                                                     spec_.bn_eps, spec_.bn_momentum);
    if (has_hm_stream) {
      hm_stream_ = std::make_unique<Backbone<Scalar>>("hm", LandmarkSet::kNumPoints,
                                                      spec_.channel_plan, rng, spec_.bn_eps,
                                                      spec_.bn_momentum);
    }
    const Index c2 = spec_.channel_plan[1];
    const Index c3 = spec_.channel_plan[2];
    if (spec_.variant == Variant::kFlame) {
      mmtm2_ = std::make_unique<Mmtm<Scalar>>("t.mmtm2", c2, c2, rng);
      mmtm3_ = std::make_unique<Mmtm<Scalar>>("t.mmtm3", c3, c3, rng);
    }
    if (spec_.variant == Variant::kFlame || spec_.variant == Variant::kFAo) {
      agg_ = std::make_unique<ConcatResidualAggregation<Scalar>>(
          "agg", c3, c3, c3, rng, spec_.bn_eps, spec_.bn_momentum);
    }
    if (spec_.variant == Variant::kDenseFusion) {
      coord_branch_ = std::make_unique<CoordBranch<Scalar>>(
          "coord", spec_.coord_branch_widths(), rng, spec_.bn_eps, spec_.bn_momentum);
    }

    const Index s = spec_.final_spatial();
    flat_width_ = s * s * c3;
    head_in_ = flat_width_ + 2 +
               (spec_.variant == Variant::kDenseFusion ? coord_branch_->out_dim() : 0);
    fc1_ = Dense<Scalar>("head.fc1", head_in_, spec_.head_widths[0], rng);
    fc2_ = Dense<Scalar>("head.fc2", spec_.head_widths[0], spec_.head_widths[1], rng);
    fc_out_ = Dense<Scalar>("head.out", spec_.head_widths[1], 2, rng);
    // The residual stack feeds the head activations with rms well above 1,
    // and the outputs are angles in radians: a full-gain output layer would
    // start predictions several radians out, where the periodic loss gives
    // no usable descent direction. Shrink only the output layer's init.
    fc_out_.weight().value *= Scalar(0.01);
    drop1_ = Dropout<Scalar>(spec_.dropout, splitmix64(seed ^ 0xd401));
    drop2_ = Dropout<Scalar>(spec_.dropout, splitmix64(seed ^ 0xd402));
  }

  const ModelSpec& spec() const { return spec_; }
  Index head_input_width() const { return head_in_; }

  void reseed_dropout(std::uint64_t seed) {
    drop1_.reseed(splitmix64(seed ^ 0xd401));
    drop2_.reseed(splitmix64(seed ^ 0xd402));
  }

  void collect_params(ParamRefs<Scalar>& out) {
    rgb_stream_->collect_params(out);
    if (hm_stream_) hm_stream_->collect_params(out);
    if (mmtm2_) mmtm2_->collect_params(out);
    if (mmtm3_) mmtm3_->collect_params(out);
    if (agg_) agg_->collect_params(out);
    if (coord_branch_) coord_branch_->collect_params(out);
    fc1_.collect_params(out);
    fc2_.collect_params(out);
    fc_out_.collect_params(out);
  }

  void zero_grad() {
    ParamRefs<Scalar> ps;
    collect_params(ps);
    for (auto* p : ps) p->zero_grad();
  }

  Mmtm<Scalar>* mmtm_stage2() { return mmtm2_.get(); }
  Mmtm<Scalar>* mmtm_stage3() { return mmtm3_.get(); }

  MatX<Scalar> forward(const Batch<Scalar>& batch, Mode mode) {
    validate_batch(batch);
    const Index n = batch.rgb.batch();

    Tensor4<Scalar> final_map;
    MatX<Scalar> coord_feat;
    switch (spec_.variant) {
      case Variant::kFB:
      case Variant::kDenseFusion:
        final_map = rgb_stream_->forward(batch.rgb, mode);
        if (spec_.variant == Variant::kDenseFusion) {
          coord_feat = coord_branch_->forward(batch.coords, mode);
        }
        break;
      case Variant::kFAf: {
        Tensor4<Scalar> r = rgb_stream_->forward(batch.rgb, mode);
        Tensor4<Scalar> h = hm_stream_->forward(batch.hm, mode);
        final_map = aggregate_additive(r, h);
        break;
      }
      case Variant::kFAo: {
        Tensor4<Scalar> r = rgb_stream_->forward(batch.rgb, mode);
        Tensor4<Scalar> h = hm_stream_->forward(batch.hm, mode);
        final_map = agg_->forward(r, h, mode);
        break;
      }
      case Variant::kFlame: {
        Tensor4<Scalar> r2 = rgb_stream_->forward_to_stage2(batch.rgb, mode);
        Tensor4<Scalar> h2 = hm_stream_->forward_to_stage2(batch.hm, mode);
        auto [r2c, h2c] = mmtm2_->forward(r2, h2);
        Tensor4<Scalar> r3 = rgb_stream_->forward_stage3(r2c, mode);
        Tensor4<Scalar> h3 = hm_stream_->forward_stage3(h2c, mode);
        auto [r3c, h3c] = mmtm3_->forward(r3, h3);
        final_map = agg_->forward(r3c, h3c, mode);
        break;
      }
    }
    detail::check_finite(final_map.all_finite(), "aggregation");

    MatX<Scalar> z(n, head_in_);
    z.leftCols(flat_width_) = flatten_.forward(final_map);
    if (spec_.variant == Variant::kDenseFusion) {
      z.middleCols(flat_width_, coord_branch_->out_dim()) = coord_feat;
    }
    z.rightCols(2) = batch.pose;

    MatX<Scalar> y = drop1_.forward(relu1_.forward_mat(fc1_.forward(z)), mode);
    y = drop2_.forward(relu2_.forward_mat(fc2_.forward(y)), mode);
    y = fc_out_.forward(y);
    detail::check_finite(y.allFinite(), "regression head");
    return y;
  }

  struct InputGrads {
    Tensor4<Scalar> rgb;
    Tensor4<Scalar> hm;
    MatX<Scalar> pose;
    MatX<Scalar> coords;
  };

  // Backward for the most recent forward. Accumulates parameter gradients
  // and returns the gradients with respect to the batch inputs; pass
  // want_input_grads = false (training) to skip the image-gradient work.
  InputGrads backward(const MatX<Scalar>& g_angles, bool want_input_grads = true) {
    MatX<Scalar> g = fc_out_.backward(g_angles);
    g = fc2_.backward(relu2_.backward_mat(drop2_.backward(g)));
    g = fc1_.backward(relu1_.backward_mat(drop1_.backward(g)));

    InputGrads grads;
    grads.pose = g.rightCols(2);
    Tensor4<Scalar> g_map = flatten_.backward(g.leftCols(flat_width_));

    switch (spec_.variant) {
      case Variant::kFB:
      case Variant::kDenseFusion:
        if (spec_.variant == Variant::kDenseFusion) {
          grads.coords =
              coord_branch_->backward(g.middleCols(flat_width_, coord_branch_->out_dim()));
        }
        grads.rgb = rgb_stream_->backward(g_map, want_input_grads);
        break;
      case Variant::kFAf:
        grads.rgb = rgb_stream_->backward(g_map, want_input_grads);
        grads.hm = hm_stream_->backward(g_map, want_input_grads);
        break;
      case Variant::kFAo: {
        auto [gr, gh] = agg_->backward(g_map);
        grads.rgb = rgb_stream_->backward(gr, want_input_grads);
        grads.hm = hm_stream_->backward(gh, want_input_grads);
        break;
      }
      case Variant::kFlame: {
        auto [gr3c, gh3c] = agg_->backward(g_map);
        auto [gr3, gh3] = mmtm3_->backward(gr3c, gh3c);
        Tensor4<Scalar> gr2c = rgb_stream_->backward_stage3(gr3);
        Tensor4<Scalar> gh2c = hm_stream_->backward_stage3(gh3);
        auto [gr2, gh2] = mmtm2_->backward(gr2c, gh2c);
        grads.rgb = rgb_stream_->backward_to_stage2(gr2, want_input_grads);
        grads.hm = hm_stream_->backward_to_stage2(gh2, want_input_grads);
        break;
      }
    }
    return grads;
  }

 private:
  void validate_batch(const Batch<Scalar>& batch) const {
    const Index r = spec_.input_resolution;
    const Index n = batch.rgb.batch();
    if (n < 1) throw std::invalid_argument("forward: empty batch");
    if (batch.rgb.height() != r || batch.rgb.width() != r || batch.rgb.channels() != 3) {
      throw std::invalid_argument("forward: rgb batch shape does not match spec resolution");
    }
    if (batch.pose.rows() != n || batch.pose.cols() != 2) {
      throw std::invalid_argument("forward: pose must be N x 2");
    }
    const bool needs_hm =
        spec_.variant != Variant::kFB && spec_.variant != Variant::kDenseFusion;
    if (needs_hm) {
      if (batch.hm.batch() != n || batch.hm.height() != r || batch.hm.width() != r ||
          batch.hm.channels() != LandmarkSet::kNumPoints) {
        throw std::invalid_argument("forward: heatmap batch shape mismatch");
      }
    }
    if (spec_.variant == Variant::kDenseFusion) {
      if (batch.coords.rows() != n || batch.coords.cols() != 2 * LandmarkSet::kNumPoints) {
        throw std::invalid_argument("forward: coords must be N x 56");
      }
    }
  }

  ModelSpec spec_;
  Index flat_width_ = 0, head_in_ = 0;

  std::unique_ptr<Backbone<Scalar>> rgb_stream_, hm_stream_;
  std::unique_ptr<Mmtm<Scalar>> mmtm2_, mmtm3_;
  std::unique_ptr<ConcatResidualAggregation<Scalar>> agg_;
  std::unique_ptr<CoordBranch<Scalar>> coord_branch_;

  Flatten<Scalar> flatten_;
  Dense<Scalar> fc1_, fc2_, fc_out_;
  Relu<Scalar> relu1_, relu2_;
  Dropout<Scalar> drop1_, drop2_;
};

// ---------------------------------------------------------------------------
// Differentiable training objectives on the predicted (pitch, yaw) angles.
// ---------------------------------------------------------------------------

// Converts one angle row to the gaze vector of the fixed convention.
// No domain check here: during training the head may predict any angles.
template <typename Scalar>
Eigen::Matrix<Scalar, 1, 3> angles_row_to_vector(Scalar pitch, Scalar yaw) {
  const Scalar cp = std::cos(pitch), sp = std::sin(pitch);
  const Scalar cy = std::cos(yaw), sy = std::sin(yaw);
  return {-cp * sy, -sp, -cp * cy};
}

// Mean componentwise squared gaze-vector error over the batch (Eq.-8 style),
// differentiated through the angle-to-vector map. `target_vec` rows are the
// (not necessarily unit) true gaze vectors; callers pass unit vectors.
template <typename Scalar>
Scalar vector_loss_batch(const MatX<Scalar>& pred_angles, const MatX<Scalar>& target_vec,
                         MatX<Scalar>* grad_angles = nullptr) {
  const Index n = pred_angles.rows();
  if (target_vec.rows() != n || pred_angles.cols() != 2 || target_vec.cols() != 3) {
    throw std::invalid_argument("vector_loss_batch: shape mismatch");
  }
  if (grad_angles) grad_angles->setZero(n, 2);

  Scalar total = 0;
  for (Index i = 0; i < n; ++i) {
    const Scalar p = pred_angles(i, 0), y = pred_angles(i, 1);
    const Scalar cp = std::cos(p), sp = std::sin(p);
    const Scalar cy = std::cos(y), sy = std::sin(y);
    const Eigen::Matrix<Scalar, 1, 3> v(-cp * sy, -sp, -cp * cy);
    const Eigen::Matrix<Scalar, 1, 3> d = v - target_vec.row(i);
    total += d.squaredNorm();
    if (grad_angles) {
      // Jacobian of v wrt (pitch, yaw).
      const Scalar dvx_dp = sp * sy, dvx_dy = -cp * cy;
      const Scalar dvy_dp = -cp;
      const Scalar dvz_dp = sp * cy, dvz_dy = cp * sy;
      const Scalar s = Scalar(2) / static_cast<Scalar>(n);
      (*grad_angles)(i, 0) = s * (d(0) * dvx_dp + d(1) * dvy_dp + d(2) * dvz_dp);
      (*grad_angles)(i, 1) = s * (d(0) * dvx_dy + d(2) * dvz_dy);
    }
  }
  return total / static_cast<Scalar>(n);
}

// Mean 3D angular loss (radians) with the arccos gradient; exposed for the
// optional --loss angular training path. Unstable as predictions approach
// the targets, which is exactly the Eq.-7 argument for the vector loss.
template <typename Scalar>
Scalar angular_loss_batch(const MatX<Scalar>& pred_angles, const MatX<Scalar>& target_vec,
                          MatX<Scalar>* grad_angles = nullptr) {
  const Index n = pred_angles.rows();
  if (target_vec.rows() != n || pred_angles.cols() != 2 || target_vec.cols() != 3) {
    throw std::invalid_argument("angular_loss_batch: shape mismatch");
  }
  if (grad_angles) grad_angles->setZero(n, 2);

  Scalar total = 0;
  for (Index i = 0; i < n; ++i) {
    const Scalar p = pred_angles(i, 0), y = pred_angles(i, 1);
    const Scalar cp = std::cos(p), sp = std::sin(p);
    const Scalar cy = std::cos(y), sy = std::sin(y);
    const Eigen::Matrix<Scalar, 1, 3> v(-cp * sy, -sp, -cp * cy);
    Eigen::Matrix<Scalar, 1, 3> t = target_vec.row(i);
    const Scalar tn = t.norm();
    if (tn < Scalar(kDegenerateNorm)) {
      throw std::domain_error("angular_loss_batch: degenerate target vector");
    }
    t /= tn;
    const Scalar x = std::clamp<Scalar>(v.dot(t), Scalar(-1) + Scalar(1e-12),
                                        Scalar(1) - Scalar(1e-12));
    total += std::acos(x);
    if (grad_angles) {
      // dL/dv = -t / sqrt(1 - x^2), averaged over the batch.
      const Scalar dacos = Scalar(-1) / std::sqrt(Scalar(1) - x * x);
      const Eigen::Matrix<Scalar, 1, 3> dv = dacos * t / static_cast<Scalar>(n);
      const Scalar dvx_dp = sp * sy, dvx_dy = -cp * cy;
      const Scalar dvy_dp = -cp;
      const Scalar dvz_dp = sp * cy, dvz_dy = cp * sy;
      (*grad_angles)(i, 0) = dv(0) * dvx_dp + dv(1) * dvy_dp + dv(2) * dvz_dp;
      (*grad_angles)(i, 1) = dv(0) * dvx_dy + dv(2) * dvz_dy;
    }
  }
  return total / static_cast<Scalar>(n);
}

}  // namespace flame
