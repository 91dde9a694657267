#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "flame/image.hpp"
#include "flame/tensor.hpp"

namespace flame {

// Peak value of an isotropic unit-covariance 2D Gaussian.
inline constexpr double kHeatmapPeak = 1.0 / (2.0 * std::numbers::pi);

// 28 ordered 2D eye landmarks in pixel coordinates (pixel (i, j) spans
// [j, j+1) x [i, i+1), so its center is at (j+0.5, i+0.5)).
// Index layout used throughout this project:
//   0..11  outer eye outline (12 points, counter indices at angle 2*pi*k/12)
//   12..19 cornea / iris outline (8 points)
//   20..27 pupil outline (8 points)
struct LandmarkSet {
  static constexpr int kNumPoints = 28;
  static constexpr int kOuterBegin = 0;
  static constexpr int kCorneaBegin = 12;
  static constexpr int kPupilBegin = 20;

  Eigen::Matrix<double, kNumPoints, 2> points;  // columns: x, y

  LandmarkSet() { points.setZero(); }

  explicit LandmarkSet(const std::vector<std::array<double, 2>>& pts) {
    if (pts.size() != kNumPoints) {
      throw std::invalid_argument("LandmarkSet: expected 28 points, got " +
                                  std::to_string(pts.size()));
    }
    for (int i = 0; i < kNumPoints; ++i) {
      points(i, 0) = pts[i][0];
      points(i, 1) = pts[i][1];
    }
    require_finite();
  }

  void require_finite() const {
    if (!points.allFinite()) {
      throw std::invalid_argument("LandmarkSet: non-finite coordinate");
    }
  }

  Eigen::Vector2d point(int i) const { return points.row(i).transpose(); }

  LandmarkSet translated(double dx, double dy) const {
    LandmarkSet out = *this;
    out.points.col(0).array() += dx;
    out.points.col(1).array() += dy;
    return out;
  }

  LandmarkSet scaled(double factor) const {
    LandmarkSet out = *this;
    out.points *= factor;
    return out;
  }
};

// The four outer-eye extremes (right, bottom, left, top of the outline)
// whose mean defines the eye center for patch extraction.
inline constexpr std::array<int, 4> kEyeCornerIndices{0, 3, 6, 9};

inline Eigen::Vector2d eye_center(const LandmarkSet& lm) {
  lm.require_finite();
  Eigen::Vector2d c = Eigen::Vector2d::Zero();
  for (int i : kEyeCornerIndices) c += lm.point(i);
  return c / 4.0;
}

// One Gaussian probability channel per landmark, evaluated at pixel centers:
// value(c, px, py) = scale/(2*pi) * exp(-0.5*||(px+0.5, py+0.5) - mu_c||^2).
// Landmarks outside the image just leave small tails inside the frame.
template <typename Scalar>
Tensor4<Scalar> gaussian_heatmap(const LandmarkSet& lm, Index width, Index height,
                                 double scale = 1.0) {
  if (width < 1 || height < 1) {
    throw std::invalid_argument("gaussian_heatmap: width and height must be >= 1");
  }
  lm.require_finite();

  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  Tensor4<Scalar> out =
      Tensor4<Scalar>::uninitialized(1, height, width, LandmarkSet::kNumPoints);
  const Scalar amp = static_cast<Scalar>(scale * kHeatmapPeak);

  Vec ex(width), ey(height);
  for (int c = 0; c < LandmarkSet::kNumPoints; ++c) {
    const Scalar mx = static_cast<Scalar>(lm.points(c, 0));
    const Scalar my = static_cast<Scalar>(lm.points(c, 1));
    for (Index x = 0; x < width; ++x) {
      const Scalar d = static_cast<Scalar>(x) + Scalar(0.5) - mx;
      ex(x) = std::exp(Scalar(-0.5) * d * d);
    }
    for (Index y = 0; y < height; ++y) {
      const Scalar d = static_cast<Scalar>(y) + Scalar(0.5) - my;
      ey(y) = std::exp(Scalar(-0.5) * d * d);
    }
    // Row index of (y, x) is y*width + x: column-major (width x height)
    // map filled with the separable outer product.
    Eigen::Map<MatX<Scalar>> channel(out.mat().col(c).data(), width, height);
    channel.noalias() = (amp * ex) * ey.transpose();
  }
  return out;
}

inline long long round_half_away(double v) { return std::llround(v); }

// Axis-aligned size x size crop centered at the rounded center; source
// pixels outside the image are zero. The same geometry applies to any
// channel count, which keeps RGB and heatmap crops pixel-aligned.
template <typename Scalar>
Tensor4<Scalar> crop_patch(const Tensor4<Scalar>& t, const Eigen::Vector2d& center,
                           Index size, double guard = 2.0) {
  if (t.batch() != 1) throw std::invalid_argument("crop_patch: expects a single image");
  if (size < 1) throw std::invalid_argument("crop_patch: size must be >= 1");
  if (static_cast<double>(size) > guard * static_cast<double>(std::max(t.height(), t.width()))) {
    throw std::invalid_argument("crop_patch: size exceeds guard * image extent");
  }

  const Index tlx = static_cast<Index>(round_half_away(center.x())) - size / 2;
  const Index tly = static_cast<Index>(round_half_away(center.y())) - size / 2;

  Tensor4<Scalar> out(1, size, size, t.channels());
  const Index x_lo = std::max<Index>(0, -tlx);
  const Index x_hi = std::min<Index>(size, t.width() - tlx);
  for (Index py = 0; py < size; ++py) {
    const Index sy = tly + py;
    if (sy < 0 || sy >= t.height() || x_lo >= x_hi) continue;
    for (Index c = 0; c < t.channels(); ++c) {
      out.mat().col(c).segment(py * size + x_lo, x_hi - x_lo) =
          t.mat().col(c).segment(sy * t.width() + tlx + x_lo, x_hi - x_lo);
    }
  }
  return out;
}

// Bilinear resampling with half-pixel-center sampling:
// source coordinate s = (i + 0.5) * (in/out) - 0.5, clamped to borders.
template <typename Scalar>
Tensor4<Scalar> bilinear_resize(const Tensor4<Scalar>& t, Index out_h, Index out_w) {
  if (t.batch() != 1) throw std::invalid_argument("bilinear_resize: expects a single image");
  if (out_h < 1 || out_w < 1) {
    throw std::invalid_argument("bilinear_resize: target must be >= 1");
  }

  const Index in_h = t.height(), in_w = t.width();
  struct Taps {
    Index lo, hi;
    Scalar w_hi;
  };
  auto make_taps = [](Index out_n, Index in_n) {
    std::vector<Taps> taps(out_n);
    const double ratio = static_cast<double>(in_n) / static_cast<double>(out_n);
    for (Index i = 0; i < out_n; ++i) {
      double s = (static_cast<double>(i) + 0.5) * ratio - 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(in_n - 1));
      const Index lo = static_cast<Index>(std::floor(s));
      taps[i] = {lo, std::min(lo + 1, in_n - 1), static_cast<Scalar>(s - std::floor(s))};
    }
    return taps;
  };
  const auto ty = make_taps(out_h, in_h);
  const auto tx = make_taps(out_w, in_w);

  Tensor4<Scalar> out(1, out_h, out_w, t.channels());
  for (Index c = 0; c < t.channels(); ++c) {
    for (Index y = 0; y < out_h; ++y) {
      const Scalar wy = ty[y].w_hi;
      for (Index x = 0; x < out_w; ++x) {
        const Scalar wx = tx[x].w_hi;
        const Scalar v00 = t(0, ty[y].lo, tx[x].lo, c);
        const Scalar v01 = t(0, ty[y].lo, tx[x].hi, c);
        const Scalar v10 = t(0, ty[y].hi, tx[x].lo, c);
        const Scalar v11 = t(0, ty[y].hi, tx[x].hi, c);
        out(0, y, x, c) = (Scalar(1) - wy) * ((Scalar(1) - wx) * v00 + wx * v01) +
                          wy * ((Scalar(1) - wx) * v10 + wx * v11);
      }
    }
  }
  return out;
}

// Square downscale used by the input-resolution study.
template <typename Scalar>
Tensor4<Scalar> bilinear_downscale(const Tensor4<Scalar>& t, Index target) {
  if (target < 1) throw std::invalid_argument("bilinear_downscale: target must be >= 1");
  if (t.height() != t.width()) {
    throw std::invalid_argument("bilinear_downscale: input must be square");
  }
  if (target > t.height()) {
    throw std::invalid_argument("bilinear_downscale: target exceeds input size");
  }
  return bilinear_resize(t, target, target);
}

// 8-bit image to a scalar tensor in [0, 1].
template <typename Scalar>
Tensor4<Scalar> image_to_tensor(const ImageU8& img) {
  Tensor4<Scalar> t(1, img.height, img.width, 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        t(0, y, x, c) = static_cast<Scalar>(img.at(x, y, c)) / Scalar(255);
      }
    }
  }
  return t;
}

}  // namespace flame
