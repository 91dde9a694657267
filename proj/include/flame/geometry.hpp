#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace flame {

using Vec3 = Eigen::Vector3d;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kHalfPi = kPi / 2.0;
inline constexpr double kRadToDeg = 180.0 / kPi;
inline constexpr double kDegToRad = kPi / 180.0;
inline constexpr double kDegenerateNorm = 1e-12;

// Gaze direction as rotation angles, radians.
// pitch in (-pi/2, pi/2), yaw in (-pi, pi].
struct GazeAngles {
  double pitch = 0.0;
  double yaw = 0.0;
};

// Fixed axis convention used everywhere in this project:
//   g = (-cos(pitch)*sin(yaw), -sin(pitch), -cos(pitch)*cos(yaw))
// so (0, 0) looks along -z and the result is always a unit vector.
inline Vec3 angles_to_vector(const GazeAngles& a) {
  if (!(a.pitch > -kHalfPi && a.pitch < kHalfPi)) {
    throw std::domain_error("angles_to_vector: pitch must lie strictly inside (-pi/2, pi/2)");
  }
  const double cp = std::cos(a.pitch);
  return Vec3(-cp * std::sin(a.yaw), -std::sin(a.pitch), -cp * std::cos(a.yaw));
}

// Inverse of angles_to_vector on the unit sphere. The input need not be
// normalized. |g_y| is clamped to 1 - 1e-12 before asin so exact poles
// map to angles just inside the pitch interval instead of NaN.
inline GazeAngles vector_to_angles(const Vec3& g) {
  const double n = g.norm();
  if (n < kDegenerateNorm) {
    throw std::domain_error("vector_to_angles: degenerate (near-zero) vector");
  }
  const Vec3 u = g / n;
  const double y = std::clamp(u.y(), -(1.0 - 1e-12), 1.0 - 1e-12);
  GazeAngles a;
  a.pitch = std::asin(-y);
  a.yaw = std::atan2(-u.x(), -u.z());
  return a;
}

// Angle between two gaze vectors in degrees; scale invariant.
// The cosine is clamped to [-1, 1] before acos to absorb rounding.
inline double angular_error_deg(const Vec3& gp, const Vec3& gt) {
  const double np = gp.norm();
  const double nt = gt.norm();
  if (np < kDegenerateNorm || nt < kDegenerateNorm) {
    throw std::domain_error("angular_error_deg: degenerate (near-zero) vector");
  }
  const double c = std::clamp(gp.dot(gt) / (np * nt), -1.0, 1.0);
  return std::acos(c) * kRadToDeg;
}

// Componentwise squared error between gaze vectors (the training objective).
inline double vector_loss(const Vec3& gp, const Vec3& gt) {
  return (gp - gt).squaredNorm();
}

// |d acos(x) / dx| = 1/sqrt(1-x^2): the gradient magnitude of the angular
// loss as a function of the cosine similarity. Diverges as x -> 1, which is
// why the angular loss is used for evaluation but not for training.
inline double angular_grad_magnitude(double x) {
  if (!(x > -1.0 && x < 1.0)) {
    throw std::domain_error("angular_grad_magnitude: cosine similarity must lie in (-1, 1)");
  }
  return 1.0 / std::sqrt(1.0 - x * x);
}

}  // namespace flame
