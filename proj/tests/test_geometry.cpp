#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <flame/geometry.hpp>
#include <flame/rng.hpp>

using namespace flame;

TEST_CASE("angles_to_vector convention") {
  Vec3 g = angles_to_vector({0.0, 0.0});
  CHECK(g.x() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(g.y() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(g.z() == doctest::Approx(-1.0).epsilon(1e-12));

  // (0, pi/2): evaluating the convention gives exactly (-1, 0, -cos(pi/2)).
  g = angles_to_vector({0.0, kHalfPi});
  CHECK(std::abs(g.x() + 1.0) < 1e-12);
  CHECK(std::abs(g.y()) < 1e-12);
  CHECK(std::abs(g.z()) < 1e-12);

  // Approaching the pitch pole the vector tends to (0, -1, 0).
  g = angles_to_vector({kHalfPi - 1e-9, 0.0});
  CHECK(std::abs(g.y() + 1.0) < 1e-12);
  CHECK(std::abs(g.x()) < 1e-8);
  CHECK(std::abs(g.z()) < 1e-8);

  // Unit norm for arbitrary angles.
  Rng rng(12345);
  for (int i = 0; i < 100; ++i) {
    GazeAngles a{rng.uniform(-kHalfPi + 1e-6, kHalfPi - 1e-6), rng.uniform(-kPi, kPi)};
    CHECK(std::abs(angles_to_vector(a).norm() - 1.0) < 1e-12);
  }

  CHECK_THROWS_AS(angles_to_vector({kHalfPi, 0.0}), std::domain_error);
  CHECK_THROWS_AS(angles_to_vector({-kHalfPi - 0.1, 0.0}), std::domain_error);
}

TEST_CASE("vector_to_angles inverts the convention") {
  GazeAngles a = vector_to_angles(Vec3(0, 0, -1));
  CHECK(a.pitch == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(a.yaw == doctest::Approx(0.0).epsilon(1e-12));

  // Pole: clamped strictly inside the pitch interval, no NaN.
  a = vector_to_angles(Vec3(0, -1, 0));
  CHECK(std::isfinite(a.pitch));
  CHECK(a.pitch < kHalfPi - 1e-9);
  CHECK(a.pitch > kHalfPi - 1e-5);

  CHECK_THROWS_AS(vector_to_angles(Vec3(0, 0, 0)), std::domain_error);
  CHECK_THROWS_AS(vector_to_angles(Vec3(1e-13, 0, 0)), std::domain_error);
}

TEST_CASE("angles round trip, 1000 seeded samples") {
  Rng rng(777);
  const double lim = 89.0 * kDegToRad;
  for (int i = 0; i < 1000; ++i) {
    GazeAngles a{rng.uniform(-lim, lim), rng.uniform(-kPi + 1e-9, kPi)};
    const Vec3 g = angles_to_vector(a);
    const GazeAngles b = vector_to_angles(g);
    CHECK(std::abs(b.pitch - a.pitch) < 1e-9);
    CHECK(std::abs(b.yaw - a.yaw) < 1e-9);
    // And vector -> angles -> vector reproduces the unit vector.
    const Vec3 g2 = angles_to_vector(b);
    CHECK((g2 - g).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("angular_error basics") {
  const Vec3 f(0, 0, -1);
  CHECK(angular_error_deg(f, f) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(angular_error_deg(Vec3(1, 0, 0), Vec3(0, 1, 0)) == doctest::Approx(90.0));
  // Scale invariance (Eq. is normalized by both norms).
  CHECK(angular_error_deg(Vec3(2, 0, 0), Vec3(1, 0, 0)) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK_THROWS_AS(angular_error_deg(Vec3(0, 0, 0), f), std::domain_error);
}

TEST_CASE("angular_error scale invariance and symmetry") {
  Rng rng(31);
  for (int i = 0; i < 200; ++i) {
    Vec3 a(rng.normal(), rng.normal(), rng.normal());
    Vec3 b(rng.normal(), rng.normal(), rng.normal());
    if (a.norm() < 1e-6 || b.norm() < 1e-6) continue;
    const double e = angular_error_deg(a, b);
    const double k = rng.uniform(0.1, 10.0);
    CHECK(std::abs(angular_error_deg(k * a, b) - e) <= 1e-12);
    CHECK(angular_error_deg(b, a) == doctest::Approx(e).epsilon(1e-12));
  }
}

TEST_CASE("vector_loss values and identity with angular error") {
  CHECK(vector_loss(Vec3(1, 2, 3), Vec3(1, 2, 3)) == 0.0);
  CHECK(vector_loss(Vec3(1, 0, 0), Vec3(0, 1, 0)) == doctest::Approx(2.0));

  // For unit vectors at angle theta: |a-b|^2 = 2(1 - cos theta).
  Rng rng(99);
  for (int i = 0; i < 1000; ++i) {
    Vec3 a(rng.normal(), rng.normal(), rng.normal());
    Vec3 b(rng.normal(), rng.normal(), rng.normal());
    if (a.norm() < 1e-6 || b.norm() < 1e-6) continue;
    a.normalize();
    b.normalize();
    const double theta = angular_error_deg(a, b) * kDegToRad;
    CHECK(std::abs(vector_loss(a, b) - 2.0 * (1.0 - std::cos(theta))) < 1e-9);
    CHECK(vector_loss(a, b) == doctest::Approx(vector_loss(b, a)).epsilon(1e-15));
  }
}

TEST_CASE("angular_grad_magnitude") {
  CHECK(angular_grad_magnitude(0.0) == doctest::Approx(1.0));
  CHECK(angular_grad_magnitude(0.8) == doctest::Approx(1.0 / 0.6));
  CHECK(angular_grad_magnitude(0.9999) > 70.0);

  // Strictly increasing on the grid {0, 0.1, ..., 0.99}.
  double prev = angular_grad_magnitude(0.0);
  for (double x = 0.1; x < 1.0; x += 0.1) {
    const double cur = angular_grad_magnitude(std::min(x, 0.99));
    CHECK(cur > prev);
    prev = cur;
  }

  CHECK_THROWS_AS(angular_grad_magnitude(1.0), std::domain_error);
  CHECK_THROWS_AS(angular_grad_magnitude(-1.0), std::domain_error);
}
