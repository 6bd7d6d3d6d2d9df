#include "doctest.h"

#include <cmath>
#include <numbers>
#include <random>

#include "genpose/errors.hpp"
#include "genpose/geometry.hpp"
#include "oracles.hpp"

using namespace genpose;
constexpr double kPi = std::numbers::pi;

TEST_CASE("geodesic distance basics") {
  const Rotation id;
  CHECK(geodesic_distance(id, id) == doctest::Approx(0.0));
  const Rotation half = Rotation::from_axis_angle(Vec3::UnitZ(), kPi);
  CHECK(geodesic_distance(id, half) == doctest::Approx(kPi).epsilon(1e-12).scale(1e-12));

  const Rotation q(0.3, -0.2, 0.5, 0.1);
  const Rotation neg(-q.w(), -q.x(), -q.y(), -q.z());
  CHECK(geodesic_distance(q, neg) == doctest::Approx(0.0));
  CHECK(geodesic_distance(neg, id) == doctest::Approx(geodesic_distance(q, id)).epsilon(1e-12).scale(1e-12));
}

TEST_CASE("geodesic distance matches the trace formula") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 200; ++i) {
    const Rotation a = oracle::random_rotation(rng);
    const Rotation b = oracle::random_rotation(rng);
    const double expected = oracle::trace_angle(a.matrix(), b.matrix());
    CHECK(geodesic_distance(a, b) == doctest::Approx(expected).epsilon(1e-6).scale(1e-12));
    CHECK(geodesic_distance(a, b) == doctest::Approx(geodesic_distance(b, a)).epsilon(1e-12).scale(1e-12));
  }
}

TEST_CASE("geodesic distance triangle inequality") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 500; ++i) {
    const Rotation a = oracle::random_rotation(rng);
    const Rotation b = oracle::random_rotation(rng);
    const Rotation c = oracle::random_rotation(rng);
    CHECK(geodesic_distance(a, c) <= geodesic_distance(a, b) + geodesic_distance(b, c) + 1e-9);
  }
}

TEST_CASE("rotation rejects non-finite input") {
  CHECK_THROWS_AS(Rotation(NAN, 0, 0, 0), InvalidArgument);
  CHECK_THROWS_AS(Rotation(0, 0, 0, 0), InvalidArgument);
}

TEST_CASE("pose composed with its inverse is identity") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    const Pose p{oracle::random_rotation(rng), Vec3(n(rng), n(rng), n(rng))};
    const Pose e = p * p.inverse();
    CHECK(geodesic_distance(e.rotation, Rotation()) < 1e-9);
    CHECK(e.translation.norm() < 1e-9);
    CHECK(std::abs(p.rotation.quaternion().norm() - 1.0) < 1e-12);
  }
}

TEST_CASE("quaternion mean examples") {
  const Rotation q(0.9, 0.1, -0.3, 0.2);
  const std::vector<Rotation> twice{q, q};
  CHECK(geodesic_distance(quaternion_mean(twice), q) < 1e-9);

  const std::vector<Rotation> signs{q, Rotation(-q.w(), -q.x(), -q.y(), -q.z())};
  CHECK(geodesic_distance(quaternion_mean(signs), q) < 1e-9);

  // Same-axis midpoint oracle.
  const Vec3 axis = Vec3(1, 2, -1).normalized();
  for (auto [t1, t2] : {std::pair{0.2, 1.4}, std::pair{-1.0, 2.0}, std::pair{2.5, -0.4}}) {
    const std::vector<Rotation> pair{Rotation::from_axis_angle(axis, t1), Rotation::from_axis_angle(axis, t2)};
    const Rotation expected = Rotation::from_axis_angle(axis, 0.5 * (t1 + t2));
    CHECK(geodesic_distance(quaternion_mean(pair), expected) < 1e-9);
  }

  CHECK_THROWS_AS(quaternion_mean(std::vector<Rotation>{}), InvalidArgument);
}

TEST_CASE("quaternion mean is order and sign invariant") {
  std::mt19937_64 rng(5);
  std::vector<Rotation> rots;
  const Rotation center = oracle::random_rotation(rng);
  for (int i = 0; i < 20; ++i) {
    rots.push_back(center * Rotation::from_rotation_vector(0.2 * oracle::random_unit(rng)));
  }
  const Rotation m = quaternion_mean(rots);
  std::vector<Rotation> shuffled = rots;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  for (std::size_t i = 0; i < shuffled.size(); i += 2) {
    const auto& q = shuffled[i];
    shuffled[i] = Rotation(-q.w(), -q.x(), -q.y(), -q.z());
  }
  CHECK(geodesic_distance(quaternion_mean(shuffled), m) < 1e-9);
}

TEST_CASE("quaternion mean converges for symmetric samples") {
  std::mt19937_64 rng(17);
  const Rotation center = oracle::random_rotation(rng);
  std::uniform_real_distribution<double> u(0.0, 0.3);
  std::vector<Rotation> rots;
  for (int i = 0; i < 5000; ++i) {
    const Vec3 omega = u(rng) * oracle::random_unit(rng);
    rots.push_back(center * Rotation::from_rotation_vector(omega));
    rots.push_back(center * Rotation::from_rotation_vector(-omega));
  }
  CHECK(geodesic_distance(quaternion_mean(rots), center) < 0.05);
}

TEST_CASE("project point") {
  CameraIntrinsics k{500, 500, 320, 240, 640, 480};
  const Vec2 c = project_point(k, Vec3(0, 0, 1));
  CHECK(c.x() == doctest::Approx(320));
  CHECK(c.y() == doctest::Approx(240));
  const Vec2 p = project_point(k, Vec3(0.1, 0, 1));
  CHECK(p.x() == doctest::Approx(370));
  CHECK(p.y() == doctest::Approx(240));
  CHECK_THROWS_AS(project_point(k, Vec3(0, 0, -1)), BehindCamera);

  const Vec3 q(0.3, -0.2, 2.0);
  for (double lambda : {0.5, 2.0, 13.0}) {
    CHECK((project_point(k, lambda * q) - project_point(k, q)).norm() < 1e-9);
  }
}

TEST_CASE("box iou closed forms") {
  OrientedBox a{Vec3::Zero(), Rotation(), Vec3::Ones()};
  CHECK(box_iou(a, a) == doctest::Approx(1.0).epsilon(1e-12).scale(1e-12));

  OrientedBox b = a;
  b.center = Vec3(0.5, 0, 0);
  CHECK(std::abs(box_iou(a, b) - 1.0 / 3.0) < 1e-9);
  CHECK(std::abs(box_iou(b, a) - 1.0 / 3.0) < 1e-9);

  OrientedBox far = a;
  far.center = Vec3(5, 0, 0);
  CHECK(box_iou(a, far) == 0.0);

  // Contained box.
  OrientedBox small{Vec3(0.1, 0, 0), Rotation::from_axis_angle(Vec3::UnitZ(), 0.3), Vec3(0.2, 0.2, 0.2)};
  CHECK(box_iou(a, small) == doctest::Approx(0.008).epsilon(1e-9).scale(1e-12));

  OrientedBox bad = a;
  bad.extents = Vec3(1, 0, 1);
  CHECK_THROWS_AS(box_iou(a, bad), InvalidArgument);
}

TEST_CASE("box iou agrees with Monte-Carlo sampling") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> ext(0.3, 1.5);
  std::normal_distribution<double> off(0.0, 0.4);
  for (int i = 0; i < 10; ++i) {
    const OrientedBox a{Vec3::Zero(), oracle::random_rotation(rng), Vec3(ext(rng), ext(rng), ext(rng))};
    const OrientedBox b{Vec3(off(rng), off(rng), off(rng)), oracle::random_rotation(rng),
                        Vec3(ext(rng), ext(rng), ext(rng))};
    const double exact = box_iou(a, b);
    CHECK(exact == doctest::Approx(box_iou(b, a)).epsilon(1e-9).scale(1e-12));
    CHECK(std::abs(exact - oracle::monte_carlo_iou(a, b, 200000, rng)) < 0.01);
  }
}

TEST_CASE("sixd readout") {
  Vec6 v;
  v << 1, 0, 0, 0, 1, 0;
  CHECK(geodesic_distance(sixd_to_rotation(v), Rotation()) < 1e-12);
  v << 2, 0, 0, 0, 3, 0;
  CHECK(geodesic_distance(sixd_to_rotation(v), Rotation()) < 1e-12);

  std::mt19937_64 rng(29);
  for (int i = 0; i < 100; ++i) {
    const Rotation r = oracle::random_rotation(rng);
    const Mat3 m = r.matrix();
    Vec6 cols;
    cols << m.col(0), m.col(1);
    CHECK(geodesic_distance(sixd_to_rotation(cols), r) < 1e-9);
    CHECK((sixd_to_rotation(cols).matrix() - m).norm() < 1e-9);
  }

  v << 1, 0, 0, 2, 0, 0;
  CHECK_THROWS_AS(sixd_to_rotation(v), InvalidArgument);
  v << 0, 0, 0, 0, 1, 0;
  CHECK_THROWS_AS(sixd_to_rotation(v), InvalidArgument);
}

TEST_CASE("intrinsics validation") {
  CameraIntrinsics k{500, 500, 320, 240, 640, 480};
  CHECK_NOTHROW(k.validate());
  k.cx = 640;
  CHECK_THROWS_AS(k.validate(), InvalidArgument);
  k = {0, 500, 320, 240, 640, 480};
  CHECK_THROWS_AS(k.validate(), InvalidArgument);
}
