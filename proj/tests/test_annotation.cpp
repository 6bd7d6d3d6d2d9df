#include "doctest.h"

#include <numbers>
#include <random>

#include "genpose/annotation.hpp"
#include "genpose/errors.hpp"
#include "oracles.hpp"

using namespace genpose;
constexpr double kDeg = 180.0 / std::numbers::pi;

namespace {

CameraIntrinsics intrinsics() { return {500, 500, 320, 240, 640, 480}; }

// Camera at c looking at the origin.
Pose look_at(const Vec3& c) {
  const Vec3 z = (-c).normalized();
  Vec3 x = Vec3::UnitZ().cross(z);
  if (x.norm() < 1e-6) x = Vec3::UnitX();
  x.normalize();
  const Vec3 y = z.cross(x);
  Mat3 r;
  r << x, y, z;
  return {Rotation::from_matrix(r), c};
}

struct Synthetic {
  CameraTrack truth;
  std::vector<Vec3> points;
  std::vector<Observation2D3D> obs;
};

Synthetic make_scene(std::mt19937_64& rng, int frames, int points, double noise_px) {
  Synthetic s;
  s.truth.intrinsics = intrinsics();
  for (int i = 0; i < frames; ++i) {
    const double a = 0.4 * i;
    s.truth.poses.push_back(look_at(Vec3(2 * std::cos(a), 2 * std::sin(a), 0.8 + 0.1 * i)));
  }
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  std::normal_distribution<double> n(0, noise_px);
  for (int j = 0; j < points; ++j) s.points.emplace_back(u(rng), u(rng), u(rng));
  for (int i = 0; i < frames; ++i) {
    const Pose w2c = s.truth.poses[static_cast<std::size_t>(i)].inverse();
    for (const Vec3& X : s.points) {
      Vec2 px = project_point(s.truth.intrinsics, w2c.transform(X));
      if (noise_px > 0) px += Vec2(n(rng), n(rng));
      s.obs.push_back({X, px, i});
    }
  }
  return s;
}

Pose perturb(const Pose& p, std::mt19937_64& rng, double deg, double m) {
  return {Rotation::from_rotation_vector(oracle::random_unit(rng) * deg / kDeg) * p.rotation,
          p.translation + oracle::random_unit(rng) * m};
}

double rot_deg(const Pose& a, const Pose& b) { return geodesic_distance(a.rotation, b.rotation) * kDeg; }

}  // namespace

TEST_CASE("zero residual leaves the track unchanged") {
  std::mt19937_64 rng(1);
  const Synthetic s = make_scene(rng, 3, 10, 0);
  const BundleAdjustResult r = bundle_adjust(s.truth, s.obs);
  CHECK(r.converged);
  CHECK(r.cost < 1e-20);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(rot_deg(r.track.poses[i], s.truth.poses[i]) < 1e-9);
    CHECK((r.track.poses[i].translation - s.truth.poses[i].translation).norm() < 1e-12);
  }
}

TEST_CASE("bundle adjustment recovers perturbed cameras") {
  std::mt19937_64 rng(2);
  const Synthetic s = make_scene(rng, 5, 50, 0);
  CameraTrack init = s.truth;
  for (auto& p : init.poses) p = perturb(p, rng, 2.0, 0.02);
  const BundleAdjustResult r = bundle_adjust(init, s.obs);
  CHECK(r.converged);
  CHECK(r.cost < 1e-10);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(rot_deg(r.track.poses[i], s.truth.poses[i]) < 0.01);
    CHECK((r.track.poses[i].translation - s.truth.poses[i].translation).norm() < 1e-4);
  }
  for (std::size_t k = 1; k < r.cost_history.size(); ++k) CHECK(r.cost_history[k] <= r.cost_history[k - 1]);
}

TEST_CASE("noisy observations settle at the noise floor") {
  std::mt19937_64 rng(3);
  const Synthetic s = make_scene(rng, 5, 50, 1.0);
  CameraTrack init = s.truth;
  for (auto& p : init.poses) p = perturb(p, rng, 2.0, 0.02);
  const BundleAdjustResult r = bundle_adjust(init, s.obs);
  const double rms = rms_residual(r.cost, s.obs.size());
  CHECK(rms >= 0.5);
  CHECK(rms <= 1.5);
}

TEST_CASE("jacobian matches central differences") {
  std::mt19937_64 rng(4);
  const CameraIntrinsics K = intrinsics();
  for (int trial = 0; trial < 20; ++trial) {
    const Pose w2c = look_at(oracle::random_unit(rng) * 2).inverse();
    const Vec3 X = 0.3 * oracle::random_unit(rng);
    const Vec2 x(300, 200);
    const auto J = reprojection_jacobian(K, w2c, X);
    for (int k = 0; k < 6; ++k) {
      const double h = 1e-6;
      Eigen::Matrix<double, 6, 1> d = Eigen::Matrix<double, 6, 1>::Zero();
      d(k) = h;
      const Vec2 fd = (reprojection_residual(K, apply_update(w2c, d), X, x) -
                       reprojection_residual(K, apply_update(w2c, -d), X, x)) / (2 * h);
      CHECK((fd - J.col(k)).norm() <= 1e-4 * std::max(1.0, J.col(k).norm()));
    }
  }
}

TEST_CASE("bundle adjustment input errors") {
  std::mt19937_64 rng(5);
  Synthetic s = make_scene(rng, 3, 10, 0);
  std::vector<Observation2D3D> thin;
  int kept = 0;
  for (const auto& o : s.obs) {
    if (o.frame_index != 1 || kept++ < 2) thin.push_back(o);
  }
  try {
    bundle_adjust(s.truth, thin);
    FAIL("expected an error");
  } catch (const UnderConstrained& e) {
    CHECK(std::string(e.what()).find("frame 1") != std::string::npos);
  }
  s.obs.push_back({Vec3::Zero(), Vec2::Zero(), 7});
  CHECK_THROWS_AS(bundle_adjust(s.truth, s.obs), InvalidArgument);
}

TEST_CASE("residuals do not depend on the world frame") {
  std::mt19937_64 rng(6);
  const Synthetic s = make_scene(rng, 4, 30, 1.0);
  CameraTrack init = s.truth;
  for (auto& p : init.poses) p = perturb(p, rng, 2.0, 0.02);
  const Pose g{oracle::random_rotation(rng), Vec3(0.5, -1, 2)};
  CameraTrack moved = init;
  for (auto& p : moved.poses) p = g * p;
  std::vector<Observation2D3D> obs2 = s.obs;
  for (auto& o : obs2) o.world_point = g.transform(o.world_point);
  const double c1 = reprojection_cost(init, s.obs);
  CHECK(reprojection_cost(moved, obs2) == doctest::Approx(c1).epsilon(1e-9).scale(1e-12));
  const double f1 = bundle_adjust(init, s.obs).cost;
  CHECK(bundle_adjust(moved, obs2).cost == doctest::Approx(f1).epsilon(1e-9).scale(1e-12));
}

TEST_CASE("object pose from keypoints over several views") {
  std::mt19937_64 rng(7);
  const Synthetic s = make_scene(rng, 5, 0, 0);
  const Pose object{oracle::random_rotation(rng), Vec3(0.05, -0.02, 0.1)};
  KeypointSet kp;
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  for (int j = 0; j < 10; ++j) kp.model_points.emplace_back(u(rng), u(rng), u(rng));
  for (int f : {0, 2, 4}) {
    const Pose o2c = object_to_camera(s.truth, f, object);
    const auto px = project_points(s.truth.intrinsics, o2c, kp.model_points);
    for (int j = 0; j < 10; ++j) kp.annotations.push_back({f, j, px[static_cast<std::size_t>(j)]});
  }
  const ObjectFitResult r = fit_object_pose(kp, s.truth, 2);
  const Pose expected = object_to_camera(s.truth, 2, object);
  CHECK(r.converged);
  CHECK(rot_deg(r.object_to_camera, expected) < 0.01);
  CHECK((r.object_to_camera.translation - expected.translation).norm() < 1e-4);
  CHECK(r.rms < 1e-6);

  // World gauge: moving everything leaves the camera-frame answer and residual alone.
  const Pose g{oracle::random_rotation(rng), Vec3(1, 2, 3)};
  CameraTrack moved = s.truth;
  for (auto& p : moved.poses) p = g * p;
  const ObjectFitResult r2 = fit_object_pose(kp, moved, 2);
  CHECK(rot_deg(r2.object_to_camera, r.object_to_camera) < 1e-6);
  CHECK(std::abs(r2.rms - r.rms) < 1e-9);

  KeypointSet few = kp;
  few.annotations.clear();
  for (const auto& a : kp.annotations) {
    if (a.frame_index == 2 && a.keypoint < 5) few.annotations.push_back(a);
  }
  CHECK_THROWS_AS(fit_object_pose(few, s.truth, 2), UnderConstrained);

  KeypointSet flat = kp;
  for (auto& p : flat.model_points) p.z() = 0.0;
  flat.annotations.clear();
  const auto px = project_points(s.truth.intrinsics, expected, flat.model_points);
  for (int j = 0; j < 10; ++j) flat.annotations.push_back({2, j, px[static_cast<std::size_t>(j)]});
  CHECK_THROWS_AS(fit_object_pose(flat, s.truth, 2), DegenerateConfiguration);
}

TEST_CASE("farthest point keyframes") {
  CameraTrack line;
  for (int i = 0; i < 11; ++i) line.poses.push_back({Rotation::identity(), Vec3(0.1 * i, 0, 0)});
  CHECK(fps_keyframes(line, 1) == std::vector<int>{0});
  CHECK(fps_keyframes(line, 3) == std::vector<int>{0, 10, 5});
  CHECK(fps_keyframes(line, 11).size() == 11);
  CHECK_THROWS_AS(fps_keyframes(line, 0), InvalidArgument);
  CHECK_THROWS_AS(fps_keyframes(line, 12), InvalidArgument);

  std::mt19937_64 rng(8);
  CameraTrack track;
  for (int i = 0; i < 30; ++i) track.poses.push_back({oracle::random_rotation(rng), oracle::random_unit(rng)});
  const FpsWeights w;
  std::vector<std::vector<double>> dist(30, std::vector<double>(30));
  for (int i = 0; i < 30; ++i) {
    for (int j = 0; j < 30; ++j) {
      const Pose& a = track.poses[static_cast<std::size_t>(i)];
      const Pose& b = track.poses[static_cast<std::size_t>(j)];
      dist[i][j] = w.w_t * (a.translation - b.translation).norm() +
                   w.w_r * oracle::trace_angle(a.rotation.matrix(), b.rotation.matrix());
    }
  }
  std::vector<int> prev;
  for (int k = 1; k <= 30; ++k) {
    const auto got = fps_keyframes(track, k);
    CHECK(got == oracle::brute_force_fps(dist, k));
    CHECK(std::equal(prev.begin(), prev.end(), got.begin()));
    prev = got;
  }
}
