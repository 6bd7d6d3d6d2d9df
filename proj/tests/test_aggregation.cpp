#include "doctest.h"

#include <cmath>
#include <numbers>
#include <random>

#include "genpose/aggregation.hpp"
#include "genpose/errors.hpp"
#include "oracles.hpp"

using namespace genpose;
constexpr double kPi = std::numbers::pi;

namespace {

Pose near(const Rotation& r, std::mt19937_64& rng, double spread) {
  const Vec3 w = oracle::random_unit(rng) * spread * std::uniform_real_distribution<double>(0, 1)(rng);
  return {Rotation::from_rotation_vector(w) * r, Vec3::Zero()};
}

}  // namespace

TEST_CASE("kept count") {
  const FilterConfig f;
  CHECK(f.kept(10) == 4);
  CHECK(f.kept(50) == 20);
  CHECK(f.kept(2) == 1);
  CHECK(f.kept(1) == 1);
  CHECK_THROWS_AS((FilterConfig{0.0}.validate()), InvalidArgument);
  CHECK_THROWS_AS((FilterConfig{1.5}.validate()), InvalidArgument);
  CHECK_THROWS_AS((ClusterConfig{0.0, 5}.validate()), InvalidArgument);
  CHECK_THROWS_AS((ClusterConfig{0.4, 0}.validate()), InvalidArgument);
}

TEST_CASE("rank_and_filter keeps the highest energies in stable order") {
  PoseCandidateSet set;
  for (int i = 0; i < 10; ++i) set.candidates.push_back({Rotation::from_axis_angle(Vec3::UnitZ(), 0.1 * i), Vec3::Zero()});
  set.energies = std::vector<double>{1, 5, 3, 5, 0, 9, 2, 7, 5, 4};
  const auto out = rank_and_filter(set, FilterConfig{});
  REQUIRE(out.size() == 4);
  CHECK(out.source_index == std::vector<int>{5, 7, 1, 3});
  CHECK(*out.energies == std::vector<double>{9, 7, 5, 5});
  // Filtering twice keeps tracing back to the original indices.
  const auto again = rank_and_filter(out, FilterConfig{0.5});
  CHECK(again.source_index == std::vector<int>{5, 7});

  PoseCandidateSet none = set;
  none.energies.reset();
  CHECK_THROWS_AS(rank_and_filter(none, FilterConfig{}), InvalidArgument);
  PoseCandidateSet wrong = set;
  wrong.energies->pop_back();
  CHECK_THROWS_AS(rank_and_filter(wrong, FilterConfig{}), InvalidArgument);
  CHECK_THROWS_AS(rank_and_filter(PoseCandidateSet{}, FilterConfig{}), InvalidArgument);
}

TEST_CASE("rank_and_filter with an energy field scores at eps") {
  std::mt19937_64 rng(3);
  const Pose mode{oracle::random_rotation(rng), Vec3(0, 0, 0.5)};
  const EnergyField e(AnalyticEnergy{GaussianMixture{{1.0}, {encode_pose(mode)}, {0.05}}, NoiseSchedule{}});
  PoseCandidateSet set;
  for (int i = 0; i < 10; ++i) set.candidates.push_back({mode.rotation, mode.translation + Vec3(0.01 * i, 0, 0)});
  const auto out = rank_and_filter(set, e, Condition{}, FilterConfig{});
  CHECK(out.source_index == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("dbscan matches the neighbourhood-graph oracle") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<Rotation> centers;
    for (int c = 0; c < 3; ++c) centers.push_back(oracle::random_rotation(rng));
    std::vector<Pose> poses;
    std::vector<Rotation> rots;
    const int n = 20 + trial * 3;
    for (int i = 0; i < n; ++i) {
      const Pose p = i % 7 == 0 ? Pose{oracle::random_rotation(rng), Vec3::Zero()} : near(centers[i % 3], rng, 0.6);
      poses.push_back(p);
      rots.push_back(p.rotation);
    }
    CHECK(dbscan_rotations(poses, ClusterConfig{}) == oracle::brute_force_dbscan(rots, 0.45, 5));
  }
}

TEST_CASE("dbscan small cases") {
  std::vector<Pose> tight(5, Pose{});
  CHECK(dbscan_rotations(tight, ClusterConfig{}) == std::vector<int>(5, 0));
  std::vector<Pose> four(4, Pose{});
  CHECK(dbscan_rotations(four, ClusterConfig{}) == std::vector<int>(4, kNoise));
  std::vector<Pose> spread;
  for (int i = 0; i < 3; ++i) spread.push_back({Rotation::from_axis_angle(Vec3::UnitZ(), i * 1.0), Vec3::Zero()});
  CHECK(dbscan_rotations(spread, ClusterConfig{0.45, 1}) == std::vector<int>{0, 1, 2});
}

TEST_CASE("aggregate picks the largest cluster") {
  std::mt19937_64 rng(5);
  const Rotation a = Rotation::identity();
  const Rotation b = Rotation::from_axis_angle(Vec3::UnitZ(), kPi);
  PoseCandidateSet set;
  for (int i = 0; i < 12; ++i) set.candidates.push_back(near(i < 7 ? a : b, rng, 0.1));
  const auto r = aggregate(set, ClusterConfig{});
  CHECK_FALSE(r.all_noise_fallback);
  CHECK(r.members.size() == 7);
  CHECK(geodesic_distance(r.pose.rotation, a) < 0.1);
}

TEST_CASE("aggregate ties break on energy then on first member") {
  const Rotation a = Rotation::identity();
  const Rotation b = Rotation::from_axis_angle(Vec3::UnitX(), kPi);
  PoseCandidateSet set;
  for (int i = 0; i < 10; ++i) set.candidates.push_back({i < 5 ? a : b, Vec3::Zero()});
  const auto first = aggregate(set, ClusterConfig{});
  CHECK(first.members == std::vector<int>{0, 1, 2, 3, 4});
  set.energies = std::vector<double>{0, 0, 0, 0, 0, 1, 1, 1, 1, 1};
  const auto energetic = aggregate(set, ClusterConfig{});
  CHECK(energetic.members == std::vector<int>{5, 6, 7, 8, 9});
  CHECK(geodesic_distance(energetic.pose.rotation, b) < 1e-12);
}

TEST_CASE("all-noise input falls back to pooling everything") {
  PoseCandidateSet set;
  for (int i = 0; i < 4; ++i) {
    set.candidates.push_back({Rotation::from_axis_angle(Vec3::UnitZ(), 0.01 * i), Vec3(i, 0, 0)});
  }
  const auto r = aggregate(set, ClusterConfig{});
  CHECK(r.all_noise_fallback);
  CHECK(r.cluster_label == kNoise);
  CHECK(r.members.size() == 4);
  CHECK(r.pose.translation.x() == doctest::Approx(1.5));
  CHECK_THROWS_AS(aggregate(PoseCandidateSet{}, ClusterConfig{}), InvalidArgument);
}

TEST_CASE("mean pool of two rotations about one axis is the midpoint") {
  std::vector<Pose> p{{Rotation::from_axis_angle(Vec3::UnitY(), 0.2), Vec3(0, 0, 1)},
                      {Rotation::from_axis_angle(Vec3::UnitY(), 0.6), Vec3(0, 0, 3)}};
  const Pose m = mean_pool(p);
  CHECK(geodesic_distance(m.rotation, Rotation::from_axis_angle(Vec3::UnitY(), 0.4)) < 1e-12);
  CHECK(m.translation.z() == doctest::Approx(2.0));
  CHECK_THROWS_AS(mean_pool(std::span<const Pose>()), InvalidArgument);
}

TEST_CASE("geometric scale from a point cloud") {
  std::mt19937_64 rng(8);
  const Pose pose{oracle::random_rotation(rng), Vec3(0.1, 0.2, 0.8)};
  const Vec3 ext(0.2, 0.1, 0.3);
  PointCloud cloud;
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (int i = 0; i < 2000; ++i) cloud.push_back(pose.transform(Vec3(u(rng), u(rng), u(rng)).cwiseProduct(ext)));
  for (int k = 0; k < 8; ++k) {
    const Vec3 corner((k & 1 ? 0.5 : -0.5) * ext.x(), (k & 2 ? 0.5 : -0.5) * ext.y(), (k & 4 ? 0.5 : -0.5) * ext.z());
    cloud.push_back(pose.transform(corner));
  }
  const ScaleEstimate e = estimate_scale_geometric(cloud, pose);
  CHECK((e.extents - ext).norm() < 1e-9);
  CHECK_FALSE(e.degenerate);

  PointCloud flat;
  for (int i = 0; i < 10; ++i) flat.push_back(pose.transform(Vec3(u(rng), u(rng), 0.0)));
  const ScaleEstimate d = estimate_scale_geometric(flat, pose);
  CHECK(d.degenerate);
  CHECK(d.extents.z() == kMinExtent);
  CHECK_THROWS_AS(estimate_scale_geometric(PointCloud{}, pose), InvalidArgument);
}

TEST_CASE("learned scale regressor") {
  std::mt19937_64 rng(9);
  std::vector<ScaleSample> data;
  std::uniform_real_distribution<double> u(0.05, 0.3);
  for (int i = 0; i < 400; ++i) {
    ScaleSample s;
    s.extents = Vec3(u(rng), u(rng), u(rng));
    s.cond.feature = s.extents.array().log().matrix();
    s.pose = {oracle::random_rotation(rng), Vec3::Zero()};
    data.push_back(s);
  }
  ScaleTrainConfig cfg;
  cfg.steps = 3000;
  const ScaleRegressor reg = train_scale_regressor(data, cfg);
  double worst = 0;
  for (int i = 0; i < 20; ++i) {
    const Vec3 pred = estimate_scale_learned(reg, data[i].cond, data[i].pose);
    worst = std::max(worst, ((pred - data[i].extents).array() / data[i].extents.array()).abs().maxCoeff());
  }
  CHECK(worst < 0.15);
  const ScaleEstimate via = estimate_scale(&reg, data[0].cond, nullptr, data[0].pose);
  CHECK(via.extents == estimate_scale_learned(reg, data[0].cond, data[0].pose));

  ScaleRegressor untrained = reg;
  untrained.trained = false;
  CHECK_THROWS_AS(estimate_scale_learned(untrained, data[0].cond, data[0].pose), InvalidState);
  CHECK_THROWS_AS(estimate_scale(nullptr, data[0].cond, nullptr, data[0].pose), InvalidArgument);
}
