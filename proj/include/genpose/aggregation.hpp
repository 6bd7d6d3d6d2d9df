#pragma once

#include <optional>
#include <span>
#include <vector>

#include "genpose/candidates.hpp"
#include "genpose/energy.hpp"

namespace genpose {

struct FilterConfig {
  double delta = 0.40;  // kept fraction

  void validate() const;
  // max(1, floor(delta * k))
  std::size_t kept(std::size_t k) const;
};

struct ClusterConfig {
  double eps = 0.45;  // radians, geodesic
  int min_pts = 5;    // neighbors within eps, self included

  void validate() const;
};

// Sorts by descending energy at t = eps (stable, so ties keep input order) and
// keeps the top max(1, floor(delta * K)).
PoseCandidateSet rank_and_filter(const PoseCandidateSet& set, const EnergyField& field, const Condition& cond,
                                 const FilterConfig& cfg);
// Same, using the energies already attached to the set.
PoseCandidateSet rank_and_filter(const PoseCandidateSet& set, const FilterConfig& cfg);

inline constexpr int kNoise = -1;

// DBSCAN over rotations with the geodesic metric. Clusters are numbered in scan
// order; a border point keeps the first cluster that reaches it.
std::vector<int> dbscan_rotations(std::span<const Pose> poses, const ClusterConfig& cfg);

struct AggregationResult {
  Pose pose;
  int cluster_label = kNoise;
  std::vector<int> members;  // source indices of the pooled candidates
  bool all_noise_fallback = false;
};

// Largest cluster (ties: higher mean energy, then lower first member), pooled by
// quaternion mean and arithmetic mean translation. All-noise input falls back to
// pooling every candidate.
AggregationResult aggregate(const PoseCandidateSet& set, const ClusterConfig& cfg);

Pose mean_pool(const PoseCandidateSet& set);
Pose mean_pool(std::span<const Pose> poses);

struct ScaleEstimate {
  Vec3 extents = Vec3::Ones();
  bool degenerate = false;  // some axis fell back to the minimum extent
};

inline constexpr double kMinExtent = 1e-4;

// Full extents of the cloud seen in the object frame given by pose.
ScaleEstimate estimate_scale_geometric(const PointCloud& cloud, const Pose& pose, double min_extent = kMinExtent);

// Predicts log-extents from [condition ++ pose vector]; outputs pass through exp.
struct ScaleRegressor {
  Mlp net;
  int feature_dim = 0;
  std::uint64_t seed = 0;
  bool trained = false;
};

struct ScaleSample {
  Condition cond;
  Pose pose;
  Vec3 extents;
};

struct ScaleTrainConfig {
  int batch_size = 64;
  int steps = 2000;
  double lr_start = 1e-3;
  double lr_end = 1e-4;
  std::uint64_t seed = 0;
  std::vector<int> hidden = {64, 64};
  Activation activation = Activation::silu;
};

ScaleRegressor train_scale_regressor(std::span<const ScaleSample> data, const ScaleTrainConfig& cfg);
Vec3 estimate_scale_learned(const ScaleRegressor& regressor, const Condition& cond, const Pose& pose);

// Learned regressor when one is given, otherwise the geometric estimate.
ScaleEstimate estimate_scale(const ScaleRegressor* regressor, const Condition& cond, const PointCloud* cloud,
                             const Pose& pose);

}  // namespace genpose
