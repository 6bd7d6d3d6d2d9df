#include "genpose/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <numeric>

#include "genpose/errors.hpp"

namespace genpose {

void PoseCandidateSet::validate() const {
  if (energies && energies->size() != candidates.size()) {
    throw InvalidArgument("candidate set: " + std::to_string(energies->size()) + " energies for " +
                          std::to_string(candidates.size()) + " candidates");
  }
  if (!source_index.empty() && source_index.size() != candidates.size()) {
    throw InvalidArgument("candidate set: source index length mismatch");
  }
}

void FilterConfig::validate() const {
  if (!(delta > 0.0 && delta <= 1.0)) throw InvalidArgument("filter: delta must lie in (0, 1]");
}

std::size_t FilterConfig::kept(std::size_t k) const {
  const auto m = static_cast<std::size_t>(std::floor(delta * static_cast<double>(k)));
  return std::max<std::size_t>(1, m);
}

void ClusterConfig::validate() const {
  if (!(eps > 0.0)) throw InvalidArgument("cluster: eps must be positive");
  if (min_pts < 1) throw InvalidArgument("cluster: min_pts must be at least 1");
}

PoseCandidateSet rank_and_filter(const PoseCandidateSet& set, const EnergyField& field, const Condition& cond,
                                 const FilterConfig& cfg) {
  std::vector<PoseVector> encoded;
  encoded.reserve(set.size());
  for (const Pose& p : set.candidates) encoded.push_back(encode_pose(p));
  PoseCandidateSet scored = set;
  scored.energies = field.evaluate(encoded, field.schedule().eps, cond);
  return rank_and_filter(scored, cfg);
}

PoseCandidateSet rank_and_filter(const PoseCandidateSet& set, const FilterConfig& cfg) {
  cfg.validate();
  set.validate();
  if (set.candidates.empty()) throw InvalidArgument("rank_and_filter: empty candidate set");
  if (!set.energies) throw InvalidArgument("rank_and_filter: candidate set carries no energies");
  const auto& e = *set.energies;
  std::vector<std::size_t> order(set.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return e[a] > e[b]; });
  order.resize(cfg.kept(set.size()));

  PoseCandidateSet out;
  out.condition_id = set.condition_id;
  out.seed = set.seed;
  out.schedule = set.schedule;
  out.energies.emplace();
  for (std::size_t i : order) {
    out.candidates.push_back(set.candidates[i]);
    out.energies->push_back(e[i]);
    out.source_index.push_back(set.source_of(i));
  }
  return out;
}

std::vector<int> dbscan_rotations(std::span<const Pose> poses, const ClusterConfig& cfg) {
  cfg.validate();
  const std::size_t n = poses.size();
  std::vector<std::vector<std::size_t>> neighbors(n);
  for (std::size_t i = 0; i < n; ++i) {
    neighbors[i].push_back(i);
    for (std::size_t j = i + 1; j < n; ++j) {
      if (geodesic_distance(poses[i].rotation, poses[j].rotation) <= cfg.eps) {
        neighbors[i].push_back(j);
        neighbors[j].push_back(i);
      }
    }
  }
  for (auto& nb : neighbors) std::sort(nb.begin(), nb.end());
  auto is_core = [&](std::size_t i) { return static_cast<int>(neighbors[i].size()) >= cfg.min_pts; };

  std::vector<int> labels(n, kNoise);
  std::vector<char> visited(n, 0);
  int next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (visited[i]) continue;
    visited[i] = 1;
    if (!is_core(i)) continue;  // noise unless a later cluster claims it
    labels[i] = next;
    std::deque<std::size_t> frontier(neighbors[i].begin(), neighbors[i].end());
    while (!frontier.empty()) {
      const std::size_t j = frontier.front();
      frontier.pop_front();
      if (labels[j] == kNoise) labels[j] = next;
      if (visited[j]) continue;
      visited[j] = 1;
      if (is_core(j)) frontier.insert(frontier.end(), neighbors[j].begin(), neighbors[j].end());
    }
    ++next;
  }
  return labels;
}

Pose mean_pool(std::span<const Pose> poses) {
  if (poses.empty()) throw InvalidArgument("mean_pool: empty candidate set");
  std::vector<Rotation> rots;
  rots.reserve(poses.size());
  Vec3 t = Vec3::Zero();
  for (const Pose& p : poses) {
    rots.push_back(p.rotation);
    t += p.translation;
  }
  return {quaternion_mean(rots), t / static_cast<double>(poses.size())};
}

Pose mean_pool(const PoseCandidateSet& set) { return mean_pool(std::span<const Pose>(set.candidates)); }

AggregationResult aggregate(const PoseCandidateSet& set, const ClusterConfig& cfg) {
  set.validate();
  if (set.candidates.empty()) throw InvalidArgument("aggregate: empty candidate set");
  const std::vector<int> labels = dbscan_rotations(set.candidates, cfg);

  std::map<int, std::vector<std::size_t>> clusters;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != kNoise) clusters[labels[i]].push_back(i);
  }

  AggregationResult result;
  std::vector<std::size_t> chosen;
  if (clusters.empty()) {
    chosen.resize(set.size());
    std::iota(chosen.begin(), chosen.end(), 0);
    result.all_noise_fallback = true;
  } else {
    auto mean_energy = [&](const std::vector<std::size_t>& m) {
      if (!set.energies) return 0.0;
      double s = 0.0;
      for (std::size_t i : m) s += (*set.energies)[i];
      return s / static_cast<double>(m.size());
    };
    int best = -1;
    for (const auto& [label, members] : clusters) {
      if (best < 0) {
        best = label;
        continue;
      }
      const auto& cur = clusters[best];
      if (members.size() != cur.size()) {
        if (members.size() > cur.size()) best = label;
        continue;
      }
      const double em = mean_energy(members);
      const double ec = mean_energy(cur);
      if (em != ec) {
        if (em > ec) best = label;
        continue;
      }
      if (members.front() < cur.front()) best = label;
    }
    chosen = clusters[best];
    result.cluster_label = best;
  }

  std::vector<Pose> pooled;
  pooled.reserve(chosen.size());
  for (std::size_t i : chosen) {
    pooled.push_back(set.candidates[i]);
    result.members.push_back(set.source_of(i));
  }
  result.pose = mean_pool(pooled);
  return result;
}

ScaleEstimate estimate_scale_geometric(const PointCloud& cloud, const Pose& pose, double min_extent) {
  if (cloud.empty()) throw InvalidArgument("estimate_scale_geometric: empty point cloud");
  const Pose to_object = pose.inverse();
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (const Vec3& p : cloud) {
    if (!p.allFinite()) throw InvalidArgument("estimate_scale_geometric: non-finite point");
    const Vec3 q = to_object.transform(p);
    lo = lo.cwiseMin(q);
    hi = hi.cwiseMax(q);
  }
  ScaleEstimate est;
  est.extents = hi - lo;
  for (int k = 0; k < 3; ++k) {
    if (est.extents(k) < min_extent) {
      est.extents(k) = min_extent;
      est.degenerate = true;
    }
  }
  return est;
}

namespace {

Eigen::VectorXd regressor_input(const Condition& cond, const Pose& pose) {
  Eigen::VectorXd x(cond.feature.size() + 9);
  x << cond.feature, encode_pose(pose);
  return x;
}

}  // namespace

ScaleRegressor train_scale_regressor(std::span<const ScaleSample> data, const ScaleTrainConfig& cfg) {
  if (data.empty()) throw InvalidArgument("train_scale_regressor: empty data");
  if (cfg.batch_size <= 0 || cfg.steps <= 0) throw InvalidArgument("train_scale_regressor: invalid config");
  const auto f = data.front().cond.feature.size();
  Eigen::MatrixXd inputs(f + 9, static_cast<Eigen::Index>(data.size()));
  Eigen::MatrixXd targets(3, static_cast<Eigen::Index>(data.size()));
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].cond.feature.size() != f) throw InvalidArgument("train_scale_regressor: condition lengths differ");
    if ((data[i].extents.array() <= 0.0).any()) throw InvalidArgument("train_scale_regressor: extents must be > 0");
    inputs.col(static_cast<Eigen::Index>(i)) = regressor_input(data[i].cond, data[i].pose);
    targets.col(static_cast<Eigen::Index>(i)) = data[i].extents.array().log().matrix();
  }

  std::vector<int> sizes{static_cast<int>(f) + 9};
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(3);
  Rng rng = make_rng(cfg.seed, 0x5CA1E);
  ScaleRegressor reg{Mlp(sizes, cfg.activation, rng), static_cast<int>(f), cfg.seed, false};
  Adam adam(reg.net);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  Mlp::Cache cache;
  const auto b = static_cast<Eigen::Index>(cfg.batch_size);
  Eigen::MatrixXd x(inputs.rows(), b);
  Eigen::MatrixXd y(3, b);
  for (int step = 0; step < cfg.steps; ++step) {
    for (Eigen::Index j = 0; j < b; ++j) {
      const auto i = static_cast<Eigen::Index>(pick(rng));
      x.col(j) = inputs.col(i);
      y.col(j) = targets.col(i);
    }
    const Eigen::MatrixXd residual = reg.net.forward(x, cache) - y;
    const double loss = residual.squaredNorm() / static_cast<double>(b);
    if (!std::isfinite(loss)) throw Diverged("train_scale_regressor: non-finite loss at step " + std::to_string(step));
    const auto grad = reg.net.backward(cache, (2.0 / static_cast<double>(b)) * residual);
    adam.step(reg.net, grad, decayed_learning_rate(cfg.lr_start, cfg.lr_end, step, cfg.steps));
  }
  reg.trained = true;
  return reg;
}

Vec3 estimate_scale_learned(const ScaleRegressor& regressor, const Condition& cond, const Pose& pose) {
  if (!regressor.trained) throw InvalidState("estimate_scale_learned: regressor is not trained");
  if (cond.feature.size() != regressor.feature_dim) {
    throw InvalidArgument("estimate_scale_learned: condition length does not match the regressor");
  }
  const Eigen::VectorXd out = regressor.net.forward(regressor_input(cond, pose));
  return out.array().exp().matrix();
}

ScaleEstimate estimate_scale(const ScaleRegressor* regressor, const Condition& cond, const PointCloud* cloud,
                             const Pose& pose) {
  if (regressor) return {estimate_scale_learned(*regressor, cond, pose), false};
  if (!cloud) throw InvalidArgument("estimate_scale: need a scale regressor or a point cloud");
  return estimate_scale_geometric(*cloud, pose);
}

}  // namespace genpose
