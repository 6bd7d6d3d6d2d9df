#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "genpose/geometry.hpp"
#include "genpose/mlp.hpp"

namespace genpose {

// Translation (3) followed by the first two rotation-matrix columns (6).
using PoseVector = Eigen::Matrix<double, 9, 1>;

PoseVector encode_pose(const Pose& pose);
// Throws InvalidArgument when the rotation block is degenerate.
Pose decode_pose(const PoseVector& v);

// sigma(t) = sigma_min * (sigma_max / sigma_min)^t.
struct NoiseSchedule {
  double sigma_min = 0.01;
  double sigma_max = 50.0;
  double eps = 1e-3;  // final integration time

  void validate() const;
  bool operator==(const NoiseSchedule&) const = default;
};

double sigma(const NoiseSchedule& schedule, double t);
// d sigma / dt = sigma(t) * ln(sigma_max / sigma_min).
double sigma_dot(const NoiseSchedule& schedule, double t);

struct Condition {
  Eigen::VectorXd feature;
  std::string object_id;
};

PoseVector perturb(const PoseVector& p0, double t, const NoiseSchedule& schedule, Rng& rng);
PoseVector standard_normal_pose(Rng& rng);

// Isotropic Gaussian mixture over pose vectors. A zero std is a point mass.
struct GaussianMixture {
  std::vector<double> weights;
  std::vector<PoseVector> means;
  std::vector<double> stds;

  void validate() const;
};

// Single isotropic mode whose mean is read from the first nine condition features.
struct ConditionedGaussian {
  double std = 0.02;
};

using AnalyticDensity = std::variant<GaussianMixture, ConditionedGaussian>;

GaussianMixture resolve(const AnalyticDensity& density, const Condition& cond);

// Gradient of the log density of the mixture convolved with N(0, sigma(t)^2 I).
PoseVector analytic_score(const GaussianMixture& mixture, const PoseVector& p, double t,
                          const NoiseSchedule& schedule);
double analytic_log_density(const GaussianMixture& mixture, const PoseVector& p, double t,
                            const NoiseSchedule& schedule);

// Network input layout shared by score and energy nets:
//   [ p / sqrt(1 + sigma^2) , condition feature , t , sin 2 pi t , cos 2 pi t ].
constexpr int kTimeEmbedding = 3;
Eigen::MatrixXd network_input(std::span<const PoseVector> poses, std::span<const double> times,
                              std::span<const Condition* const> conds, int feature_dim,
                              const NoiseSchedule& schedule);
double input_scale(const NoiseSchedule& schedule, double t);

// Score = net(input) / sigma(t).
struct ScoreNet {
  Mlp net;
  NoiseSchedule schedule;
  int feature_dim = 0;
  std::uint64_t seed = 0;

  bool operator==(const ScoreNet& o) const {
    return net == o.net && schedule == o.schedule && feature_dim == o.feature_dim && seed == o.seed;
  }
};

struct AnalyticScore {
  AnalyticDensity density;
  NoiseSchedule schedule;
};

struct ZeroScore {
  NoiseSchedule schedule;
};

class ScoreField {
 public:
  using Kind = std::variant<ZeroScore, AnalyticScore, ScoreNet>;

  ScoreField(Kind kind);  // NOLINT(google-explicit-constructor)

  PoseVector operator()(const PoseVector& p, double t, const Condition& cond) const;
  // Batched evaluation; conds[i] belongs to poses[i].
  std::vector<PoseVector> evaluate(std::span<const PoseVector> poses, std::span<const double> times,
                                   std::span<const Condition* const> conds) const;

  const NoiseSchedule& schedule() const;
  const Kind& kind() const { return kind_; }

 private:
  Kind kind_;
};

struct TrainSample {
  PoseVector pose;
  Condition cond;
};

struct TrainConfig {
  int batch_size = 128;
  int steps = 2000;
  double lr_start = 1e-3;
  double lr_end = 1e-4;
  std::uint64_t seed = 0;
  NoiseSchedule schedule;
  std::vector<int> hidden = {256, 256, 256};
  Activation activation = Activation::silu;

  void validate() const;
};

struct TrainReport {
  double initial_heldout_loss = 0.0;
  double final_heldout_loss = 0.0;
  std::vector<double> loss_history;  // per training step
};

// Monte-Carlo denoising score-matching loss with lambda(t) = sigma(t)^2,
// t ~ U(eps, 1).
double dsm_loss(const ScoreField& field, std::span<const TrainSample> batch, const NoiseSchedule& schedule,
                Rng& rng);

ScoreNet train_score(std::span<const TrainSample> data, const TrainConfig& cfg, TrainReport* report = nullptr);

// Data sorted into a content-defined order so that training depends only on the
// sample multiset and the seed.
std::vector<TrainSample> canonical_order(std::span<const TrainSample> data);
int infer_feature_dim(std::span<const TrainSample> data);

struct DataSplit {
  std::vector<TrainSample> train;
  std::vector<TrainSample> heldout;
};

// Seed-shuffled canonical order; one tenth is held out once there are at least
// ten samples, otherwise the training set doubles as the hold-out set.
DataSplit split_training_data(std::span<const TrainSample> data, std::uint64_t seed);

}  // namespace genpose
