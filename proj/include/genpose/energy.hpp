#pragma once

#include <cstdint>
#include <span>
#include <variant>

#include "genpose/diffusion.hpp"

namespace genpose {

// Energy = net(input) * sqrt(1 + sigma^2) / sigma, so that its pose gradient is
// d net / d(input pose block) / sigma, the same scaling as ScoreNet.
struct EnergyNet {
  Mlp net;
  NoiseSchedule schedule;
  int feature_dim = 0;
  std::uint64_t seed = 0;

  bool operator==(const EnergyNet& o) const {
    return net == o.net && schedule == o.schedule && feature_dim == o.feature_dim && seed == o.seed;
  }
};

struct AnalyticEnergy {
  AnalyticDensity density;
  NoiseSchedule schedule;
};

// Scalar plausibility; higher is more plausible.
class EnergyField {
 public:
  using Kind = std::variant<AnalyticEnergy, EnergyNet>;

  EnergyField(Kind kind);  // NOLINT(google-explicit-constructor)

  double operator()(const PoseVector& p, double t, const Condition& cond) const;
  std::vector<double> evaluate(std::span<const PoseVector> poses, double t, const Condition& cond) const;
  // Gradient with respect to the pose vector.
  PoseVector gradient(const PoseVector& p, double t, const Condition& cond) const;

  const NoiseSchedule& schedule() const;
  const Kind& kind() const { return kind_; }

 private:
  Kind kind_;
};

// Trains a scalar net whose pose gradient matches the frozen score under the
// denoising sampling law, weighted by sigma(t)^2.
EnergyNet distill_energy(const ScoreField& score, std::span<const TrainSample> data, const TrainConfig& cfg,
                         TrainReport* report = nullptr);

}  // namespace genpose
