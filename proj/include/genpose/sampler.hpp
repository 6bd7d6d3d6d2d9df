#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "genpose/aggregation.hpp"
#include "genpose/candidates.hpp"
#include "genpose/diffusion.hpp"
#include "genpose/energy.hpp"

namespace genpose {

enum class Integrator : std::uint32_t { euler = 0, rk4 = 1 };

std::string to_string(Integrator i);
Integrator integrator_from_string(const std::string& s);

struct SamplerConfig {
  int K = 50;
  int steps = 1000;
  Integrator integrator = Integrator::euler;
  NoiseSchedule schedule;
  std::uint64_t seed = 0;
  // Final Tweedie step p + sigma(eps)^2 score(p, eps) on every candidate,
  // removing the residual sigma(eps) noise left by the flow.
  bool denoise = true;

  void validate() const;
};

// Integrates dp/dt = -sigma(t) sigma'(t) score(p, t) from t = 1 down to eps.
PoseVector pf_ode_solve(const ScoreField& field, const Condition& cond, const PoseVector& p1,
                        const SamplerConfig& cfg);

// Batched form from t_start down to t_end (eps when omitted); every state is
// advanced together. Throws Diverged naming the step and time at the first
// non-finite state.
std::vector<PoseVector> pf_ode_solve(const ScoreField& field, const Condition& cond, std::vector<PoseVector> states,
                                     double t_start, int steps, const SamplerConfig& cfg, double t_end = -1.0);

PoseCandidateSet sample_candidates(const ScoreField& field, const Condition& cond, const SamplerConfig& cfg);

inline constexpr double kWarmStartTime = 0.3;

// Perturbs prev to time t0 and integrates back to eps. The step count scales
// with (t0 - eps) / (1 - eps) so the step size matches a full solve.
PoseCandidateSet warm_start_sample(const ScoreField& field, const Condition& cond, const Pose& prev, double t0,
                                   const SamplerConfig& cfg);

// Ranks by energy when a field is given, then clusters and pools.
AggregationResult select_pose(const PoseCandidateSet& candidates, const EnergyField* energy, const Condition& cond,
                              const FilterConfig& filter, const ClusterConfig& cluster);

struct TrackConfig {
  SamplerConfig sampler;
  double t0 = kWarmStartTime;
  FilterConfig filter;
  ClusterConfig cluster;
};

// One pose per frame. Frame 0 warm-starts at init, frame i at frame i-1's result.
// Frame i samples with seed cfg.sampler.seed + i.
std::vector<Pose> track_sequence(const ScoreField& field, const EnergyField* energy, std::span<const Condition> conds,
                                 const Pose& init, const TrackConfig& cfg);

}  // namespace genpose
