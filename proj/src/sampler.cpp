#include "genpose/sampler.hpp"

#include <cmath>
#include <sstream>

#include "genpose/errors.hpp"

namespace genpose {

std::string to_string(Integrator i) { return i == Integrator::rk4 ? "rk4" : "euler"; }

Integrator integrator_from_string(const std::string& s) {
  if (s == "euler") return Integrator::euler;
  if (s == "rk4") return Integrator::rk4;
  throw InvalidArgument("unknown integrator '" + s + "'");
}

void SamplerConfig::validate() const {
  if (K < 1) throw InvalidArgument("sampler: K must be at least 1");
  if (steps < 1) throw InvalidArgument("sampler: steps must be at least 1");
  schedule.validate();
}

namespace {

void check_schedule(const ScoreField& field, const SamplerConfig& cfg) {
  if (!(field.schedule() == cfg.schedule)) {
    throw InvalidArgument("sampler: config schedule differs from the score field's schedule");
  }
}

// dp/dt for every state at time t.
std::vector<PoseVector> drift(const ScoreField& field, const Condition& cond, const std::vector<PoseVector>& p,
                              double t, const NoiseSchedule& s) {
  const std::vector<double> times(p.size(), t);
  const std::vector<const Condition*> conds(p.size(), &cond);
  std::vector<PoseVector> d = field.evaluate(p, times, conds);
  const double k = -sigma(s, t) * sigma_dot(s, t);
  for (auto& v : d) v *= k;
  return d;
}

void axpy(std::vector<PoseVector>& y, double a, const std::vector<PoseVector>& x) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

std::vector<PoseVector> shifted(const std::vector<PoseVector>& y, double a, const std::vector<PoseVector>& x) {
  std::vector<PoseVector> out = y;
  axpy(out, a, x);
  return out;
}

void check_finite(const std::vector<PoseVector>& states, int step, double t) {
  for (const auto& p : states) {
    if (!p.allFinite()) {
      std::ostringstream msg;
      msg << "pf_ode_solve: non-finite state at step " << step << ", t = " << t;
      throw Diverged(msg.str());
    }
  }
}

Rng candidate_rng(std::uint64_t seed, std::size_t index, int attempt) {
  return make_rng(seed, (static_cast<std::uint64_t>(attempt) << 32) | index);
}

int warm_start_steps(const SamplerConfig& cfg, double t0) {
  const double frac = (t0 - cfg.schedule.eps) / (1.0 - cfg.schedule.eps);
  return std::max(1, static_cast<int>(std::lround(cfg.steps * frac)));
}

}  // namespace

std::vector<PoseVector> pf_ode_solve(const ScoreField& field, const Condition& cond, std::vector<PoseVector> states,
                                     double t_start, int steps, const SamplerConfig& cfg, double t_end) {
  cfg.validate();
  check_schedule(field, cfg);
  const NoiseSchedule& s = cfg.schedule;
  if (t_end < 0.0) t_end = s.eps;
  if (steps < 1) throw InvalidArgument("pf_ode_solve: steps must be at least 1");
  if (!(t_end >= s.eps && t_start >= t_end && t_start <= 1.0)) {
    throw InvalidArgument("pf_ode_solve: need eps <= t_end <= t_start <= 1");
  }
  check_finite(states, 0, t_start);

  // Integrate in reversed time: dt = -h.
  const double h = (t_start - t_end) / steps;
  for (int k = 0; k < steps; ++k) {
    const double t = t_start - k * h;
    const double t_next = k + 1 == steps ? t_end : t_start - (k + 1) * h;
    if (cfg.integrator == Integrator::euler) {
      axpy(states, -h, drift(field, cond, states, t, s));
    } else {
      const double tm = 0.5 * (t + t_next);
      const auto k1 = drift(field, cond, states, t, s);
      const auto k2 = drift(field, cond, shifted(states, -0.5 * h, k1), tm, s);
      const auto k3 = drift(field, cond, shifted(states, -0.5 * h, k2), tm, s);
      const auto k4 = drift(field, cond, shifted(states, -h, k3), t_next, s);
      for (std::size_t i = 0; i < states.size(); ++i) {
        states[i] -= h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
      }
    }
    check_finite(states, k + 1, t_next);
  }
  return states;
}

PoseVector pf_ode_solve(const ScoreField& field, const Condition& cond, const PoseVector& p1,
                        const SamplerConfig& cfg) {
  if (!p1.allFinite()) throw InvalidArgument("pf_ode_solve: non-finite start");
  return pf_ode_solve(field, cond, std::vector<PoseVector>{p1}, 1.0, cfg.steps, cfg).front();
}

namespace {

// Solves every start, decodes, and re-draws degenerate decodes from advanced
// streams. draw(i, attempt) returns the start state of candidate i.
template <class Draw>
PoseCandidateSet solve_candidates(const ScoreField& field, const Condition& cond, const SamplerConfig& cfg,
                                  double t_start, int steps, Draw draw) {
  constexpr int kMaxRetries = 3;
  const auto n = static_cast<std::size_t>(cfg.K);
  std::vector<PoseVector> starts(n);
  for (std::size_t i = 0; i < n; ++i) starts[i] = draw(i, 0);
  auto solve = [&](std::vector<PoseVector> p) {
    p = pf_ode_solve(field, cond, std::move(p), t_start, steps, cfg);
    if (cfg.denoise) {
      const double eps = cfg.schedule.eps;
      const double s2 = sigma(cfg.schedule, eps) * sigma(cfg.schedule, eps);
      const std::vector<double> times(p.size(), eps);
      const std::vector<const Condition*> conds(p.size(), &cond);
      const auto score = field.evaluate(p, times, conds);
      for (std::size_t i = 0; i < p.size(); ++i) p[i] += s2 * score[i];
    }
    return p;
  };
  const std::vector<PoseVector> ends = solve(starts);

  PoseCandidateSet set;
  set.condition_id = cond.object_id;
  set.seed = cfg.seed;
  set.schedule = cfg.schedule;
  set.candidates.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    PoseVector end = ends[i];
    for (int attempt = 1;; ++attempt) {
      try {
        set.candidates.push_back(decode_pose(end));
        break;
      } catch (const InvalidArgument&) {
        if (attempt > kMaxRetries) {
          throw CandidateDegenerate("sample: candidate " + std::to_string(i) + " degenerate after " +
                                    std::to_string(kMaxRetries) + " retries");
        }
        end = solve({draw(i, attempt)}).front();
      }
    }
  }
  return set;
}

}  // namespace

PoseCandidateSet sample_candidates(const ScoreField& field, const Condition& cond, const SamplerConfig& cfg) {
  cfg.validate();
  const double sigma_max = cfg.schedule.sigma_max;
  return solve_candidates(field, cond, cfg, 1.0, cfg.steps, [&](std::size_t i, int attempt) {
    Rng rng = candidate_rng(cfg.seed, i, attempt);
    return PoseVector(sigma_max * standard_normal_pose(rng));
  });
}

PoseCandidateSet warm_start_sample(const ScoreField& field, const Condition& cond, const Pose& prev, double t0,
                                   const SamplerConfig& cfg) {
  cfg.validate();
  if (!(t0 > cfg.schedule.eps && t0 <= 1.0)) throw InvalidArgument("warm_start_sample: t0 must lie in (eps, 1]");
  const PoseVector p0 = encode_pose(prev);
  return solve_candidates(field, cond, cfg, t0, warm_start_steps(cfg, t0), [&](std::size_t i, int attempt) {
    Rng rng = candidate_rng(cfg.seed, i, attempt);
    return perturb(p0, t0, cfg.schedule, rng);
  });
}

AggregationResult select_pose(const PoseCandidateSet& candidates, const EnergyField* energy, const Condition& cond,
                              const FilterConfig& filter, const ClusterConfig& cluster) {
  if (!energy) return aggregate(candidates, cluster);
  return aggregate(rank_and_filter(candidates, *energy, cond, filter), cluster);
}

std::vector<Pose> track_sequence(const ScoreField& field, const EnergyField* energy, std::span<const Condition> conds,
                                 const Pose& init, const TrackConfig& cfg) {
  if (conds.empty()) throw InvalidArgument("track_sequence: no frames");
  std::vector<Pose> out;
  out.reserve(conds.size());
  Pose prev = init;
  for (std::size_t i = 0; i < conds.size(); ++i) {
    SamplerConfig frame_cfg = cfg.sampler;
    frame_cfg.seed = cfg.sampler.seed + i;
    const PoseCandidateSet set = warm_start_sample(field, conds[i], prev, cfg.t0, frame_cfg);
    prev = select_pose(set, energy, conds[i], cfg.filter, cfg.cluster).pose;
    out.push_back(prev);
  }
  return out;
}

}  // namespace genpose
