#include "genpose/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "genpose/errors.hpp"

namespace genpose {

namespace {

constexpr double kDeg = 180.0 / std::numbers::pi;

Rotation about(const Vec3& axis, double angle) { return Rotation::from_axis_angle(axis, angle); }

// Closes a generating set under composition.
std::vector<Rotation> close_group(std::vector<Rotation> gens) {
  std::vector<Rotation> g{Rotation::identity()};
  auto contains = [&](const Rotation& r) {
    return std::any_of(g.begin(), g.end(), [&](const Rotation& x) { return geodesic_distance(x, r) < 1e-6; });
  };
  for (std::size_t i = 0; i < g.size(); ++i) {
    for (const Rotation& s : gens) {
      const Rotation r = g[i] * s;
      if (!contains(r)) g.push_back(r);
    }
  }
  return g;
}

// Component of q that rotates about axis; identity when q is a pure half-turn swing.
Rotation twist_about(const Rotation& q, const Vec3& axis) {
  const Eigen::Quaterniond& e = q.quaternion();
  const double proj = e.vec().dot(axis);
  if (std::abs(e.w()) < 1e-12 && std::abs(proj) < 1e-12) return Rotation::identity();
  return Rotation(e.w(), proj * axis.x(), proj * axis.y(), proj * axis.z());
}

}  // namespace

void SymmetrySpec::validate() const {
  if (const auto* c = std::get_if<ContinuousSymmetry>(&kind)) {
    if (!c->axis.allFinite() || std::abs(c->axis.norm() - 1.0) > 1e-9) {
      throw InvalidArgument("symmetry: axis must be unit length");
    }
  } else if (const auto* d = std::get_if<DiscreteSymmetry>(&kind)) {
    const auto& g = d->group;
    auto member = [&](const Rotation& r) {
      return std::any_of(g.begin(), g.end(), [&](const Rotation& x) { return geodesic_distance(x, r) <= 1e-6; });
    };
    if (!member(Rotation::identity())) throw InvalidArgument("symmetry: group lacks the identity");
    for (const Rotation& a : g) {
      for (const Rotation& b : g) {
        if (!member(a * b)) throw InvalidArgument("symmetry: group is not closed under composition");
      }
    }
  }
}

SymmetrySpec SymmetrySpec::continuous(const Vec3& axis) {
  SymmetrySpec s{ContinuousSymmetry{axis}};
  s.validate();
  return s;
}

SymmetrySpec SymmetrySpec::discrete(std::vector<Rotation> group) {
  SymmetrySpec s{DiscreteSymmetry{std::move(group)}};
  s.validate();
  return s;
}

SymmetrySpec SymmetrySpec::preset(const std::string& name) {
  const double pi = std::numbers::pi;
  const Vec3 x = Vec3::UnitX(), y = Vec3::UnitY(), z = Vec3::UnitZ();
  if (name == "none") return none();
  if (name == "continuous") return continuous(z);
  if (name == "bimodal") return discrete(close_group({about(z, pi)}));
  if (name == "4-peak") return discrete(close_group({about(z, pi), about(x, pi)}));
  if (name == "8-peak") return discrete(close_group({about(z, pi / 2), about(x, pi)}));
  if (name == "24-peak") return discrete(close_group({about(z, pi / 2), about(x, pi / 2), about(y, pi / 2)}));
  throw InvalidArgument("unknown symmetry preset '" + name + "'");
}

double sym_rotation_error(const Rotation& gt, const Rotation& pred, const SymmetrySpec& sym) {
  if (const auto* c = std::get_if<ContinuousSymmetry>(&sym.kind)) {
    const Vec3 a = gt.rotate(c->axis), b = pred.rotate(c->axis);
    return std::atan2(a.cross(b).norm(), a.dot(b)) * kDeg;
  }
  if (const auto* d = std::get_if<DiscreteSymmetry>(&sym.kind)) {
    double best = std::numbers::pi;
    for (const Rotation& g : d->group) best = std::min(best, geodesic_distance(gt * g, pred));
    return best * kDeg;
  }
  return geodesic_distance(gt, pred) * kDeg;
}

PoseError pose_error(const EvalInstance& inst) {
  inst.gt.validate();
  inst.pred.validate();
  PoseError e;
  e.rot_err = sym_rotation_error(inst.gt.pose.rotation, inst.pred.pose.rotation, inst.symmetry);
  e.trans_err = (inst.gt.pose.translation - inst.pred.pose.translation).norm() * 100.0;

  ScaledPose pred = inst.pred;
  if (const auto* c = std::get_if<ContinuousSymmetry>(&inst.symmetry.kind)) {
    // Spin the prediction about its own symmetry axis to the gt azimuth.
    const Rotation delta = pred.pose.rotation.inverse() * inst.gt.pose.rotation;
    pred.pose.rotation = pred.pose.rotation * twist_about(delta, c->axis);
  }
  e.iou = box_iou(OrientedBox::from_scaled_pose(inst.gt), OrientedBox::from_scaled_pose(pred));
  return e;
}

double auc_iou(std::span<const PoseError> errors, double n_percent) {
  if (errors.empty()) throw InvalidArgument("auc_iou: no instances");
  if (!(n_percent >= 0.0 && n_percent < 100.0)) throw InvalidArgument("auc_iou: threshold must lie in [0, 100)");
  const double a = n_percent / 100.0;
  double sum = 0.0;
  for (const PoseError& e : errors) sum += std::max(e.iou - a, 0.0);
  return 100.0 * sum / (static_cast<double>(errors.size()) * (1.0 - a));
}

double vus(std::span<const PoseError> errors, double n_degrees, double m_cm) {
  if (errors.empty()) throw InvalidArgument("vus: no instances");
  if (!(n_degrees > 0.0 && m_cm > 0.0)) throw InvalidArgument("vus: thresholds must be positive");
  double sum = 0.0;
  for (const PoseError& e : errors) sum += std::max(n_degrees - e.rot_err, 0.0) * std::max(m_cm - e.trans_err, 0.0);
  return 100.0 * sum / (static_cast<double>(errors.size()) * n_degrees * m_cm);
}

namespace {

std::vector<PoseError> errors_of(std::span<const EvalInstance> instances) {
  std::vector<PoseError> out;
  out.reserve(instances.size());
  for (const EvalInstance& i : instances) out.push_back(pose_error(i));
  return out;
}

}  // namespace

double auc_iou(std::span<const EvalInstance> instances, double n_percent) {
  return auc_iou(errors_of(instances), n_percent);
}

double vus(std::span<const EvalInstance> instances, double n_degrees, double m_cm) {
  return vus(errors_of(instances), n_degrees, m_cm);
}

MetricValues metric_values(std::span<const PoseError> errors) {
  MetricValues v;
  v.auc_iou25 = auc_iou(errors, 25);
  v.auc_iou50 = auc_iou(errors, 50);
  v.auc_iou75 = auc_iou(errors, 75);
  v.vus_5_2 = vus(errors, 5, 2);
  v.vus_5_5 = vus(errors, 5, 5);
  v.vus_10_2 = vus(errors, 10, 2);
  v.vus_10_5 = vus(errors, 10, 5);
  v.count = errors.size();
  return v;
}

MetricReport evaluate(std::span<const EvalInstance> instances) {
  if (instances.empty()) throw InvalidArgument("evaluate: no instances");
  std::map<std::string, std::vector<PoseError>> groups;
  for (const EvalInstance& i : instances) groups[i.category].push_back(pose_error(i));

  MetricReport r;
  r.instance_count = instances.size();
  const double k = static_cast<double>(groups.size());
  for (const auto& [cat, errs] : groups) {
    const MetricValues v = metric_values(errs);
    r.per_category[cat] = v;
    r.overall.auc_iou25 += v.auc_iou25;
    r.overall.auc_iou50 += v.auc_iou50;
    r.overall.auc_iou75 += v.auc_iou75;
    r.overall.vus_5_2 += v.vus_5_2;
    r.overall.vus_5_5 += v.vus_5_5;
    r.overall.vus_10_2 += v.vus_10_2;
    r.overall.vus_10_5 += v.vus_10_5;
  }
  for (double* m : {&r.overall.auc_iou25, &r.overall.auc_iou50, &r.overall.auc_iou75, &r.overall.vus_5_2,
                    &r.overall.vus_5_5, &r.overall.vus_10_2, &r.overall.vus_10_5}) {
    *m /= k;
  }
  r.overall.count = instances.size();
  return r;
}

TrackingSummary tracking_summary(std::span<const PoseError> per_frame, std::span<const double> wall_times) {
  if (per_frame.empty()) throw InvalidArgument("tracking_summary: no frames");
  if (wall_times.size() != per_frame.size()) throw InvalidArgument("tracking_summary: one wall time per frame");
  const double total = std::accumulate(wall_times.begin(), wall_times.end(), 0.0);
  if (!(total > 0.0)) throw InvalidArgument("tracking_summary: total wall time must be positive");
  const double n = static_cast<double>(per_frame.size());
  TrackingSummary s;
  s.fps = n / total;
  s.vus_5_5 = vus(per_frame, 5, 5);
  for (const PoseError& e : per_frame) {
    s.miou += 100.0 * e.iou / n;
    s.rerr += e.rot_err / n;
    s.terr += e.trans_err / n;
  }
  return s;
}

}  // namespace genpose
