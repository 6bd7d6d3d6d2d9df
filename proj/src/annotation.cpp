#include "genpose/annotation.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cmath>
#include <functional>
#include <limits>

#include "genpose/errors.hpp"

namespace genpose {

using Vec6d = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Jac = Eigen::Matrix<double, 2, 6>;

void CameraTrack::validate() const {
  if (poses.empty()) throw InvalidArgument("camera track: no frames");
  intrinsics.validate();
  for (const Pose& p : poses) {
    if (!p.translation.allFinite()) throw InvalidArgument("camera track: non-finite translation");
  }
}

Vec2 reprojection_residual(const CameraIntrinsics& K, const Pose& world_to_camera, const Vec3& X, const Vec2& x) {
  return project_point(K, world_to_camera.transform(X)) - x;
}

namespace {

Eigen::Matrix<double, 2, 3> projection_jacobian(const CameraIntrinsics& K, const Vec3& p) {
  const double iz = 1.0 / p.z();
  Eigen::Matrix<double, 2, 3> J;
  J << K.fx * iz, 0.0, -K.fx * p.x() * iz * iz, 0.0, K.fy * iz, -K.fy * p.y() * iz * iz;
  return J;
}

// d(camera point) / d(omega, dt) for the left update, premultiplied by A.
Eigen::Matrix<double, 3, 6> point_jacobian(const Mat3& A, const Vec3& rotated) {
  Eigen::Matrix<double, 3, 6> J;
  J.leftCols<3>() = -A * skew(rotated);
  J.rightCols<3>() = A;
  return J;
}

}  // namespace

Jac reprojection_jacobian(const CameraIntrinsics& K, const Pose& world_to_camera, const Vec3& X) {
  const Vec3 rx = world_to_camera.rotation.rotate(X);
  const Vec3 p = rx + world_to_camera.translation;
  if (p.z() <= 0.0) throw BehindCamera("reprojection_jacobian: point behind camera");
  return projection_jacobian(K, p) * point_jacobian(Mat3::Identity(), rx);
}

Pose apply_update(const Pose& world_to_camera, const Vec6d& delta) {
  return {Rotation::from_rotation_vector(delta.head<3>()) * world_to_camera.rotation,
          world_to_camera.translation + delta.tail<3>()};
}

double rms_residual(double cost, std::size_t observation_count) {
  if (observation_count == 0) return 0.0;
  return std::sqrt(cost / (2.0 * static_cast<double>(observation_count)));
}

namespace {

// Generic LM over independent 6-dof blocks sharing one damping value.
// cost(state) returns +inf when any point falls behind a camera.
// normal(state, H, g) fills per-block J^T J and J^T r.
struct LmProblem {
  std::function<double(const std::vector<Pose>&)> cost;
  std::function<void(const std::vector<Pose>&, std::vector<Mat6>&, std::vector<Vec6d>&)> normal;
};

struct LmOutcome {
  std::vector<Pose> state;
  double cost = 0.0;
  bool converged = false;
  int iterations = 0;
  std::vector<double> history;
};

LmOutcome levenberg_marquardt(std::vector<Pose> state, const LmProblem& prob, const LmOptions& opts) {
  LmOutcome out;
  double cost = prob.cost(state);
  if (!std::isfinite(cost)) throw BehindCamera("initial estimate puts points behind a camera");
  out.history.push_back(cost);
  double lambda = opts.initial_damping;
  std::vector<Mat6> H(state.size());
  std::vector<Vec6d> g(state.size());
  bool fresh = true;
  int it = 0;
  for (; it < opts.max_iterations; ++it) {
    if (cost == 0.0) {
      out.converged = true;
      break;
    }
    if (fresh) prob.normal(state, H, g);
    std::vector<Pose> trial(state.size());
    for (std::size_t b = 0; b < state.size(); ++b) {
      Mat6 A = H[b];
      A.diagonal() += lambda * H[b].diagonal().cwiseMax(1e-12);
      const Vec6d step = A.ldlt().solve(-g[b]);
      trial[b] = apply_update(state[b], step);
    }
    const double trial_cost = prob.cost(trial);
    if (trial_cost < cost) {
      const double decrease = (cost - trial_cost) / cost;
      state = std::move(trial);
      cost = trial_cost;
      out.history.push_back(cost);
      lambda = std::max(lambda / opts.damping_factor, 1e-15);
      fresh = true;
      if (decrease < opts.relative_tolerance) {
        out.converged = true;
        ++it;
        break;
      }
    } else {
      lambda *= opts.damping_factor;
      fresh = false;
      // No representable improvement left: the iterate is a minimum.
      if (lambda > 1e16) {
        out.converged = true;
        ++it;
        break;
      }
    }
  }
  out.state = std::move(state);
  out.cost = cost;
  out.iterations = it;
  return out;
}

void check_lm_options(const LmOptions& o) {
  if (!(o.initial_damping > 0 && o.damping_factor > 1 && o.max_iterations >= 1 && o.relative_tolerance >= 0)) {
    throw InvalidArgument("LM options out of range");
  }
}

}  // namespace

double reprojection_cost(const CameraTrack& track, const std::vector<Observation2D3D>& obs) {
  double c = 0.0;
  for (const auto& o : obs) {
    const Pose w2c = track.poses.at(static_cast<std::size_t>(o.frame_index)).inverse();
    c += reprojection_residual(track.intrinsics, w2c, o.world_point, o.pixel).squaredNorm();
  }
  return c;
}

BundleAdjustResult bundle_adjust(const CameraTrack& track, const std::vector<Observation2D3D>& obs,
                                 const LmOptions& opts) {
  track.validate();
  check_lm_options(opts);
  const std::size_t n = track.poses.size();
  std::vector<int> counts(n, 0);
  for (const auto& o : obs) {
    if (o.frame_index < 0 || static_cast<std::size_t>(o.frame_index) >= n) {
      throw InvalidArgument("bundle_adjust: observation frame index " + std::to_string(o.frame_index) +
                            " out of range");
    }
    if (!o.world_point.allFinite() || !o.pixel.allFinite()) throw InvalidArgument("bundle_adjust: non-finite obs");
    ++counts[static_cast<std::size_t>(o.frame_index)];
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (counts[i] < 3) {
      throw UnderConstrained("bundle_adjust: frame " + std::to_string(i) + " has " + std::to_string(counts[i]) +
                             " observations, need at least 3");
    }
  }
  const CameraIntrinsics& K = track.intrinsics;

  LmProblem prob;
  prob.cost = [&](const std::vector<Pose>& w2c) {
    double c = 0.0;
    for (const auto& o : obs) {
      const Pose& T = w2c[static_cast<std::size_t>(o.frame_index)];
      const Vec3 p = T.transform(o.world_point);
      if (p.z() <= 0.0) return std::numeric_limits<double>::infinity();
      c += (project_point(K, p) - o.pixel).squaredNorm();
    }
    return c;
  };
  prob.normal = [&](const std::vector<Pose>& w2c, std::vector<Mat6>& H, std::vector<Vec6d>& g) {
    for (auto& h : H) h.setZero();
    for (auto& v : g) v.setZero();
    for (const auto& o : obs) {
      const auto f = static_cast<std::size_t>(o.frame_index);
      const Jac J = reprojection_jacobian(K, w2c[f], o.world_point);
      const Vec2 r = reprojection_residual(K, w2c[f], o.world_point, o.pixel);
      H[f] += J.transpose() * J;
      g[f] += J.transpose() * r;
    }
  };

  std::vector<Pose> w2c;
  w2c.reserve(n);
  for (const Pose& p : track.poses) w2c.push_back(p.inverse());
  const LmOutcome lm = levenberg_marquardt(std::move(w2c), prob, opts);

  BundleAdjustResult res;
  res.track.intrinsics = K;
  for (const Pose& p : lm.state) res.track.poses.push_back(p.inverse());
  res.cost = lm.cost;
  res.converged = lm.converged;
  res.iterations = lm.iterations;
  res.cost_history = lm.history;
  return res;
}

Pose object_to_camera(const CameraTrack& track, int frame, const Pose& object_to_world) {
  return track.poses.at(static_cast<std::size_t>(frame)).inverse() * object_to_world;
}

std::vector<Vec2> project_points(const CameraIntrinsics& K, const Pose& object_to_camera,
                                 const std::vector<Vec3>& model_points) {
  std::vector<Vec2> out;
  out.reserve(model_points.size());
  for (const Vec3& X : model_points) out.push_back(project_point(K, object_to_camera.transform(X)));
  return out;
}

namespace {

// Linear pose from normalized image coordinates; requires >= 6 points.
Pose dlt_pose(const std::vector<Vec3>& X, const std::vector<Vec2>& uv) {
  const auto n = static_cast<Eigen::Index>(X.size());
  Vec3 c = Vec3::Zero();
  for (const Vec3& p : X) c += p;
  c /= static_cast<double>(n);
  double spread = 0.0;
  for (const Vec3& p : X) spread += (p - c).norm();
  const double s = static_cast<double>(n) / spread;

  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(2 * n, 12);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Vector4d Xh;
    Xh << s * (X[static_cast<std::size_t>(i)] - c), 1.0;
    const double u = uv[static_cast<std::size_t>(i)].x(), v = uv[static_cast<std::size_t>(i)].y();
    A.block<1, 4>(2 * i, 0) = Xh.transpose();
    A.block<1, 4>(2 * i, 8) = -u * Xh.transpose();
    A.block<1, 4>(2 * i + 1, 4) = Xh.transpose();
    A.block<1, 4>(2 * i + 1, 8) = -v * Xh.transpose();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::Matrix<double, 12, 1> h = svd.matrixV().col(11);
  Eigen::Matrix<double, 3, 4> P;
  P << h.segment<4>(0).transpose(), h.segment<4>(4).transpose(), h.segment<4>(8).transpose();

  Eigen::JacobiSVD<Mat3> msvd(P.leftCols<3>(), Eigen::ComputeFullU | Eigen::ComputeFullV);
  double scale = msvd.singularValues().mean();
  Mat3 R = msvd.matrixU() * msvd.matrixV().transpose();
  if (R.determinant() < 0) {
    R = -R;
    scale = -scale;
  }
  // Camera point = (1/s) R X_norm + R c + t, and P is that map up to the factor scale * s.
  return {Rotation::from_matrix(R), P.col(3) / (scale * s) - R * c};
}

void check_non_degenerate(const std::vector<Vec3>& X) {
  Vec3 c = Vec3::Zero();
  for (const Vec3& p : X) c += p;
  c /= static_cast<double>(X.size());
  Eigen::MatrixXd M(X.size(), 3);
  for (std::size_t i = 0; i < X.size(); ++i) M.row(static_cast<Eigen::Index>(i)) = (X[i] - c).transpose();
  const Vec3 sv = Eigen::JacobiSVD<Eigen::MatrixXd>(M).singularValues();
  if (sv(0) <= 0.0 || sv(2) / sv(0) < 1e-6) {
    throw DegenerateConfiguration("fit_object_pose: model points are coplanar or collinear");
  }
}

}  // namespace

ObjectFitResult fit_object_pose(const KeypointSet& kp, const CameraTrack& frames, int reference_frame,
                                const LmOptions& opts) {
  frames.validate();
  check_lm_options(opts);
  const auto nf = static_cast<int>(frames.poses.size());
  if (reference_frame < 0 || reference_frame >= nf) throw InvalidArgument("fit_object_pose: bad reference frame");
  for (const auto& a : kp.annotations) {
    if (a.frame_index < 0 || a.frame_index >= nf) throw InvalidArgument("fit_object_pose: annotation frame range");
    if (a.keypoint < 0 || a.keypoint >= static_cast<int>(kp.model_points.size())) {
      throw InvalidArgument("fit_object_pose: annotation keypoint index out of range");
    }
  }

  const CameraIntrinsics& K = frames.intrinsics;
  std::vector<Vec3> ref_X;
  std::vector<Vec2> ref_uv;
  for (const auto& a : kp.annotations) {
    if (a.frame_index != reference_frame) continue;
    ref_X.push_back(kp.model_points[static_cast<std::size_t>(a.keypoint)]);
    ref_uv.emplace_back((a.pixel.x() - K.cx) / K.fx, (a.pixel.y() - K.cy) / K.fy);
  }
  if (ref_X.size() < 6) {
    throw UnderConstrained("fit_object_pose: " + std::to_string(ref_X.size()) +
                           " correspondences in the reference frame, need at least 6");
  }
  check_non_degenerate(ref_X);
  const Pose init = dlt_pose(ref_X, ref_uv);

  // Maps the reference camera frame into frame i.
  const Pose ref_to_world = frames.poses[static_cast<std::size_t>(reference_frame)];
  std::vector<Pose> ref_to_cam(static_cast<std::size_t>(nf));
  for (std::size_t i = 0; i < ref_to_cam.size(); ++i) ref_to_cam[i] = frames.poses[i].inverse() * ref_to_world;

  LmProblem prob;
  prob.cost = [&](const std::vector<Pose>& s) {
    double c = 0.0;
    for (const auto& a : kp.annotations) {
      const Vec3 p = (ref_to_cam[static_cast<std::size_t>(a.frame_index)] * s[0])
                         .transform(kp.model_points[static_cast<std::size_t>(a.keypoint)]);
      if (p.z() <= 0.0) return std::numeric_limits<double>::infinity();
      c += (project_point(K, p) - a.pixel).squaredNorm();
    }
    return c;
  };
  prob.normal = [&](const std::vector<Pose>& s, std::vector<Mat6>& H, std::vector<Vec6d>& g) {
    H[0].setZero();
    g[0].setZero();
    for (const auto& a : kp.annotations) {
      const Pose& B = ref_to_cam[static_cast<std::size_t>(a.frame_index)];
      const Vec3 rx = s[0].rotation.rotate(kp.model_points[static_cast<std::size_t>(a.keypoint)]);
      const Vec3 p = B.transform(rx + s[0].translation);
      const Jac J = projection_jacobian(K, p) * point_jacobian(B.rotation.matrix(), rx);
      const Vec2 r = project_point(K, p) - a.pixel;
      H[0] += J.transpose() * J;
      g[0] += J.transpose() * r;
    }
  };

  const LmOutcome lm = levenberg_marquardt({init}, prob, opts);
  return {lm.state[0], rms_residual(lm.cost, kp.annotations.size()), lm.converged};
}

double pose_distance(const Pose& a, const Pose& b, const FpsWeights& w) {
  return w.w_t * (a.translation - b.translation).norm() + w.w_r * geodesic_distance(a.rotation, b.rotation);
}

std::vector<int> fps_keyframes(const CameraTrack& track, int k, const FpsWeights& w) {
  const std::size_t n = track.poses.size();
  if (k < 1 || static_cast<std::size_t>(k) > n) throw InvalidArgument("fps_keyframes: k must lie in [1, frame count]");
  std::vector<int> picked{0};
  std::vector<double> d(n);
  std::vector<char> used(n, 0);
  used[0] = 1;
  for (std::size_t i = 0; i < n; ++i) d[i] = pose_distance(track.poses[0], track.poses[i], w);
  while (picked.size() < static_cast<std::size_t>(k)) {
    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (!used[i] && (best == n || d[i] > d[best])) best = i;
    }
    picked.push_back(static_cast<int>(best));
    used[best] = 1;
    for (std::size_t i = 0; i < n; ++i) d[i] = std::min(d[i], pose_distance(track.poses[best], track.poses[i], w));
  }
  return picked;
}

}  // namespace genpose
