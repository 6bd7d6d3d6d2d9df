#pragma once

#include <Eigen/Core>

#include <vector>

#include "genpose/geometry.hpp"

namespace genpose {

struct Observation2D3D {
  Vec3 world_point;
  Vec2 pixel;
  int frame_index = 0;
};

// Camera-to-world pose per frame.
struct CameraTrack {
  std::vector<Pose> poses;
  CameraIntrinsics intrinsics;

  void validate() const;
};

struct LmOptions {
  double initial_damping = 1e-3;
  double damping_factor = 10.0;
  int max_iterations = 100;
  double relative_tolerance = 1e-12;  // on the cost decrease of an accepted step
};

// Residual pi(R X + t) - x for a world-to-camera pose (R, t).
Vec2 reprojection_residual(const CameraIntrinsics& K, const Pose& world_to_camera, const Vec3& X, const Vec2& x);
// d residual / d(omega, dt) for the update R <- exp(omega) R, t <- t + dt.
Eigen::Matrix<double, 2, 6> reprojection_jacobian(const CameraIntrinsics& K, const Pose& world_to_camera,
                                                  const Vec3& X);
// Applies the local update above.
Pose apply_update(const Pose& world_to_camera, const Eigen::Matrix<double, 6, 1>& delta);

struct BundleAdjustResult {
  CameraTrack track;
  double cost = 0.0;  // sum of squared pixel residuals
  bool converged = false;
  int iterations = 0;
  std::vector<double> cost_history;  // initial cost, then every accepted step
};

// Refines every frame pose with the world points held fixed.
BundleAdjustResult bundle_adjust(const CameraTrack& track, const std::vector<Observation2D3D>& obs,
                                 const LmOptions& opts = {});

double reprojection_cost(const CameraTrack& track, const std::vector<Observation2D3D>& obs);
// Per-coordinate RMS of the pixel residuals: sqrt(cost / (2 N)).
double rms_residual(double cost, std::size_t observation_count);

struct KeypointAnnotation {
  int frame_index = 0;
  int keypoint = 0;  // index into model_points
  Vec2 pixel;
};

struct KeypointSet {
  std::vector<Vec3> model_points;  // object frame
  std::vector<KeypointAnnotation> annotations;
};

struct ObjectFitResult {
  Pose object_to_camera;  // in the reference frame
  double rms = 0.0;       // per-coordinate RMS pixel residual over every annotation
  bool converged = false;
};

// DLT on the reference frame, then LM over every annotated keyframe through the
// camera track.
ObjectFitResult fit_object_pose(const KeypointSet& kp, const CameraTrack& frames, int reference_frame,
                                const LmOptions& opts = {});

// Object-to-camera pose of frame i given the object's world pose.
Pose object_to_camera(const CameraTrack& track, int frame, const Pose& object_to_world);

std::vector<Vec2> project_points(const CameraIntrinsics& K, const Pose& object_to_camera,
                                 const std::vector<Vec3>& model_points);

struct FpsWeights {
  double w_t = 1.0;  // per meter
  double w_r = 0.5;  // per radian
};

double pose_distance(const Pose& a, const Pose& b, const FpsWeights& w);

// Greedy farthest point sampling seeded at frame 0; ties go to the lower index.
std::vector<int> fps_keyframes(const CameraTrack& track, int k, const FpsWeights& w = {});

}  // namespace genpose
