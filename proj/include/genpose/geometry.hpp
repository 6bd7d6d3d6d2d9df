#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <span>
#include <vector>

namespace genpose {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;

// Unit quaternion rotation. q and -q compare equal.
class Rotation {
 public:
  Rotation() : q_(Eigen::Quaterniond::Identity()) {}
  // Normalizes; throws InvalidArgument for a zero or non-finite quaternion.
  explicit Rotation(const Eigen::Quaterniond& q);
  Rotation(double w, double x, double y, double z);

  static Rotation identity() { return {}; }
  static Rotation from_axis_angle(const Vec3& axis, double angle);
  static Rotation from_rotation_vector(const Vec3& omega);
  // Nearest rotation to m in Frobenius norm.
  static Rotation from_matrix(const Mat3& m);

  const Eigen::Quaterniond& quaternion() const { return q_; }
  double w() const { return q_.w(); }
  double x() const { return q_.x(); }
  double y() const { return q_.y(); }
  double z() const { return q_.z(); }
  Eigen::Vector4d wxyz() const { return {q_.w(), q_.x(), q_.y(), q_.z()}; }

  Mat3 matrix() const { return q_.toRotationMatrix(); }
  Rotation inverse() const { return Rotation(q_.conjugate()); }
  Vec3 rotate(const Vec3& v) const { return q_ * v; }
  // Rotation vector (axis * angle) with angle in [0, pi].
  Vec3 log() const;

  Rotation operator*(const Rotation& other) const { return Rotation(q_ * other.q_); }
  bool approx_equal(const Rotation& other, double tol_rad = 1e-9) const;

 private:
  Eigen::Quaterniond q_;
};

struct Pose {
  Rotation rotation;
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }
  Pose inverse() const;
  Vec3 transform(const Vec3& p) const { return rotation.rotate(p) + translation; }
  Pose operator*(const Pose& other) const;
};

struct ScaledPose {
  Pose pose;
  Vec3 scale = Vec3::Ones();

  // Throws InvalidArgument unless every extent is strictly positive.
  void validate() const;
};

struct OrientedBox {
  Vec3 center = Vec3::Zero();
  Rotation rotation;
  Vec3 extents = Vec3::Ones();  // full side lengths

  static OrientedBox from_scaled_pose(const ScaledPose& sp);
  double volume() const { return extents.prod(); }
  // Eight corners, index bit i selects the sign along local axis i.
  std::array<Vec3, 8> corners() const;
};

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  void validate() const;
  Mat3 matrix() const;
};

using PointCloud = std::vector<Vec3>;

// Angle of a^-1 * b in [0, pi].
double geodesic_distance(const Rotation& a, const Rotation& b);

// Rotation maximizing sum_i <q, q_i>^2. When the top eigenvalue is repeated the
// sign-aligned chordal sum is projected onto the top eigenspace.
Rotation quaternion_mean(std::span<const Rotation> rotations);

Vec2 project_point(const CameraIntrinsics& K, const Vec3& p_cam);

// Intersection over union of two oriented boxes via exact convex clipping.
double box_iou(const OrientedBox& a, const OrientedBox& b);
double box_intersection_volume(const OrientedBox& a, const OrientedBox& b);

// Gram-Schmidt readout of two stacked 3-vectors (the first two matrix columns).
Rotation sixd_to_rotation(const Vec6& v);
Vec6 rotation_to_sixd(const Rotation& r);

Mat3 skew(const Vec3& v);

}  // namespace genpose
