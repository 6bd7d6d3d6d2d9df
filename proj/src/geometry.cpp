#include "genpose/geometry.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "genpose/errors.hpp"

namespace genpose {

namespace {

bool finite(const Eigen::Quaterniond& q) { return q.coeffs().allFinite(); }

}  // namespace

Rotation::Rotation(const Eigen::Quaterniond& q) : q_(q) {
  const double n = q_.norm();
  if (!finite(q_) || n < 1e-300) {
    throw InvalidArgument("rotation: quaternion must be finite and nonzero");
  }
  // Leave already-unit input bit-exact so that save/load round trips.
  if (std::abs(n - 1.0) > 1e-15) q_.coeffs() /= n;
}

Rotation::Rotation(double w, double x, double y, double z) : Rotation(Eigen::Quaterniond(w, x, y, z)) {}

Rotation Rotation::from_axis_angle(const Vec3& axis, double angle) {
  const double n = axis.norm();
  if (!axis.allFinite() || n == 0.0 || !std::isfinite(angle)) {
    throw InvalidArgument("rotation: axis must be finite and nonzero");
  }
  return Rotation(Eigen::Quaterniond(Eigen::AngleAxisd(angle, axis / n)));
}

Rotation Rotation::from_rotation_vector(const Vec3& omega) {
  const double angle = omega.norm();
  if (angle < 1e-12) {
    // first-order expansion keeps the map smooth at the origin
    return Rotation(1.0, 0.5 * omega.x(), 0.5 * omega.y(), 0.5 * omega.z());
  }
  return from_axis_angle(omega / angle, angle);
}

Rotation Rotation::from_matrix(const Mat3& m) {
  if (!m.allFinite()) throw InvalidArgument("rotation: non-finite matrix");
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
  const Mat3 r = svd.matrixU() * d * svd.matrixV().transpose();
  return Rotation(Eigen::Quaterniond(r));
}

Vec3 Rotation::log() const {
  Eigen::Quaterniond q = q_;
  if (q.w() < 0) q.coeffs() = -q.coeffs();
  const Vec3 v = q.vec();
  const double s = v.norm();
  if (s < 1e-15) return 2.0 * v;
  const double angle = 2.0 * std::atan2(s, q.w());
  return v / s * angle;
}

bool Rotation::approx_equal(const Rotation& other, double tol_rad) const {
  return geodesic_distance(*this, other) <= tol_rad;
}

Pose Pose::inverse() const {
  const Rotation inv = rotation.inverse();
  return {inv, -inv.rotate(translation)};
}

Pose Pose::operator*(const Pose& other) const {
  return {rotation * other.rotation, rotation.rotate(other.translation) + translation};
}

void ScaledPose::validate() const {
  if (!scale.allFinite() || (scale.array() <= 0.0).any()) {
    throw InvalidArgument("scaled pose: every scale component must be > 0");
  }
  if (!pose.translation.allFinite()) throw InvalidArgument("scaled pose: non-finite translation");
}

OrientedBox OrientedBox::from_scaled_pose(const ScaledPose& sp) {
  return {sp.pose.translation, sp.pose.rotation, sp.scale};
}

std::array<Vec3, 8> OrientedBox::corners() const {
  std::array<Vec3, 8> out;
  const Mat3 r = rotation.matrix();
  for (int i = 0; i < 8; ++i) {
    Vec3 local(((i & 1) ? 0.5 : -0.5) * extents.x(), ((i & 2) ? 0.5 : -0.5) * extents.y(),
               ((i & 4) ? 0.5 : -0.5) * extents.z());
    out[i] = center + r * local;
  }
  return out;
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0 && fy > 0)) throw InvalidArgument("intrinsics: focal lengths must be positive");
  if (!(cx >= 0 && cx < width && cy >= 0 && cy < height)) {
    throw InvalidArgument("intrinsics: principal point outside the image");
  }
}

Mat3 CameraIntrinsics::matrix() const {
  Mat3 k;
  k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
  return k;
}

double geodesic_distance(const Rotation& a, const Rotation& b) {
  const Eigen::Quaterniond rel = a.quaternion().conjugate() * b.quaternion();
  if (!rel.coeffs().allFinite()) throw InvalidArgument("geodesic_distance: non-finite input");
  return 2.0 * std::atan2(rel.vec().norm(), std::abs(rel.w()));
}

Rotation quaternion_mean(std::span<const Rotation> rotations) {
  if (rotations.empty()) throw InvalidArgument("quaternion_mean: empty input");
  const Eigen::Vector4d first = rotations.front().wxyz();
  Eigen::Matrix4d scatter = Eigen::Matrix4d::Zero();
  Eigen::Vector4d sum = Eigen::Vector4d::Zero();
  for (const Rotation& r : rotations) {
    Eigen::Vector4d q = r.wxyz();
    if (q.dot(first) < 0) q = -q;
    scatter += q * q.transpose();
    sum += q;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> eig(scatter);
  const Eigen::Vector4d values = eig.eigenvalues();
  const Eigen::Matrix4d vectors = eig.eigenvectors();
  const double tol = 1e-10 * static_cast<double>(rotations.size());

  Eigen::Vector4d projected = Eigen::Vector4d::Zero();
  for (int i = 3; i >= 0 && values(i) >= values(3) - tol; --i) {
    projected += vectors.col(i) * vectors.col(i).dot(sum);
  }
  Eigen::Vector4d best;
  if (projected.norm() > 1e-12) {
    best = projected;
  } else {
    best = vectors.col(3);
    if (best.dot(first) < 0) best = -best;
  }
  return Rotation(best(0), best(1), best(2), best(3));
}

Vec2 project_point(const CameraIntrinsics& K, const Vec3& p_cam) {
  if (!p_cam.allFinite()) throw InvalidArgument("project_point: non-finite point");
  if (p_cam.z() <= 0.0) throw BehindCamera("project_point: point is behind the camera");
  return {K.fx * p_cam.x() / p_cam.z() + K.cx, K.fy * p_cam.y() / p_cam.z() + K.cy};
}

namespace {

using Polygon = std::vector<Vec3>;

struct Plane {
  Vec3 normal;  // outward
  double offset;
  double distance(const Vec3& p) const { return normal.dot(p) - offset; }
};

// Sorts coplanar points counter-clockwise about the normal.
void order_ccw(Polygon& poly, const Vec3& normal) {
  if (poly.size() < 3) return;
  Vec3 c = Vec3::Zero();
  for (const Vec3& p : poly) c += p;
  c /= static_cast<double>(poly.size());
  Vec3 u = normal.unitOrthogonal();
  Vec3 v = normal.cross(u);
  std::vector<std::pair<double, Vec3>> keyed;
  keyed.reserve(poly.size());
  for (const Vec3& p : poly) keyed.emplace_back(std::atan2((p - c).dot(v), (p - c).dot(u)), p);
  std::stable_sort(keyed.begin(), keyed.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  for (std::size_t i = 0; i < poly.size(); ++i) poly[i] = keyed[i].second;
}

std::array<Plane, 6> box_planes(const OrientedBox& box) {
  std::array<Plane, 6> planes;
  const Mat3 r = box.rotation.matrix();
  for (int axis = 0; axis < 3; ++axis) {
    const Vec3 n = r.col(axis);
    const double half = 0.5 * box.extents(axis);
    planes[2 * axis] = {n, n.dot(box.center) + half};
    planes[2 * axis + 1] = {-n, -n.dot(box.center) + half};
  }
  return planes;
}

struct Face {
  Polygon vertices;
  Vec3 normal;
};

std::vector<Face> box_faces(const OrientedBox& box) {
  const auto corners = box.corners();
  const Mat3 r = box.rotation.matrix();
  std::vector<Face> faces;
  for (int axis = 0; axis < 3; ++axis) {
    for (int side = 0; side < 2; ++side) {
      Face f;
      f.normal = side ? Vec3(r.col(axis)) : Vec3(-r.col(axis));
      for (int i = 0; i < 8; ++i) {
        if (((i >> axis) & 1) == side) f.vertices.push_back(corners[i]);
      }
      order_ccw(f.vertices, f.normal);
      faces.push_back(std::move(f));
    }
  }
  return faces;
}

// Keeps the part of a closed convex polyhedron with plane.distance <= tol.
std::vector<Face> clip(const std::vector<Face>& faces, const Plane& plane, double tol) {
  std::vector<Face> out;
  Polygon cap;
  bool face_on_plane = false;
  for (const Face& face : faces) {
    Polygon kept;
    bool all_on_plane = true;
    const std::size_t n = face.vertices.size();
    for (std::size_t i = 0; i < n; ++i) {
      const Vec3& cur = face.vertices[i];
      const Vec3& nxt = face.vertices[(i + 1) % n];
      const double dc = plane.distance(cur);
      const double dn = plane.distance(nxt);
      const bool cur_in = dc <= tol;
      const bool nxt_in = dn <= tol;
      if (std::abs(dc) > tol) all_on_plane = false;
      if (cur_in) {
        kept.push_back(cur);
        if (dc >= -tol) cap.push_back(cur);
      }
      if (cur_in != nxt_in) {
        const double s = std::clamp(dc / (dc - dn), 0.0, 1.0);
        const Vec3 hit = cur + s * (nxt - cur);
        kept.push_back(hit);
        cap.push_back(hit);
      }
    }
    if (kept.size() >= 3) {
      if (all_on_plane) face_on_plane = true;
      out.push_back({std::move(kept), face.normal});
    }
  }
  if (!face_on_plane && cap.size() >= 3 && !out.empty()) {
    order_ccw(cap, plane.normal);
    out.push_back({std::move(cap), plane.normal});
  }
  return out;
}

double polyhedron_volume(const std::vector<Face>& faces) {
  if (faces.empty()) return 0.0;
  Vec3 ref = Vec3::Zero();
  std::size_t count = 0;
  for (const Face& f : faces) {
    for (const Vec3& p : f.vertices) {
      ref += p;
      ++count;
    }
  }
  ref /= static_cast<double>(count);
  double vol = 0.0;
  for (const Face& f : faces) {
    const Vec3& a = f.vertices[0];
    for (std::size_t i = 1; i + 1 < f.vertices.size(); ++i) {
      vol += (a - ref).dot((f.vertices[i] - ref).cross(f.vertices[i + 1] - ref));
    }
  }
  return std::max(0.0, vol / 6.0);
}

void check_box(const OrientedBox& b) {
  if (!b.center.allFinite() || !b.extents.allFinite() || (b.extents.array() <= 0.0).any()) {
    throw InvalidArgument("box_iou: boxes need finite, strictly positive extents");
  }
}

}  // namespace

double box_intersection_volume(const OrientedBox& a, const OrientedBox& b) {
  check_box(a);
  check_box(b);
  const double ra = 0.5 * a.extents.norm();
  const double rb = 0.5 * b.extents.norm();
  if ((a.center - b.center).norm() > ra + rb) return 0.0;
  const double tol = 1e-12 * (ra + rb);
  std::vector<Face> poly = box_faces(a);
  for (const Plane& plane : box_planes(b)) {
    poly = clip(poly, plane, tol);
    if (poly.empty()) return 0.0;
  }
  return polyhedron_volume(poly);
}

double box_iou(const OrientedBox& a, const OrientedBox& b) {
  // Clipping identical boxes leaves rounding residue; call them equal outright.
  const double size = a.extents.maxCoeff();
  if ((a.center - b.center).norm() <= 1e-12 * size && (a.extents - b.extents).norm() <= 1e-12 * size &&
      geodesic_distance(a.rotation, b.rotation) <= 1e-12) {
    return 1.0;
  }
  const double inter = box_intersection_volume(a, b);
  const double uni = a.volume() + b.volume() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

Rotation sixd_to_rotation(const Vec6& v) {
  if (!v.allFinite()) throw InvalidArgument("sixd_to_rotation: non-finite input");
  const Vec3 a1 = v.head<3>();
  const Vec3 a2 = v.tail<3>();
  const double n1 = a1.norm();
  const double n2 = a2.norm();
  if (n1 < 1e-12 || n2 < 1e-12 || a1.cross(a2).norm() <= 1e-9 * n1 * n2) {
    throw InvalidArgument("sixd_to_rotation: columns are zero or parallel");
  }
  const Vec3 b1 = a1 / n1;
  const Vec3 b2 = (a2 - b1.dot(a2) * b1).normalized();
  Mat3 m;
  m.col(0) = b1;
  m.col(1) = b2;
  m.col(2) = b1.cross(b2);
  return Rotation(Eigen::Quaterniond(m));
}

Vec6 rotation_to_sixd(const Rotation& r) {
  const Mat3 m = r.matrix();
  Vec6 v;
  v << m.col(0), m.col(1);
  return v;
}

Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return s;
}

}  // namespace genpose
