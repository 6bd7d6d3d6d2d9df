#pragma once

#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "genpose/geometry.hpp"

namespace genpose {

struct NoSymmetry {};
struct ContinuousSymmetry {
  Vec3 axis = Vec3::UnitZ();  // object frame
};
struct DiscreteSymmetry {
  std::vector<Rotation> group;
};

struct SymmetrySpec {
  std::variant<NoSymmetry, ContinuousSymmetry, DiscreteSymmetry> kind;

  // Throws InvalidArgument for a non-unit axis or a set that is not a group.
  void validate() const;

  static SymmetrySpec none() { return {}; }
  static SymmetrySpec continuous(const Vec3& axis);
  static SymmetrySpec discrete(std::vector<Rotation> group);
  // "none", "continuous" (about z), "bimodal" (C2 about z), "4-peak" (D2),
  // "8-peak" (D4 about z) and "24-peak" (rotations of the cube).
  static SymmetrySpec preset(const std::string& name);
};

// Degrees.
double sym_rotation_error(const Rotation& gt, const Rotation& pred, const SymmetrySpec& sym);

struct PoseError {
  double rot_err = 0.0;    // degrees
  double trans_err = 0.0;  // centimeters
  double iou = 0.0;
};

struct EvalInstance {
  ScaledPose gt;
  ScaledPose pred;
  SymmetrySpec symmetry;
  std::string category;
};

PoseError pose_error(const EvalInstance& inst);

// Percent. Exact integrals of the step-function accuracy curves.
double auc_iou(std::span<const PoseError> errors, double n_percent);
double vus(std::span<const PoseError> errors, double n_degrees, double m_cm);
double auc_iou(std::span<const EvalInstance> instances, double n_percent);
double vus(std::span<const EvalInstance> instances, double n_degrees, double m_cm);

struct MetricValues {
  double auc_iou25 = 0.0, auc_iou50 = 0.0, auc_iou75 = 0.0;
  double vus_5_2 = 0.0, vus_5_5 = 0.0, vus_10_2 = 0.0, vus_10_5 = 0.0;
  std::size_t count = 0;
};

MetricValues metric_values(std::span<const PoseError> errors);

struct MetricReport {
  MetricValues overall;  // unweighted mean over categories
  std::map<std::string, MetricValues> per_category;
  std::size_t instance_count = 0;
};

MetricReport evaluate(std::span<const EvalInstance> instances);

struct TrackingSummary {
  double fps = 0.0;
  double vus_5_5 = 0.0;
  double miou = 0.0;  // percent
  double rerr = 0.0;  // degrees
  double terr = 0.0;  // centimeters
};

TrackingSummary tracking_summary(std::span<const PoseError> per_frame, std::span<const double> wall_times);

}  // namespace genpose
