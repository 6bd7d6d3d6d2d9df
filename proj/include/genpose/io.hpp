#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "genpose/aggregation.hpp"
#include "genpose/annotation.hpp"
#include "genpose/candidates.hpp"
#include "genpose/diffusion.hpp"
#include "genpose/energy.hpp"
#include "genpose/metrics.hpp"

namespace genpose {

// Every text document carries {"format": "genpose.<name>", "version": N}.
inline constexpr int kFormatVersion = 1;

struct SceneFrame {
  int index = 0;
  CameraIntrinsics intrinsics;
  Pose camera_pose;  // camera-to-world
  std::string image;  // optional file reference
};

struct SceneObject {
  std::string id;
  std::string category;
  SymmetrySpec symmetry;
  std::string symmetry_preset;             // kept so presets round-trip by name
  std::map<int, ScaledPose> poses;          // frame index -> object-to-camera pose
  std::optional<ScaledPose> world_pose;     // object-to-world, when known
  std::string point_cloud;                  // optional file reference
  std::optional<Eigen::VectorXd> condition;
  std::optional<KeypointSet> keypoints;
};

struct Scene {
  std::string id;
  std::vector<SceneFrame> frames;
  std::vector<SceneObject> objects;
  std::vector<int> keyframes;

  const SceneFrame& frame(int index) const;
  SceneObject& object(const std::string& id);
  const SceneObject& object(const std::string& id) const;
  // Shared-intrinsics track; throws ValidationError when frames disagree on intrinsics.
  CameraTrack camera_track() const;
};

struct LoadWarnings {
  std::vector<std::string> messages;
};

// Parse errors carry line and field context; invariant violations are collected
// into a single ValidationError.
Scene load_scene(const std::filesystem::path& path, LoadWarnings* warnings = nullptr);
Scene parse_scene(const std::string& text, LoadWarnings* warnings = nullptr);
void save_scene(const Scene& scene, const std::filesystem::path& path);
std::string scene_to_string(const Scene& scene);

// Writes to a sibling temporary file, then renames over the target.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

PoseCandidateSet load_candidates(const std::filesystem::path& path);
void save_candidates(const PoseCandidateSet& set, const std::filesystem::path& path);

struct ResultRecord {
  AggregationResult aggregation;
  std::string condition_id;
  std::optional<Vec3> scale;
  std::size_t candidate_count = 0;
};
void save_result(const ResultRecord& result, const std::filesystem::path& path);
ResultRecord load_result(const std::filesystem::path& path);

std::string metric_report_to_string(const MetricReport& report);
void save_metric_report(const MetricReport& report, const std::filesystem::path& path);

std::vector<EvalInstance> load_eval_instances(const std::filesystem::path& path);
void save_eval_instances(const std::vector<EvalInstance>& instances, const std::filesystem::path& path);

std::vector<Observation2D3D> load_correspondences(const std::filesystem::path& path);
void save_correspondences(const std::vector<Observation2D3D>& obs, const std::filesystem::path& path);

struct KeypointFile {
  std::string object_id;
  KeypointSet keypoints;
};
KeypointFile load_keypoints(const std::filesystem::path& path);
void save_keypoints(const KeypointFile& kp, const std::filesystem::path& path);

std::vector<TrainSample> load_dataset(const std::filesystem::path& path);
void save_dataset(const std::vector<TrainSample>& data, const std::filesystem::path& path);

GaussianMixture load_mixture(const std::filesystem::path& path);
void save_mixture(const GaussianMixture& mixture, const std::filesystem::path& path);

// Per-frame conditions plus the initial pose for tracking.
struct FrameSequence {
  std::vector<Condition> conditions;
  Pose init;
  std::vector<Pose> ground_truth;  // optional, one per frame
};
FrameSequence load_frames(const std::filesystem::path& path);
void save_frames(const FrameSequence& seq, const std::filesystem::path& path);

Condition load_condition(const std::filesystem::path& path);
void save_condition(const Condition& cond, const std::filesystem::path& path);

PointCloud load_point_cloud(const std::filesystem::path& path);
void save_point_cloud(const PointCloud& cloud, const std::filesystem::path& path);

void save_track(const std::vector<Pose>& poses, const std::filesystem::path& path);
std::vector<Pose> load_track(const std::filesystem::path& path);

// Binary checkpoint container (little-endian):
//   "GPPCKPT\0", u32 version, u32 kind, u32 activation, u32 feature_dim, u64 seed,
//   f64 sigma_min, f64 sigma_max, f64 eps, u32 layer count n, (n + 1) x u32 sizes,
//   then per layer the weights row-major and the biases as f64.
enum class CheckpointKind : std::uint32_t { score = 0, energy = 1, scale = 2 };

void save_checkpoint(const ScoreNet& net, const std::filesystem::path& path);
void save_checkpoint(const EnergyNet& net, const std::filesystem::path& path);
void save_checkpoint(const ScaleRegressor& net, const std::filesystem::path& path);
ScoreNet load_score_checkpoint(const std::filesystem::path& path);
EnergyNet load_energy_checkpoint(const std::filesystem::path& path);
ScaleRegressor load_scale_checkpoint(const std::filesystem::path& path);

}  // namespace genpose
