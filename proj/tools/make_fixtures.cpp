// Regenerates the files under fixtures/. Usage: genpose_fixtures <fixtures dir>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>

#include "genpose/annotation.hpp"
#include "genpose/io.hpp"

using namespace genpose;
namespace fs = std::filesystem;

namespace {

constexpr double kPi = std::numbers::pi;

Rotation random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  return Rotation(n(rng), n(rng), n(rng), n(rng));
}

Pose look_at(const Vec3& c) {
  const Vec3 z = (-c).normalized();
  const Vec3 x = Vec3::UnitZ().cross(z).normalized();
  Mat3 r;
  r << x, z.cross(x), z;
  return {Rotation::from_matrix(r), c};
}

// A mug whose two handle-less halves look alike: modes half a turn apart about z.
void bimodal(const fs::path& dir, std::mt19937_64& rng) {
  fs::create_directories(dir);
  const Pose a{Rotation::identity(), Vec3(0, 0, 0.5)};
  const Pose b{Rotation::from_axis_angle(Vec3::UnitZ(), kPi), Vec3(0, 0, 0.5)};
  save_mixture({{0.5, 0.5}, {encode_pose(a), encode_pose(b)}, {0.05, 0.05}}, dir / "mixture.json");
  save_condition({Eigen::VectorXd(0), "bimodal_mug"}, dir / "condition.json");

  std::vector<TrainSample> data;
  std::normal_distribution<double> n;
  for (int i = 0; i < 400; ++i) {
    const Pose& m = i % 2 ? b : a;
    const Vec3 w(n(rng), n(rng), n(rng));
    data.push_back({encode_pose({Rotation::from_rotation_vector(0.05 * w) * m.rotation,
                                 m.translation + 0.01 * Vec3(n(rng), n(rng), n(rng))}),
                    {Eigen::VectorXd(0), "bimodal_mug"}});
  }
  save_dataset(data, dir / "dataset.json");

  PointCloud cloud;
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  const Vec3 extents(0.09, 0.09, 0.12);
  for (int i = 0; i < 1024; ++i) cloud.push_back(a.transform(Vec3(u(rng), u(rng), u(rng)).cwiseProduct(extents)));
  save_point_cloud(cloud, dir / "pointcloud.json");

  FrameSequence seq;
  seq.init = {Rotation::from_axis_angle(Vec3(1, 1, 0), 0.05), Vec3(0.01, 0, 0.51)};
  for (int i = 0; i < 10; ++i) {
    seq.conditions.push_back({Eigen::VectorXd(0), "bimodal_mug"});
    seq.ground_truth.push_back(a);
  }
  save_frames(seq, dir / "frames.json");
}

void evaluation(const fs::path& dir, std::mt19937_64& rng) {
  fs::create_directories(dir);
  std::vector<EvalInstance> perfect;
  const char* cats[] = {"bottle", "bowl", "camera", "can", "laptop", "mug"};
  std::uniform_real_distribution<double> u(0.05, 0.3);
  for (int i = 0; i < 12; ++i) {
    EvalInstance e;
    e.category = cats[i % 6];
    e.symmetry = i % 6 == 0 || i % 6 == 1 || i % 6 == 3 ? SymmetrySpec::continuous(Vec3::UnitZ()) : SymmetrySpec::none();
    e.gt = {{random_rotation(rng), Vec3(u(rng), u(rng), 1 + u(rng))}, Vec3(u(rng), u(rng), u(rng))};
    e.pred = e.gt;
    perfect.push_back(e);
  }
  save_eval_instances(perfect, dir / "perfect.json");

  std::vector<EvalInstance> noisy = perfect;
  std::normal_distribution<double> n;
  for (auto& e : noisy) {
    e.pred.pose.rotation = Rotation::from_rotation_vector(Vec3(n(rng), n(rng), n(rng)) * 0.05) * e.pred.pose.rotation;
    e.pred.pose.translation += Vec3(n(rng), n(rng), n(rng)) * 0.01;
  }
  save_eval_instances(noisy, dir / "noisy.json");
  write_file_atomic(dir / "empty.json", "{\n  \"format\": \"genpose.eval_instances\",\n  \"version\": 1,\n  \"instances\": []\n}\n");
}

void annotation(const fs::path& dir, std::mt19937_64& rng) {
  fs::create_directories(dir);
  const CameraIntrinsics K{600, 600, 320, 240, 640, 480};
  Scene truth;
  truth.id = "tabletop_01";
  for (int i = 0; i < 8; ++i) {
    const double a = 0.35 * i;
    truth.frames.push_back({i, K, look_at(Vec3(1.2 * std::cos(a), 1.2 * std::sin(a), 0.7)), ""});
  }
  const ScaledPose mug{{Rotation::from_axis_angle(Vec3::UnitZ(), 0.6), Vec3(0.03, -0.02, 0.06)}, Vec3(0.1, 0.09, 0.12)};
  SceneObject obj;
  obj.id = "mug_1";
  obj.category = "mug";
  obj.symmetry = SymmetrySpec::none();
  obj.world_pose = mug;
  truth.objects.push_back(obj);
  const CameraTrack track = truth.camera_track();

  std::vector<Observation2D3D> obs;
  std::uniform_real_distribution<double> u(-0.4, 0.4);
  for (int j = 0; j < 60; ++j) {
    const Vec3 X(u(rng), u(rng), 0.5 * u(rng));
    for (int i = 0; i < 8; ++i) {
      obs.push_back({X, project_point(K, track.poses[static_cast<std::size_t>(i)].inverse().transform(X)), i});
    }
  }
  save_correspondences(obs, dir / "correspondences.json");

  KeypointFile kp{"mug_1", {}};
  kp.keypoints.model_points = {Vec3(0.05, 0, 0.06),  Vec3(-0.05, 0, 0.06), Vec3(0, 0.045, 0.06),
                               Vec3(0, -0.045, -0.06), Vec3(0.05, 0, -0.06), Vec3(0.07, 0, 0.0),
                               Vec3(-0.05, 0, -0.06)};
  for (int f : {0, 3, 6}) {
    const auto px = project_points(K, object_to_camera(track, f, mug.pose), kp.keypoints.model_points);
    for (std::size_t k = 0; k < px.size(); ++k) kp.keypoints.annotations.push_back({f, static_cast<int>(k), px[k]});
  }
  save_keypoints(kp, dir / "keypoints.json");

  // Ground truth plus a scene whose cameras carry a few degrees / centimeters of drift.
  for (auto& f : truth.frames) truth.objects[0].poses[f.index] = {object_to_camera(track, f.index, mug.pose), mug.scale};
  save_scene(truth, dir / "scene_truth.json");
  Scene drifted = truth;
  drifted.objects[0].world_pose.reset();
  drifted.objects[0].poses.clear();
  drifted.objects[0].poses[0] = {Pose{Rotation::identity(), Vec3(0, 0, 1.2)}, mug.scale};
  std::normal_distribution<double> n;
  for (auto& f : drifted.frames) {
    f.camera_pose.rotation = Rotation::from_rotation_vector(Vec3(n(rng), n(rng), n(rng)) * 0.02) * f.camera_pose.rotation;
    f.camera_pose.translation += Vec3(n(rng), n(rng), n(rng)) * 0.01;
  }
  save_scene(drifted, dir / "scene.json");
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: %s <fixtures dir>\n", argv[0]);
    return 2;
  }
  const fs::path root = argv[1];
  std::mt19937_64 rng(20240917);
  bimodal(root / "bimodal", rng);
  evaluation(root / "eval", rng);
  annotation(root / "annotation", rng);
  return 0;
}
