#include "doctest.h"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <random>

#include "genpose/errors.hpp"
#include "genpose/io.hpp"
#include "oracles.hpp"

using namespace genpose;
namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

fs::path temp_dir() {
  const fs::path d = fs::temp_directory_path() / ("genpose_io_" + std::to_string(::getpid()));
  fs::create_directories(d);
  return d;
}

Scene random_scene(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1, 1);
  Scene s;
  s.id = "kitchen_03";
  for (int i = 0; i < 4; ++i) {
    s.frames.push_back({i, {600.5, 601.25, 320.1, 239.9, 640, 480},
                        {oracle::random_rotation(rng), Vec3(u(rng), u(rng), u(rng))}, "rgb/" + std::to_string(i) + ".png"});
  }
  SceneObject mug;
  mug.id = "mug_1";
  mug.category = "mug";
  mug.symmetry = SymmetrySpec::preset("bimodal");
  mug.symmetry_preset = "bimodal";
  mug.poses[0] = {{oracle::random_rotation(rng), Vec3(u(rng), u(rng), 1 + u(rng))}, Vec3(0.1, 0.08, 0.12)};
  mug.poses[2] = {{oracle::random_rotation(rng), Vec3(u(rng), u(rng), 1 + u(rng))}, Vec3(0.1, 0.08, 0.12)};
  mug.world_pose = ScaledPose{{oracle::random_rotation(rng), Vec3(u(rng), 0, 0)}, Vec3(0.1, 0.08, 0.12)};
  mug.condition = Eigen::VectorXd::Random(5);
  KeypointSet kp;
  kp.model_points = {Vec3(0.01, 0.02, 0.03), Vec3(-0.05, 0, 0.04)};
  kp.annotations = {{0, 0, Vec2(100.5, 200.25)}, {2, 1, Vec2(1.0 / 3.0, 7)}};
  mug.keypoints = kp;
  SceneObject can;
  can.id = "can_2";
  can.category = "can";
  can.symmetry = SymmetrySpec::continuous(Vec3::UnitZ());
  can.poses[1] = {{oracle::random_rotation(rng), Vec3(0, 0, 0.9)}, Vec3(0.06, 0.06, 0.11)};
  s.objects = {mug, can};
  s.keyframes = {0, 3};
  return s;
}

Json as_json(const Scene& s) { return Json::parse(scene_to_string(s)); }

template <class F>
std::string error_of(F&& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("scene round trip") {
  std::mt19937_64 rng(1);
  const Scene s = random_scene(rng);
  const fs::path p = temp_dir() / "scene.json";
  save_scene(s, p);
  LoadWarnings w;
  const Scene back = load_scene(p, &w);
  CHECK(w.messages.empty());
  CHECK(scene_to_string(back) == scene_to_string(s));
  CHECK(back.frames[2].camera_pose.translation == s.frames[2].camera_pose.translation);
  CHECK(back.frames[1].camera_pose.rotation.wxyz() == s.frames[1].camera_pose.rotation.wxyz());
  CHECK(back.objects[0].keypoints->annotations[1].pixel.x() == 1.0 / 3.0);
  CHECK(*back.objects[0].condition == *s.objects[0].condition);
  CHECK(std::get<DiscreteSymmetry>(back.objects[0].symmetry.kind).group.size() == 2);
  CHECK(std::holds_alternative<ContinuousSymmetry>(back.objects[1].symmetry.kind));
  CHECK(back.keyframes == s.keyframes);
}

TEST_CASE("slightly denormalized quaternions are renormalized with a warning") {
  std::mt19937_64 rng(2);
  Json j = as_json(random_scene(rng));
  auto& q = j["frames"][1]["camera_pose"]["quaternion_wxyz"];
  q = Json::array({1.00000001, 0.0, 0.0, 0.0});
  LoadWarnings w;
  const Scene s = parse_scene(j.dump(2), &w);
  REQUIRE(w.messages.size() == 1);
  CHECK(w.messages[0].find("frames[1]") != std::string::npos);
  CHECK(s.frames[1].camera_pose.rotation.w() == 1.0);

  q = Json::array({1.001, 0.0, 0.0, 0.0});
  CHECK_THROWS_AS(parse_scene(j.dump(2)), ValidationError);
}

TEST_CASE("violations are collected into one validation error") {
  std::mt19937_64 rng(3);
  Json j = as_json(random_scene(rng));
  j["objects"][0]["poses"][1]["frame"] = 9;
  j["keyframes"] = Json::array({0, 12});
  j["frames"][0]["intrinsics"]["fx"] = -1.0;
  const std::string msg = error_of([&] { parse_scene(j.dump(2)); });
  CHECK_THROWS_AS(parse_scene(j.dump(2)), ValidationError);
  CHECK(msg.find("frame 9") != std::string::npos);
  CHECK(msg.find("12") != std::string::npos);
  CHECK(msg.find("frames[0].intrinsics") != std::string::npos);
}

TEST_CASE("newer versions and foreign documents are rejected") {
  std::mt19937_64 rng(4);
  Json j = as_json(random_scene(rng));
  j["version"] = kFormatVersion + 1;
  CHECK_THROWS_AS(parse_scene(j.dump()), ParseError);
  CHECK(error_of([&] { parse_scene(j.dump()); }).find("newer than the supported version") != std::string::npos);
  j["version"] = kFormatVersion;
  j["format"] = "genpose.candidates";
  CHECK_THROWS_AS(parse_scene(j.dump()), ParseError);
}

TEST_CASE("malformed json reports the line") {
  std::mt19937_64 rng(5);
  std::string text = as_json(random_scene(rng)).dump(2);
  const auto pos = text.find("\"frames\"");
  text.insert(text.find('[', pos) + 1, "\n\n ,,");
  const std::string msg = error_of([&] { parse_scene(text); });
  const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n') + 2;
  CHECK(msg.find("line " + std::to_string(line)) != std::string::npos);

  Json j = as_json(random_scene(rng));
  j["frames"][2]["intrinsics"]["cy"] = "oops";
  const std::string typed = error_of([&] { parse_scene(j.dump(2)); });
  CHECK(typed.find("frames[2].intrinsics.cy") != std::string::npos);
}

TEST_CASE("candidate and result files round trip") {
  std::mt19937_64 rng(6);
  PoseCandidateSet set;
  for (int i = 0; i < 5; ++i) set.candidates.push_back({oracle::random_rotation(rng), oracle::random_unit(rng)});
  set.energies = std::vector<double>{0.1, -2, 3.5, 1e-300, 7};
  set.source_index = {4, 0, 3, 1, 2};
  set.condition_id = "obj_7";
  set.seed = 0xFFFFFFFFFFFFull;
  set.schedule.sigma_max = 40;
  const fs::path p = temp_dir() / "cands.json";
  save_candidates(set, p);
  const PoseCandidateSet back = load_candidates(p);
  CHECK(back.size() == 5);
  CHECK(*back.energies == *set.energies);
  CHECK(back.source_index == set.source_index);
  CHECK(back.seed == set.seed);
  CHECK(back.schedule == set.schedule);
  CHECK(back.condition_id == "obj_7");
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(back.candidates[i].translation == set.candidates[i].translation);
    CHECK(back.candidates[i].rotation.wxyz() == set.candidates[i].rotation.wxyz());
  }

  ResultRecord r;
  r.aggregation.pose = set.candidates[0];
  r.aggregation.members = {4, 3};
  r.aggregation.cluster_label = 1;
  r.scale = Vec3(0.1, 0.2, 0.3);
  r.condition_id = "obj_7";
  r.candidate_count = 50;
  save_result(r, temp_dir() / "res.json");
  const ResultRecord rb = load_result(temp_dir() / "res.json");
  CHECK(rb.aggregation.members == r.aggregation.members);
  CHECK(*rb.scale == *r.scale);
  CHECK(rb.candidate_count == 50);
}

TEST_CASE("other documents round trip") {
  std::mt19937_64 rng(7);
  const fs::path d = temp_dir();
  std::vector<EvalInstance> inst(2);
  inst[0].gt = {{oracle::random_rotation(rng), Vec3(1, 2, 3)}, Vec3(0.1, 0.1, 0.2)};
  inst[0].pred = inst[0].gt;
  inst[0].symmetry = SymmetrySpec::preset("8-peak");
  inst[0].category = "bowl";
  inst[1] = inst[0];
  inst[1].symmetry = SymmetrySpec::none();
  save_eval_instances(inst, d / "inst.json");
  const auto ib = load_eval_instances(d / "inst.json");
  CHECK(ib.size() == 2);
  CHECK(std::get<DiscreteSymmetry>(ib[0].symmetry.kind).group.size() == 8);
  CHECK(ib[1].gt.scale == inst[1].gt.scale);

  std::vector<Observation2D3D> obs{{Vec3(1, 2, 3), Vec2(4, 5), 0}, {Vec3(0.1, 0.2, 0.3), Vec2(6, 7), 2}};
  save_correspondences(obs, d / "corr.json");
  const auto ob = load_correspondences(d / "corr.json");
  CHECK(ob[1].frame_index == 2);
  CHECK(ob[1].world_point == obs[1].world_point);

  auto valid = [&] { return encode_pose({oracle::random_rotation(rng), oracle::random_unit(rng)}); };
  GaussianMixture mix{{0.3, 0.7}, {valid(), valid()}, {0.1, 0.05}};
  save_mixture(mix, d / "mix.json");
  const GaussianMixture mb = load_mixture(d / "mix.json");
  CHECK(mb.weights == mix.weights);
  CHECK((mb.means[1] - mix.means[1]).norm() < 1e-12);

  std::vector<TrainSample> data(3);
  for (auto& s : data) {
    s.pose = valid();
    s.cond.feature = Eigen::VectorXd::Random(2);
    s.cond.object_id = "x";
  }
  save_dataset(data, d / "data.json");
  const auto db = load_dataset(d / "data.json");
  CHECK((db[2].pose - data[2].pose).norm() < 1e-12);
  CHECK(db[2].cond.feature == data[2].cond.feature);

  FrameSequence seq;
  seq.init = {oracle::random_rotation(rng), Vec3(0, 0, 1)};
  seq.conditions = {data[0].cond, data[1].cond};
  seq.ground_truth = {seq.init, seq.init};
  save_frames(seq, d / "frames.json");
  const FrameSequence sb = load_frames(d / "frames.json");
  CHECK(sb.conditions.size() == 2);
  CHECK(sb.ground_truth.size() == 2);
  CHECK(sb.init.translation == seq.init.translation);

  std::vector<Pose> track{seq.init, {oracle::random_rotation(rng), Vec3(1, 1, 1)}};
  save_track(track, d / "track.json");
  CHECK(load_track(d / "track.json")[1].translation == Vec3(1, 1, 1));
}

TEST_CASE("checkpoints round trip bit for bit") {
  Rng rng = make_rng(8);
  NoiseSchedule sch;
  sch.sigma_max = 30;
  const ScoreNet score{Mlp({9 + 2 + kTimeEmbedding, 8, 9}, Activation::tanh, rng), sch, 2, 77};
  const EnergyNet energy{Mlp({9 + kTimeEmbedding, 8, 8, 1}, Activation::silu, rng), sch, 0, 5};
  const fs::path d = temp_dir();
  save_checkpoint(score, d / "s.ckpt");
  save_checkpoint(energy, d / "e.ckpt");
  CHECK(load_score_checkpoint(d / "s.ckpt") == score);
  CHECK(load_energy_checkpoint(d / "e.ckpt") == energy);
  CHECK_THROWS_AS(load_energy_checkpoint(d / "s.ckpt"), ParseError);

  std::string bytes = read_file(d / "s.ckpt");
  CHECK(bytes.substr(0, 8) == std::string("GPPCKPT\0", 8));
  write_file_atomic(d / "t.ckpt", bytes + "x");
  CHECK(error_of([&] { load_score_checkpoint(d / "t.ckpt"); }).find("trailing") != std::string::npos);
  write_file_atomic(d / "t.ckpt", bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(load_score_checkpoint(d / "t.ckpt"), ParseError);
  bytes[8] = 2;
  write_file_atomic(d / "t.ckpt", bytes);
  CHECK_THROWS_AS(load_score_checkpoint(d / "t.ckpt"), ParseError);
  fs::remove_all(d);
}
