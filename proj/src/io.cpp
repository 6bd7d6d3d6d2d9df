#include "genpose/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "genpose/errors.hpp"
#include "genpose/json_codec.hpp"

namespace genpose {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------- reading

// Collects invariant violations and warnings while a document is decoded.
struct Issues {
  std::vector<std::string> violations;
  std::vector<std::string> warnings;

  void raise(const std::string& what) const {
    if (violations.empty()) return;
    std::string msg = what + ": " + std::to_string(violations.size()) + " violation(s)";
    for (const auto& v : violations) msg += "\n  " + v;
    throw ValidationError(msg);
  }
};

[[noreturn]] void bad(const std::string& where, const std::string& what) { throw ParseError(where + ": " + what); }

const Json& field(const Json& j, const char* key, const std::string& where) {
  if (!j.is_object()) bad(where, "expected an object");
  const auto it = j.find(key);
  if (it == j.end()) bad(where, std::string("missing field '") + key + "'");
  return *it;
}

const Json* optional_field(const Json& j, const char* key) {
  const auto it = j.find(key);
  return it == j.end() || it->is_null() ? nullptr : &*it;
}

std::string sub(const std::string& where, const char* key) { return where + "." + key; }
std::string sub(const std::string& where, std::size_t i) { return where + "[" + std::to_string(i) + "]"; }

double number(const Json& j, const std::string& where) {
  if (!j.is_number()) bad(where, "expected a number");
  return j.get<double>();
}

double number(const Json& j, const char* key, const std::string& where) {
  return number(field(j, key, where), sub(where, key));
}

std::int64_t integer(const Json& j, const std::string& where) {
  if (!j.is_number_integer()) bad(where, "expected an integer");
  return j.get<std::int64_t>();
}

std::int64_t integer(const Json& j, const char* key, const std::string& where) {
  return integer(field(j, key, where), sub(where, key));
}

std::uint64_t unsigned_integer(const Json& j, const char* key, const std::string& where) {
  const Json& v = field(j, key, where);
  if (!v.is_number_unsigned()) bad(sub(where, key), "expected a non-negative integer");
  return v.get<std::uint64_t>();
}

std::string text(const Json& j, const char* key, const std::string& where) {
  const Json& v = field(j, key, where);
  if (!v.is_string()) bad(sub(where, key), "expected a string");
  return v.get<std::string>();
}

const Json& array(const Json& j, const std::string& where) {
  if (!j.is_array()) bad(where, "expected an array");
  return j;
}

const Json& array(const Json& j, const char* key, const std::string& where) {
  return array(field(j, key, where), sub(where, key));
}

Eigen::VectorXd vector_n(const Json& j, const std::string& where, Eigen::Index n = -1) {
  array(j, where);
  if (n >= 0 && static_cast<Eigen::Index>(j.size()) != n) {
    bad(where, "expected " + std::to_string(n) + " numbers, got " + std::to_string(j.size()));
  }
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = number(j[i], sub(where, i));
  return v;
}

Vec3 vec3(const Json& j, const std::string& where) { return vector_n(j, where, 3); }
Vec2 vec2(const Json& j, const std::string& where) { return vector_n(j, where, 2); }

Rotation quaternion(const Json& j, const std::string& where, Issues& issues) {
  const Eigen::Vector4d q = vector_n(j, where, 4);
  const double norm = q.norm();
  if (!std::isfinite(norm) || norm == 0.0) {
    issues.violations.push_back(where + ": quaternion is zero or non-finite");
    return Rotation::identity();
  }
  const double dev = std::abs(norm - 1.0);
  if (dev > 1e-6) {
    issues.violations.push_back(where + ": quaternion norm " + std::to_string(norm) + " is not unit within 1e-6");
  } else if (dev > 1e-9) {
    issues.warnings.push_back(where + ": quaternion renormalized (norm deviation " + std::to_string(dev) + ")");
  }
  return Rotation(q(0), q(1), q(2), q(3));
}

Pose pose(const Json& j, const std::string& where, Issues& issues) {
  Pose p;
  p.translation = vec3(field(j, "translation", where), sub(where, "translation"));
  p.rotation = quaternion(field(j, "quaternion_wxyz", where), sub(where, "quaternion_wxyz"), issues);
  return p;
}

ScaledPose scaled_pose(const Json& j, const std::string& where, Issues& issues) {
  ScaledPose sp;
  sp.pose = pose(j, where, issues);
  sp.scale = vec3(field(j, "scale", where), sub(where, "scale"));
  if (!(sp.scale.array() > 0.0).all()) issues.violations.push_back(where + ".scale: extents must be positive");
  return sp;
}

Json parse_document(const std::string& content, const std::string& format) {
  Json j;
  try {
    j = Json::parse(content);
  } catch (const nlohmann::json::parse_error& e) {
    const std::size_t upto = std::min<std::size_t>(e.byte, content.size());
    const auto line = 1 + std::count(content.begin(), content.begin() + static_cast<std::ptrdiff_t>(upto), '\n');
    throw ParseError(format + ": line " + std::to_string(line) + ": " + e.what());
  }
  const std::string where = format;
  const std::string got = text(j, "format", where);
  if (got != format) bad(where, "expected format '" + format + "', found '" + got + "'");
  const auto version = integer(j, "version", where);
  if (version > kFormatVersion) {
    bad(where, "document version " + std::to_string(version) + " is newer than the supported version " +
                   std::to_string(kFormatVersion));
  }
  if (version < 1) bad(where, "invalid version " + std::to_string(version));
  return j;
}

Json load_document(const fs::path& path, const std::string& format) {
  try {
    return parse_document(read_file(path), format);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------- writing

Json header(const std::string& format) {
  Json j;
  j["format"] = format;
  j["version"] = kFormatVersion;
  return j;
}

Json to_json(const Eigen::Ref<const Eigen::VectorXd>& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Json to_json(const Pose& p) {
  Json j;
  j["translation"] = to_json(p.translation);
  j["quaternion_wxyz"] = to_json(p.rotation.wxyz());
  return j;
}

Json to_json(const ScaledPose& sp) {
  Json j = to_json(sp.pose);
  j["scale"] = to_json(sp.scale);
  return j;
}

Json to_json(const NoiseSchedule& s) {
  return Json{{"sigma_min", s.sigma_min}, {"sigma_max", s.sigma_max}, {"eps", s.eps}};
}

NoiseSchedule schedule(const Json& j, const std::string& where) {
  NoiseSchedule s{number(j, "sigma_min", where), number(j, "sigma_max", where), number(j, "eps", where)};
  try {
    s.validate();
  } catch (const InvalidArgument& e) {
    throw ValidationError(where + ": " + e.what());
  }
  return s;
}

Json to_json(const CameraIntrinsics& K) {
  return Json{{"fx", K.fx}, {"fy", K.fy}, {"cx", K.cx}, {"cy", K.cy}, {"width", K.width}, {"height", K.height}};
}

CameraIntrinsics intrinsics(const Json& j, const std::string& where, Issues& issues) {
  CameraIntrinsics K;
  K.fx = number(j, "fx", where);
  K.fy = number(j, "fy", where);
  K.cx = number(j, "cx", where);
  K.cy = number(j, "cy", where);
  K.width = static_cast<int>(integer(j, "width", where));
  K.height = static_cast<int>(integer(j, "height", where));
  try {
    K.validate();
  } catch (const InvalidArgument& e) {
    issues.violations.push_back(where + ": " + e.what());
  }
  return K;
}

Json symmetry_to_json(const SymmetrySpec& s, const std::string& preset) {
  if (!preset.empty()) return Json{{"preset", preset}};
  if (const auto* c = std::get_if<ContinuousSymmetry>(&s.kind)) {
    return Json{{"kind", "continuous"}, {"axis", to_json(c->axis)}};
  }
  if (const auto* d = std::get_if<DiscreteSymmetry>(&s.kind)) {
    Json g = Json::array();
    for (const Rotation& r : d->group) g.push_back(to_json(r.wxyz()));
    return Json{{"kind", "discrete"}, {"group", g}};
  }
  return Json{{"kind", "none"}};
}

SymmetrySpec symmetry(const Json& j, const std::string& where, std::string* preset_out, Issues& issues) {
  if (const Json* p = optional_field(j, "preset")) {
    if (!p->is_string()) bad(sub(where, "preset"), "expected a string");
    if (preset_out) *preset_out = p->get<std::string>();
    try {
      return SymmetrySpec::preset(p->get<std::string>());
    } catch (const InvalidArgument& e) {
      issues.violations.push_back(where + ": " + e.what());
      return {};
    }
  }
  const std::string kind = text(j, "kind", where);
  SymmetrySpec s;
  if (kind == "none") return s;
  if (kind == "continuous") {
    s.kind = ContinuousSymmetry{vec3(field(j, "axis", where), sub(where, "axis"))};
  } else if (kind == "discrete") {
    DiscreteSymmetry d;
    const Json& g = array(j, "group", where);
    for (std::size_t i = 0; i < g.size(); ++i) d.group.push_back(quaternion(g[i], sub(sub(where, "group"), i), issues));
    s.kind = std::move(d);
  } else {
    bad(sub(where, "kind"), "unknown symmetry kind '" + kind + "'");
  }
  try {
    s.validate();
  } catch (const InvalidArgument& e) {
    issues.violations.push_back(where + ": " + e.what());
  }
  return s;
}

Json keypoints_to_json(const KeypointSet& kp) {
  Json pts = Json::array();
  for (const Vec3& p : kp.model_points) pts.push_back(to_json(p));
  Json ann = Json::array();
  for (const auto& a : kp.annotations) {
    ann.push_back(Json{{"frame", a.frame_index}, {"keypoint", a.keypoint}, {"pixel", to_json(a.pixel)}});
  }
  return Json{{"model_points", pts}, {"annotations", ann}};
}

KeypointSet keypoints(const Json& j, const std::string& where) {
  KeypointSet kp;
  const Json& pts = array(j, "model_points", where);
  for (std::size_t i = 0; i < pts.size(); ++i) kp.model_points.push_back(vec3(pts[i], sub(sub(where, "model_points"), i)));
  const Json& ann = array(j, "annotations", where);
  for (std::size_t i = 0; i < ann.size(); ++i) {
    const std::string w = sub(sub(where, "annotations"), i);
    kp.annotations.push_back({static_cast<int>(integer(ann[i], "frame", w)),
                              static_cast<int>(integer(ann[i], "keypoint", w)), vec2(field(ann[i], "pixel", w), w + ".pixel")});
  }
  return kp;
}

void check_keypoints(const KeypointSet& kp, const std::set<int>& frames, const std::string& where, Issues& issues) {
  for (std::size_t i = 0; i < kp.annotations.size(); ++i) {
    const auto& a = kp.annotations[i];
    if (!frames.empty() && !frames.count(a.frame_index)) {
      issues.violations.push_back(sub(sub(where, "annotations"), i) + ": frame " + std::to_string(a.frame_index) +
                                  " does not exist");
    }
    if (a.keypoint < 0 || static_cast<std::size_t>(a.keypoint) >= kp.model_points.size()) {
      issues.violations.push_back(sub(sub(where, "annotations"), i) + ": keypoint index out of range");
    }
  }
}

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

void report_warnings(const Issues& issues, LoadWarnings* warnings) {
  if (warnings) warnings->messages.insert(warnings->messages.end(), issues.warnings.begin(), issues.warnings.end());
}

}  // namespace

// ---------------------------------------------------------------- files

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidArgument("cannot open '" + tmp.string() + "' for writing");
    out << content;
    out.flush();
    if (!out) throw InvalidArgument("failed writing '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

// ---------------------------------------------------------------- scene

const SceneFrame& Scene::frame(int index) const {
  for (const auto& f : frames) {
    if (f.index == index) return f;
  }
  throw InvalidArgument("scene '" + id + "': no frame " + std::to_string(index));
}

SceneObject& Scene::object(const std::string& oid) {
  for (auto& o : objects) {
    if (o.id == oid) return o;
  }
  throw InvalidArgument("scene '" + id + "': no object '" + oid + "'");
}

const SceneObject& Scene::object(const std::string& oid) const { return const_cast<Scene*>(this)->object(oid); }

CameraTrack Scene::camera_track() const {
  if (frames.empty()) throw ValidationError("scene '" + id + "' has no frames");
  CameraTrack t;
  t.intrinsics = frames.front().intrinsics;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto& f = frames[i];
    if (f.index != static_cast<int>(i)) throw ValidationError("scene frames must be indexed 0..n-1 in order");
    const auto& a = f.intrinsics;
    const auto& b = t.intrinsics;
    if (a.fx != b.fx || a.fy != b.fy || a.cx != b.cx || a.cy != b.cy || a.width != b.width || a.height != b.height) {
      throw ValidationError("scene frames do not share intrinsics");
    }
    t.poses.push_back(f.camera_pose);
  }
  return t;
}

std::string scene_to_string(const Scene& scene) {
  Json j = header("genpose.scene");
  j["id"] = scene.id;
  Json frames = Json::array();
  for (const auto& f : scene.frames) {
    Json fj{{"index", f.index}, {"intrinsics", to_json(f.intrinsics)}, {"camera_pose", to_json(f.camera_pose)}};
    if (!f.image.empty()) fj["image"] = f.image;
    frames.push_back(fj);
  }
  j["frames"] = frames;
  Json objects = Json::array();
  for (const auto& o : scene.objects) {
    Json oj{{"id", o.id}, {"category", o.category}, {"symmetry", symmetry_to_json(o.symmetry, o.symmetry_preset)}};
    Json poses = Json::array();
    for (const auto& [frame, sp] : o.poses) {
      Json pj{{"frame", frame}};
      pj.update(to_json(sp));
      poses.push_back(pj);
    }
    oj["poses"] = poses;
    if (o.world_pose) oj["world_pose"] = to_json(*o.world_pose);
    if (!o.point_cloud.empty()) oj["point_cloud"] = o.point_cloud;
    if (o.condition) oj["condition"] = to_json(*o.condition);
    if (o.keypoints) oj["keypoints"] = keypoints_to_json(*o.keypoints);
    objects.push_back(oj);
  }
  j["objects"] = objects;
  j["keyframes"] = scene.keyframes;
  return dump(j);
}

void save_scene(const Scene& scene, const fs::path& path) { write_file_atomic(path, scene_to_string(scene)); }

Scene parse_scene(const std::string& content, LoadWarnings* warnings) {
  const Json j = parse_document(content, "genpose.scene");
  Issues issues;
  Scene s;
  s.id = text(j, "id", "scene");
  std::set<int> frame_ids;
  const Json& frames = array(j, "frames", "scene");
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const std::string w = sub(std::string("scene.frames"), i);
    SceneFrame f;
    f.index = static_cast<int>(integer(frames[i], "index", w));
    f.intrinsics = intrinsics(field(frames[i], "intrinsics", w), w + ".intrinsics", issues);
    f.camera_pose = pose(field(frames[i], "camera_pose", w), w + ".camera_pose", issues);
    if (const Json* img = optional_field(frames[i], "image")) f.image = img->get<std::string>();
    if (!frame_ids.insert(f.index).second) issues.violations.push_back(w + ": duplicate frame index");
    s.frames.push_back(f);
  }
  std::set<std::string> object_ids;
  const Json& objects = array(j, "objects", "scene");
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const std::string w = sub(std::string("scene.objects"), i);
    const Json& oj = objects[i];
    SceneObject o;
    o.id = text(oj, "id", w);
    o.category = text(oj, "category", w);
    o.symmetry = symmetry(field(oj, "symmetry", w), w + ".symmetry", &o.symmetry_preset, issues);
    const Json& poses = array(oj, "poses", w);
    for (std::size_t k = 0; k < poses.size(); ++k) {
      const std::string pw = sub(w + ".poses", k);
      const int frame = static_cast<int>(integer(poses[k], "frame", pw));
      if (!frame_ids.count(frame)) issues.violations.push_back(pw + ": frame " + std::to_string(frame) + " does not exist");
      if (!o.poses.emplace(frame, scaled_pose(poses[k], pw, issues)).second) {
        issues.violations.push_back(pw + ": duplicate pose for frame " + std::to_string(frame));
      }
    }
    if (const Json* wp = optional_field(oj, "world_pose")) o.world_pose = scaled_pose(*wp, w + ".world_pose", issues);
    if (const Json* pc = optional_field(oj, "point_cloud")) o.point_cloud = pc->get<std::string>();
    if (const Json* c = optional_field(oj, "condition")) o.condition = vector_n(*c, w + ".condition");
    if (const Json* kp = optional_field(oj, "keypoints")) {
      o.keypoints = keypoints(*kp, w + ".keypoints");
      check_keypoints(*o.keypoints, frame_ids, w + ".keypoints", issues);
    }
    if (!object_ids.insert(o.id).second) issues.violations.push_back(w + ": duplicate object id '" + o.id + "'");
    s.objects.push_back(std::move(o));
  }
  if (const Json* kf = optional_field(j, "keyframes")) {
    array(*kf, "scene.keyframes");
    for (std::size_t i = 0; i < kf->size(); ++i) {
      const int f = static_cast<int>(integer((*kf)[i], sub(std::string("scene.keyframes"), i)));
      if (!frame_ids.count(f)) issues.violations.push_back("scene.keyframes: frame " + std::to_string(f) + " does not exist");
      s.keyframes.push_back(f);
    }
  }
  issues.raise("scene '" + s.id + "'");
  report_warnings(issues, warnings);
  return s;
}

Scene load_scene(const fs::path& path, LoadWarnings* warnings) {
  try {
    return parse_scene(read_file(path), warnings);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------- candidates

void save_candidates(const PoseCandidateSet& set, const fs::path& path) {
  set.validate();
  Json j = header("genpose.candidates");
  j["K"] = set.size();
  j["seed"] = set.seed;
  j["schedule"] = to_json(set.schedule);
  j["condition_id"] = set.condition_id;
  Json c = Json::array();
  for (std::size_t i = 0; i < set.size(); ++i) {
    Json r = to_json(set.candidates[i]);
    r["source"] = set.source_of(i);
    if (set.energies) r["energy"] = (*set.energies)[i];
    c.push_back(r);
  }
  j["candidates"] = c;
  write_file_atomic(path, dump(j));
}

PoseCandidateSet load_candidates(const fs::path& path) {
  const Json j = load_document(path, "genpose.candidates");
  const std::string w = "candidates";
  Issues issues;
  PoseCandidateSet set;
  set.seed = unsigned_integer(j, "seed", w);
  set.schedule = schedule(field(j, "schedule", w), w + ".schedule");
  set.condition_id = text(j, "condition_id", w);
  const Json& c = array(j, "candidates", w);
  const auto K = integer(j, "K", w);
  if (K != static_cast<std::int64_t>(c.size())) issues.violations.push_back(w + ": K does not match the record count");
  std::size_t with_energy = 0;
  std::vector<double> energies;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const std::string rw = sub(w + ".candidates", i);
    set.candidates.push_back(pose(c[i], rw, issues));
    set.source_index.push_back(static_cast<int>(integer(c[i], "source", rw)));
    if (const Json* e = optional_field(c[i], "energy")) {
      energies.push_back(number(*e, rw + ".energy"));
      ++with_energy;
    }
  }
  if (with_energy == c.size() && !c.empty()) {
    set.energies = std::move(energies);
  } else if (with_energy != 0) {
    issues.violations.push_back(w + ": energies must be given for every candidate or none");
  }
  issues.raise(path.string());
  return set;
}

// ---------------------------------------------------------------- results

void save_result(const ResultRecord& r, const fs::path& path) {
  Json j = header("genpose.results");
  j["condition_id"] = r.condition_id;
  j["candidate_count"] = r.candidate_count;
  j["pose"] = to_json(r.aggregation.pose);
  if (r.scale) j["scale"] = to_json(*r.scale);
  j["cluster_label"] = r.aggregation.cluster_label;
  j["all_noise_fallback"] = r.aggregation.all_noise_fallback;
  j["members"] = r.aggregation.members;
  write_file_atomic(path, dump(j));
}

ResultRecord load_result(const fs::path& path) {
  const Json j = load_document(path, "genpose.results");
  const std::string w = "results";
  Issues issues;
  ResultRecord r;
  r.condition_id = text(j, "condition_id", w);
  r.candidate_count = static_cast<std::size_t>(integer(j, "candidate_count", w));
  r.aggregation.pose = pose(field(j, "pose", w), w + ".pose", issues);
  if (const Json* s = optional_field(j, "scale")) r.scale = vec3(*s, w + ".scale");
  r.aggregation.cluster_label = static_cast<int>(integer(j, "cluster_label", w));
  const Json& fb = field(j, "all_noise_fallback", w);
  if (!fb.is_boolean()) bad(w + ".all_noise_fallback", "expected a boolean");
  r.aggregation.all_noise_fallback = fb.get<bool>();
  const Json& m = array(j, "members", w);
  for (std::size_t i = 0; i < m.size(); ++i) r.aggregation.members.push_back(static_cast<int>(integer(m[i], sub(w + ".members", i))));
  issues.raise(path.string());
  return r;
}

// ---------------------------------------------------------------- metrics

namespace {

Json to_json(const MetricValues& v) {
  return Json{{"count", v.count},
              {"auc_iou25", v.auc_iou25},
              {"auc_iou50", v.auc_iou50},
              {"auc_iou75", v.auc_iou75},
              {"vus_5deg_2cm", v.vus_5_2},
              {"vus_5deg_5cm", v.vus_5_5},
              {"vus_10deg_2cm", v.vus_10_2},
              {"vus_10deg_5cm", v.vus_10_5}};
}

}  // namespace

std::string metric_report_to_string(const MetricReport& r) {
  Json j = header("genpose.metrics");
  j["instance_count"] = r.instance_count;
  j["overall"] = to_json(r.overall);
  Json cats = Json::object();
  for (const auto& [name, v] : r.per_category) cats[name] = to_json(v);
  j["per_category"] = cats;
  return dump(j);
}

void save_metric_report(const MetricReport& report, const fs::path& path) {
  write_file_atomic(path, metric_report_to_string(report));
}

std::vector<EvalInstance> load_eval_instances(const fs::path& path) {
  const Json j = load_document(path, "genpose.eval_instances");
  Issues issues;
  std::vector<EvalInstance> out;
  const Json& a = array(j, "instances", "eval_instances");
  for (std::size_t i = 0; i < a.size(); ++i) {
    const std::string w = sub(std::string("eval_instances.instances"), i);
    EvalInstance e;
    e.category = text(a[i], "category", w);
    e.symmetry = symmetry(field(a[i], "symmetry", w), w + ".symmetry", nullptr, issues);
    e.gt = scaled_pose(field(a[i], "gt", w), w + ".gt", issues);
    e.pred = scaled_pose(field(a[i], "pred", w), w + ".pred", issues);
    out.push_back(std::move(e));
  }
  if (out.empty()) issues.violations.push_back("eval_instances: the instance list is empty");
  issues.raise(path.string());
  return out;
}

void save_eval_instances(const std::vector<EvalInstance>& instances, const fs::path& path) {
  Json j = header("genpose.eval_instances");
  Json a = Json::array();
  for (const auto& e : instances) {
    a.push_back(Json{{"category", e.category},
                     {"symmetry", symmetry_to_json(e.symmetry, "")},
                     {"gt", to_json(e.gt)},
                     {"pred", to_json(e.pred)}});
  }
  j["instances"] = a;
  write_file_atomic(path, dump(j));
}

// ---------------------------------------------------------------- annotation inputs

std::vector<Observation2D3D> load_correspondences(const fs::path& path) {
  const Json j = load_document(path, "genpose.correspondences");
  std::vector<Observation2D3D> out;
  const Json& a = array(j, "observations", "correspondences");
  for (std::size_t i = 0; i < a.size(); ++i) {
    const std::string w = sub(std::string("correspondences.observations"), i);
    out.push_back({vec3(field(a[i], "world_point", w), w + ".world_point"), vec2(field(a[i], "pixel", w), w + ".pixel"),
                   static_cast<int>(integer(a[i], "frame", w))});
  }
  return out;
}

void save_correspondences(const std::vector<Observation2D3D>& obs, const fs::path& path) {
  Json j = header("genpose.correspondences");
  Json a = Json::array();
  for (const auto& o : obs) {
    a.push_back(Json{{"frame", o.frame_index}, {"world_point", to_json(o.world_point)}, {"pixel", to_json(o.pixel)}});
  }
  j["observations"] = a;
  write_file_atomic(path, dump(j));
}

KeypointFile load_keypoints(const fs::path& path) {
  const Json j = load_document(path, "genpose.keypoints");
  Issues issues;
  KeypointFile kf{text(j, "object_id", "keypoints"), keypoints(j, "keypoints")};
  check_keypoints(kf.keypoints, {}, "keypoints", issues);
  issues.raise(path.string());
  return kf;
}

void save_keypoints(const KeypointFile& kp, const fs::path& path) {
  Json j = header("genpose.keypoints");
  j["object_id"] = kp.object_id;
  j.update(keypoints_to_json(kp.keypoints));
  write_file_atomic(path, dump(j));
}

// ---------------------------------------------------------------- training data

std::vector<TrainSample> load_dataset(const fs::path& path) {
  const Json j = load_document(path, "genpose.dataset");
  Issues issues;
  std::vector<TrainSample> out;
  const Json& a = array(j, "samples", "dataset");
  for (std::size_t i = 0; i < a.size(); ++i) {
    const std::string w = sub(std::string("dataset.samples"), i);
    TrainSample s;
    s.pose = encode_pose(pose(field(a[i], "pose", w), w + ".pose", issues));
    s.cond.feature = vector_n(field(a[i], "condition", w), w + ".condition");
    if (const Json* id = optional_field(a[i], "object_id")) s.cond.object_id = id->get<std::string>();
    out.push_back(std::move(s));
  }
  if (out.empty()) issues.violations.push_back("dataset: no samples");
  issues.raise(path.string());
  return out;
}

void save_dataset(const std::vector<TrainSample>& data, const fs::path& path) {
  Json j = header("genpose.dataset");
  Json a = Json::array();
  for (const auto& s : data) {
    a.push_back(Json{{"pose", to_json(decode_pose(s.pose))}, {"condition", to_json(s.cond.feature)}, {"object_id", s.cond.object_id}});
  }
  j["samples"] = a;
  write_file_atomic(path, dump(j));
}

GaussianMixture load_mixture(const fs::path& path) {
  const Json j = load_document(path, "genpose.mixture");
  Issues issues;
  GaussianMixture m;
  const Json& a = array(j, "components", "mixture");
  for (std::size_t i = 0; i < a.size(); ++i) {
    const std::string w = sub(std::string("mixture.components"), i);
    m.weights.push_back(number(a[i], "weight", w));
    m.stds.push_back(number(a[i], "std", w));
    m.means.push_back(encode_pose(pose(field(a[i], "mean", w), w + ".mean", issues)));
  }
  try {
    m.validate();
  } catch (const InvalidArgument& e) {
    issues.violations.push_back(std::string("mixture: ") + e.what());
  }
  issues.raise(path.string());
  return m;
}

void save_mixture(const GaussianMixture& m, const fs::path& path) {
  m.validate();
  Json j = header("genpose.mixture");
  Json a = Json::array();
  for (std::size_t i = 0; i < m.weights.size(); ++i) {
    a.push_back(Json{{"weight", m.weights[i]}, {"std", m.stds[i]}, {"mean", to_json(decode_pose(m.means[i]))}});
  }
  j["components"] = a;
  write_file_atomic(path, dump(j));
}

FrameSequence load_frames(const fs::path& path) {
  const Json j = load_document(path, "genpose.frames");
  Issues issues;
  FrameSequence seq;
  seq.init = pose(field(j, "init", "frames"), "frames.init", issues);
  const Json& a = array(j, "frames", "frames");
  for (std::size_t i = 0; i < a.size(); ++i) {
    const std::string w = sub(std::string("frames.frames"), i);
    Condition c;
    c.feature = vector_n(field(a[i], "condition", w), w + ".condition");
    if (const Json* id = optional_field(a[i], "object_id")) c.object_id = id->get<std::string>();
    seq.conditions.push_back(std::move(c));
    if (const Json* gt = optional_field(a[i], "ground_truth")) seq.ground_truth.push_back(pose(*gt, w + ".ground_truth", issues));
  }
  if (!seq.ground_truth.empty() && seq.ground_truth.size() != seq.conditions.size()) {
    issues.violations.push_back("frames: ground truth must be given for every frame or none");
  }
  if (seq.conditions.empty()) issues.violations.push_back("frames: no frames");
  issues.raise(path.string());
  return seq;
}

void save_frames(const FrameSequence& seq, const fs::path& path) {
  Json j = header("genpose.frames");
  j["init"] = to_json(seq.init);
  Json a = Json::array();
  for (std::size_t i = 0; i < seq.conditions.size(); ++i) {
    Json f{{"condition", to_json(seq.conditions[i].feature)}, {"object_id", seq.conditions[i].object_id}};
    if (i < seq.ground_truth.size()) f["ground_truth"] = to_json(seq.ground_truth[i]);
    a.push_back(f);
  }
  j["frames"] = a;
  write_file_atomic(path, dump(j));
}

Condition load_condition(const fs::path& path) {
  const Json j = load_document(path, "genpose.condition");
  Condition c;
  c.feature = vector_n(field(j, "feature", "condition"), "condition.feature");
  c.object_id = text(j, "object_id", "condition");
  return c;
}

void save_condition(const Condition& c, const fs::path& path) {
  Json j = header("genpose.condition");
  j["object_id"] = c.object_id;
  j["feature"] = to_json(c.feature);
  write_file_atomic(path, dump(j));
}

PointCloud load_point_cloud(const fs::path& path) {
  const Json j = load_document(path, "genpose.pointcloud");
  PointCloud pc;
  const Json& a = array(j, "points", "pointcloud");
  for (std::size_t i = 0; i < a.size(); ++i) pc.push_back(vec3(a[i], sub(std::string("pointcloud.points"), i)));
  if (pc.empty()) throw ValidationError(path.string() + ": point cloud is empty");
  return pc;
}

void save_point_cloud(const PointCloud& cloud, const fs::path& path) {
  Json j = header("genpose.pointcloud");
  Json a = Json::array();
  for (const Vec3& p : cloud) a.push_back(to_json(p));
  j["points"] = a;
  write_file_atomic(path, dump(j));
}

void save_track(const std::vector<Pose>& poses, const fs::path& path) {
  Json j = header("genpose.track");
  Json a = Json::array();
  for (const Pose& p : poses) a.push_back(to_json(p));
  j["poses"] = a;
  write_file_atomic(path, dump(j));
}

std::vector<Pose> load_track(const fs::path& path) {
  const Json j = load_document(path, "genpose.track");
  Issues issues;
  std::vector<Pose> out;
  const Json& a = array(j, "poses", "track");
  for (std::size_t i = 0; i < a.size(); ++i) out.push_back(pose(a[i], sub(std::string("track.poses"), i), issues));
  issues.raise(path.string());
  return out;
}

// ---------------------------------------------------------------- checkpoints

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'G', 'P', 'P', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointData {
  CheckpointKind kind = CheckpointKind::score;
  Mlp net;
  NoiseSchedule schedule;
  int feature_dim = 0;
  std::uint64_t seed = 0;
};

class Writer {
 public:
  template <class T>
  void put(T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.append(p, sizeof(T));
  }
  void bytes(const char* p, std::size_t n) { buf_.append(p, n); }
  const std::string& str() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string data, std::string name) : data_(std::move(data)), name_(std::move(name)) {}
  template <class T>
  T get() {
    if (pos_ + sizeof(T) > data_.size()) throw ParseError(name_ + ": truncated checkpoint at byte " + std::to_string(pos_));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  bool done() const { return pos_ == data_.size(); }
  const std::string& name() const { return name_; }

 private:
  std::string data_;
  std::string name_;
  std::size_t pos_ = 0;
};

void write_checkpoint(const CheckpointData& c, const fs::path& path) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.kind));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.net.activation()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.feature_dim));
  w.put<std::uint64_t>(c.seed);
  w.put<double>(c.schedule.sigma_min);
  w.put<double>(c.schedule.sigma_max);
  w.put<double>(c.schedule.eps);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.net.layer_count()));
  for (int s : c.net.sizes()) w.put<std::uint32_t>(static_cast<std::uint32_t>(s));
  for (std::size_t l = 0; l < c.net.layer_count(); ++l) {
    const Eigen::MatrixXd& W = c.net.weights()[l];
    for (Eigen::Index r = 0; r < W.rows(); ++r) {
      for (Eigen::Index k = 0; k < W.cols(); ++k) w.put<double>(W(r, k));
    }
    const Eigen::VectorXd& b = c.net.biases()[l];
    for (Eigen::Index r = 0; r < b.size(); ++r) w.put<double>(b(r));
  }
  write_file_atomic(path, w.str());
}

CheckpointData read_checkpoint(const fs::path& path, CheckpointKind expected) {
  Reader r(read_file(path), path.string());
  char magic[8];
  for (char& ch : magic) ch = r.get<char>();
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw ParseError(r.name() + ": not a checkpoint file");
  const auto version = r.get<std::uint32_t>();
  if (version > kCheckpointVersion) {
    throw ParseError(r.name() + ": checkpoint version " + std::to_string(version) +
                     " is newer than the supported version " + std::to_string(kCheckpointVersion));
  }
  CheckpointData c;
  const auto kind = r.get<std::uint32_t>();
  if (kind != static_cast<std::uint32_t>(expected)) {
    throw ParseError(r.name() + ": checkpoint kind " + std::to_string(kind) + ", expected " +
                     std::to_string(static_cast<std::uint32_t>(expected)));
  }
  c.kind = expected;
  const auto act = r.get<std::uint32_t>();
  if (act > 1) throw ParseError(r.name() + ": unknown activation " + std::to_string(act));
  c.feature_dim = static_cast<int>(r.get<std::uint32_t>());
  c.seed = r.get<std::uint64_t>();
  c.schedule.sigma_min = r.get<double>();
  c.schedule.sigma_max = r.get<double>();
  c.schedule.eps = r.get<double>();
  const auto layers = r.get<std::uint32_t>();
  if (layers == 0 || layers > 1024) throw ParseError(r.name() + ": implausible layer count");
  std::vector<int> sizes;
  for (std::uint32_t i = 0; i <= layers; ++i) {
    const auto s = r.get<std::uint32_t>();
    if (s == 0 || s > (1u << 20)) throw ParseError(r.name() + ": implausible layer size");
    sizes.push_back(static_cast<int>(s));
  }
  std::vector<Eigen::MatrixXd> W;
  std::vector<Eigen::VectorXd> b;
  for (std::uint32_t l = 0; l < layers; ++l) {
    Eigen::MatrixXd m(sizes[l + 1], sizes[l]);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index k = 0; k < m.cols(); ++k) m(i, k) = r.get<double>();
    }
    Eigen::VectorXd v(sizes[l + 1]);
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = r.get<double>();
    W.push_back(std::move(m));
    b.push_back(std::move(v));
  }
  if (!r.done()) throw ParseError(r.name() + ": trailing bytes after checkpoint payload");
  c.net = Mlp(sizes, static_cast<Activation>(act), std::move(W), std::move(b));
  return c;
}

}  // namespace

void save_checkpoint(const ScoreNet& n, const fs::path& path) {
  write_checkpoint({CheckpointKind::score, n.net, n.schedule, n.feature_dim, n.seed}, path);
}

void save_checkpoint(const EnergyNet& n, const fs::path& path) {
  write_checkpoint({CheckpointKind::energy, n.net, n.schedule, n.feature_dim, n.seed}, path);
}

void save_checkpoint(const ScaleRegressor& n, const fs::path& path) {
  if (!n.trained) throw InvalidState("save_checkpoint: scale regressor is not trained");
  write_checkpoint({CheckpointKind::scale, n.net, NoiseSchedule{}, n.feature_dim, n.seed}, path);
}

ScoreNet load_score_checkpoint(const fs::path& path) {
  CheckpointData c = read_checkpoint(path, CheckpointKind::score);
  return {std::move(c.net), c.schedule, c.feature_dim, c.seed};
}

EnergyNet load_energy_checkpoint(const fs::path& path) {
  CheckpointData c = read_checkpoint(path, CheckpointKind::energy);
  return {std::move(c.net), c.schedule, c.feature_dim, c.seed};
}

ScaleRegressor load_scale_checkpoint(const fs::path& path) {
  CheckpointData c = read_checkpoint(path, CheckpointKind::scale);
  return {std::move(c.net), c.feature_dim, c.seed, true};
}

}  // namespace genpose

namespace genpose {

nlohmann::ordered_json pose_to_json(const Pose& p) { return to_json(p); }

nlohmann::ordered_json scaled_pose_to_json(const ScaledPose& p) { return to_json(p); }

ScaledPose scaled_pose_from_json(const nlohmann::ordered_json& j, const std::string& where) {
  Issues issues;
  const ScaledPose sp = scaled_pose(j, where, issues);
  issues.raise(where);
  return sp;
}

}  // namespace genpose
