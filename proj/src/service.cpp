#include "genpose/service.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include <httplib.h>

#include "genpose/annotation.hpp"
#include "genpose/json_codec.hpp"

namespace genpose {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

Vec3 unit_axis(char axis) {
  switch (axis) {
    case 'x': return Vec3::UnitX();
    case 'y': return Vec3::UnitY();
    case 'z': return Vec3::UnitZ();
    default: throw ValidationError(std::string("nudge axis must be x, y or z, got '") + axis + "'");
  }
}

Json nudge_to_json(const Nudge& n) {
  Json j{{"axis", std::string(1, n.axis)}};
  if (n.delta_deg) j["delta_deg"] = *n.delta_deg;
  if (n.delta_cm) j["delta_cm"] = *n.delta_cm;
  return j;
}

Json audit_to_json(const AuditEntry& e) {
  Json j{{"revision", e.revision}};
  if (e.set) j["set"] = scaled_pose_to_json(*e.set);
  if (e.nudge) j["nudge"] = nudge_to_json(*e.nudge);
  j["result"] = scaled_pose_to_json(e.result);
  return j;
}

}  // namespace

ScaledPose apply_nudge(const ScaledPose& pose, const Nudge& n) {
  const Vec3 a = unit_axis(n.axis);
  if (n.delta_deg.has_value() == n.delta_cm.has_value()) {
    throw ValidationError("nudge needs exactly one of delta_deg and delta_cm");
  }
  ScaledPose out = pose;
  if (n.delta_deg) {
    if (!std::isfinite(*n.delta_deg)) throw ValidationError("nudge: delta_deg must be finite");
    out.pose.rotation = pose.pose.rotation * Rotation::from_axis_angle(a, *n.delta_deg * std::numbers::pi / 180.0);
  } else {
    if (!std::isfinite(*n.delta_cm)) throw ValidationError("nudge: delta_cm must be finite");
    out.pose.translation += a * (*n.delta_cm / 100.0);
  }
  return out;
}

ScaledPose replay(const ScaledPose& initial, const std::vector<AuditEntry>& log) {
  ScaledPose p = initial;
  for (const auto& e : log) p = e.set ? *e.set : apply_nudge(p, *e.nudge);
  return p;
}

Overlay compute_overlay(const Scene& scene, const SceneObject& object, const ScaledPose& world_pose, int frame) {
  const SceneFrame& f = scene.frame(frame);
  const Pose o2c = f.camera_pose.inverse() * world_pose.pose;
  Overlay ov;
  ov.frame = frame;

  const auto corners = OrientedBox::from_scaled_pose({o2c, world_pose.scale}).corners();
  for (int i = 0; i < 8; ++i) {
    for (int bit = 0; bit < 3; ++bit) {
      const int j = i | (1 << bit);
      if (j == i) continue;
      const Vec3& a = corners[static_cast<std::size_t>(i)];
      const Vec3& b = corners[static_cast<std::size_t>(j)];
      if (a.z() <= 0.0 || b.z() <= 0.0) continue;
      ov.box_edges.push_back({project_point(f.intrinsics, a), project_point(f.intrinsics, b)});
    }
  }
  if (object.keypoints) {
    for (const Vec3& X : object.keypoints->model_points) {
      const Vec3 p = o2c.transform(X);
      ov.keypoints.push_back(p.z() > 0.0 ? std::optional<Vec2>(project_point(f.intrinsics, p)) : std::nullopt);
    }
    for (const auto& a : object.keypoints->annotations) {
      if (a.frame_index == frame) ov.annotations.push_back(a);
    }
  }
  return ov;
}

// ---------------------------------------------------------------- store

std::string AnnotationStore::add_scene(const fs::path& path, int default_keyframes) {
  Session s;
  s.scene = load_scene(path);
  s.path = path;
  const CameraTrack track = [&] {
    CameraTrack t;
    t.intrinsics = s.scene.frames.at(0).intrinsics;
    for (const auto& f : s.scene.frames) t.poses.push_back(f.camera_pose);
    return t;
  }();
  s.keyframes = s.scene.keyframes.empty()
                    ? fps_keyframes(track, std::min<int>(default_keyframes, static_cast<int>(track.poses.size())))
                    : s.scene.keyframes;
  for (const auto& o : s.scene.objects) {
    ScaledPose w;
    if (o.world_pose) {
      w = *o.world_pose;
    } else if (!o.poses.empty()) {
      const auto& [frame, sp] = *o.poses.begin();
      w = {s.scene.frame(frame).camera_pose * sp.pose, sp.scale};
    } else {
      throw ValidationError("scene '" + s.scene.id + "': object '" + o.id + "' has no pose to refine");
    }
    s.objects[o.id] = {w, {w, 0}, {}};
  }
  const std::string id = s.scene.id;
  std::lock_guard lock(mutex_);
  if (sessions_.count(id)) throw ValidationError("duplicate sequence id '" + id + "'");
  sessions_.emplace(id, std::move(s));
  return id;
}

const AnnotationStore::Session& AnnotationStore::session(const std::string& seq) const {
  const auto it = sessions_.find(seq);
  if (it == sessions_.end()) throw NotFound("unknown sequence '" + seq + "'");
  return it->second;
}

AnnotationStore::Session& AnnotationStore::session(const std::string& seq) {
  return const_cast<Session&>(std::as_const(*this).session(seq));
}

const AnnotationStore::ObjectState& AnnotationStore::object(const Session& s, const std::string& oid) const {
  const auto it = s.objects.find(oid);
  if (it == s.objects.end()) throw NotFound("unknown object '" + oid + "' in sequence '" + s.scene.id + "'");
  return it->second;
}

std::vector<std::string> AnnotationStore::sequence_ids() const {
  std::lock_guard lock(mutex_);
  std::vector<std::string> out;
  for (const auto& [id, s] : sessions_) out.push_back(id);
  return out;
}

std::vector<int> AnnotationStore::keyframes(const std::string& seq) const {
  std::lock_guard lock(mutex_);
  return session(seq).keyframes;
}

std::string AnnotationStore::image_of(const std::string& seq, int frame) const {
  std::lock_guard lock(mutex_);
  return session(seq).scene.frame(frame).image;
}

fs::path AnnotationStore::scene_dir(const std::string& seq) const {
  std::lock_guard lock(mutex_);
  return session(seq).path.parent_path();
}

PoseState AnnotationStore::pose(const std::string& seq, const std::string& oid) const {
  std::lock_guard lock(mutex_);
  return object(session(seq), oid).current;
}

ScaledPose AnnotationStore::initial_pose(const std::string& seq, const std::string& oid) const {
  std::lock_guard lock(mutex_);
  return object(session(seq), oid).initial;
}

std::vector<AuditEntry> AnnotationStore::audit_log(const std::string& seq, const std::string& oid) const {
  std::lock_guard lock(mutex_);
  return object(session(seq), oid).log;
}

PoseState AnnotationStore::commit(Session& s, const std::string& oid, AuditEntry entry) {
  auto& st = s.objects.at(oid);
  entry.revision = st.current.revision + 1;

  // Write the scene first so a failed save leaves the session unchanged.
  Scene next = s.scene;
  SceneObject& obj = next.object(oid);
  obj.world_pose = entry.result;
  // The refined world pose fixes the object pose in every frame.
  obj.poses.clear();
  for (const auto& f : next.frames) obj.poses[f.index] = {f.camera_pose.inverse() * entry.result.pose, entry.result.scale};
  save_scene(next, s.path);
  {
    std::ofstream log(s.path.string() + ".audit.jsonl", std::ios::app);
    Json line = audit_to_json(entry);
    line["object"] = oid;
    log << line.dump() << "\n";
  }

  s.scene = std::move(next);
  st.current = {entry.result, entry.revision};
  st.log.push_back(std::move(entry));
  return st.current;
}

PoseState AnnotationStore::set_pose(const std::string& seq, const std::string& oid, const ScaledPose& pose,
                                    long expected_revision) {
  pose.validate();
  std::lock_guard lock(mutex_);
  Session& s = session(seq);
  const PoseState cur = object(s, oid).current;
  if (cur.revision != expected_revision) {
    throw Conflict("stale revision " + std::to_string(expected_revision) + ", current is " +
                       std::to_string(cur.revision),
                   cur);
  }
  AuditEntry e;
  e.set = pose;
  e.result = pose;
  return commit(s, oid, std::move(e));
}

PoseState AnnotationStore::nudge(const std::string& seq, const std::string& oid, const Nudge& n,
                                 std::optional<long> expected_revision) {
  std::lock_guard lock(mutex_);
  Session& s = session(seq);
  const PoseState cur = object(s, oid).current;
  if (expected_revision && *expected_revision != cur.revision) {
    throw Conflict("stale revision " + std::to_string(*expected_revision) + ", current is " +
                       std::to_string(cur.revision),
                   cur);
  }
  AuditEntry e;
  e.nudge = n;
  e.result = apply_nudge(cur.pose, n);
  return commit(s, oid, std::move(e));
}

Overlay AnnotationStore::overlay(const std::string& seq, const std::string& oid, int frame) const {
  std::lock_guard lock(mutex_);
  const Session& s = session(seq);
  const ObjectState& st = object(s, oid);
  try {
    return compute_overlay(s.scene, s.scene.object(oid), st.current.pose, frame);
  } catch (const InvalidArgument& e) {
    throw NotFound(e.what());
  }
}

// ---------------------------------------------------------------- http

namespace {

Json overlay_to_json(const Overlay& ov) {
  auto pt = [](const Vec2& p) { return Json::array({p.x(), p.y()}); };
  Json edges = Json::array();
  for (const auto& e : ov.box_edges) edges.push_back(Json::array({pt(e[0]), pt(e[1])}));
  Json kps = Json::array();
  for (const auto& k : ov.keypoints) kps.push_back(k ? pt(*k) : Json(nullptr));
  Json ann = Json::array();
  for (const auto& a : ov.annotations) ann.push_back(Json{{"keypoint", a.keypoint}, {"pixel", pt(a.pixel)}});
  return Json{{"frame", ov.frame}, {"box_edges", edges}, {"keypoints", kps}, {"annotations", ann}};
}

Json state_to_json(const PoseState& s) { return Json{{"pose", scaled_pose_to_json(s.pose)}, {"revision", s.revision}}; }

void reply(httplib::Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(2) + "\n", "application/json");
}

Json parse_body(const httplib::Request& req) {
  try {
    return Json::parse(req.body);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("request body: ") + e.what());
  }
}

long revision_field(const Json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end() || !it->is_number_integer()) throw ValidationError(std::string("body needs integer '") + key + "'");
  return it->get<long>();
}

// Maps library errors onto HTTP statuses.
template <class Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const NotFound& e) {
      reply(res, 404, Json{{"error", "not_found"}, {"message", e.what()}});
    } catch (const Conflict& e) {
      Json body = state_to_json(e.current);
      body["error"] = "conflict";
      body["message"] = e.what();
      reply(res, 409, body);
    } catch (const Error& e) {
      reply(res, 400, Json{{"error", "validation"}, {"message", e.what()}});
    } catch (const nlohmann::json::exception& e) {
      reply(res, 400, Json{{"error", "validation"}, {"message", e.what()}});
    }
  };
}

}  // namespace

void register_routes(httplib::Server& server, AnnotationStore& store) {
  server.Get("/sequences", guarded([&store](const httplib::Request&, httplib::Response& res) {
    reply(res, 200, Json{{"sequences", store.sequence_ids()}});
  }));

  server.Get(R"(/sequences/([^/]+)/keyframes)", guarded([&store](const httplib::Request& req, httplib::Response& res) {
    const std::string seq = req.matches[1];
    Json kf = Json::array();
    for (int f : store.keyframes(seq)) {
      const std::string img = store.image_of(seq, f);
      kf.push_back(Json{{"frame", f}, {"image", img.empty() ? Json(nullptr) : Json("/files/" + seq + "/" + img)}});
    }
    reply(res, 200, Json{{"keyframes", kf}});
  }));

  server.Get(R"(/files/([^/]+)/(.+))", guarded([&store](const httplib::Request& req, httplib::Response& res) {
    const std::string seq = req.matches[1];
    const fs::path rel = std::string(req.matches[2]);
    if (rel.is_absolute() || rel.lexically_normal().string().starts_with("..")) throw NotFound("bad file path");
    const fs::path full = store.scene_dir(seq) / rel;
    if (!fs::is_regular_file(full)) throw NotFound("no file '" + rel.string() + "'");
    res.set_content(read_file(full), "application/octet-stream");
  }));

  server.Get(R"(/sequences/([^/]+)/objects/([^/]+)/pose)",
             guarded([&store](const httplib::Request& req, httplib::Response& res) {
               reply(res, 200, state_to_json(store.pose(req.matches[1], req.matches[2])));
             }));

  server.Post(R"(/sequences/([^/]+)/objects/([^/]+)/pose)",
              guarded([&store](const httplib::Request& req, httplib::Response& res) {
                const Json body = parse_body(req);
                if (!body.contains("pose")) throw ValidationError("body needs 'pose'");
                const ScaledPose p = scaled_pose_from_json(body["pose"], "pose");
                reply(res, 200, state_to_json(store.set_pose(req.matches[1], req.matches[2], p,
                                                             revision_field(body, "expected_revision"))));
              }));

  server.Post(R"(/sequences/([^/]+)/objects/([^/]+)/nudge)",
              guarded([&store](const httplib::Request& req, httplib::Response& res) {
                const std::string seq = req.matches[1], oid = req.matches[2];
                const Json body = parse_body(req);
                Nudge n;
                const std::string axis = body.at("axis").get<std::string>();
                if (axis.size() != 1) throw ValidationError("nudge axis must be x, y or z");
                n.axis = axis[0];
                if (body.contains("delta_deg")) n.delta_deg = body["delta_deg"].get<double>();
                if (body.contains("delta_cm")) n.delta_cm = body["delta_cm"].get<double>();
                std::optional<long> expected;
                if (body.contains("expected_revision")) expected = revision_field(body, "expected_revision");
                Json out = state_to_json(store.nudge(seq, oid, n, expected));
                Json overlays = Json::array();
                for (int f : store.keyframes(seq)) overlays.push_back(overlay_to_json(store.overlay(seq, oid, f)));
                out["overlays"] = overlays;
                reply(res, 200, out);
              }));

  server.Get(R"(/sequences/([^/]+)/objects/([^/]+)/overlay)",
             guarded([&store](const httplib::Request& req, httplib::Response& res) {
               if (!req.has_param("frame")) throw ValidationError("overlay needs ?frame=k");
               int frame = 0;
               try {
                 frame = std::stoi(req.get_param_value("frame"));
               } catch (const std::exception&) {
                 throw ValidationError("frame must be an integer");
               }
               reply(res, 200, overlay_to_json(store.overlay(req.matches[1], req.matches[2], frame)));
             }));

  server.Get(R"(/sequences/([^/]+)/objects/([^/]+)/audit)",
             guarded([&store](const httplib::Request& req, httplib::Response& res) {
               const std::string seq = req.matches[1], oid = req.matches[2];
               Json log = Json::array();
               for (const auto& e : store.audit_log(seq, oid)) log.push_back(audit_to_json(e));
               reply(res, 200, Json{{"initial", scaled_pose_to_json(store.initial_pose(seq, oid))}, {"log", log}});
             }));
}

}  // namespace genpose
