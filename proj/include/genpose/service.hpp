#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "genpose/errors.hpp"
#include "genpose/io.hpp"

namespace httplib {
class Server;
}

namespace genpose {

class NotFound : public Error {
 public:
  using Error::Error;
};

struct PoseState {
  ScaledPose pose;  // object-to-world
  long revision = 0;
};

// Stale expected revision; carries the current state.
class Conflict : public Error {
 public:
  Conflict(const std::string& what, PoseState current) : Error(what), current(std::move(current)) {}
  PoseState current;
};

struct Nudge {
  char axis = 'x';                 // 'x', 'y' or 'z'
  std::optional<double> delta_deg;  // about the object's own axis
  std::optional<double> delta_cm;   // along the world axis
};

// Applies a nudge: rotation composes on the right, translation adds in world coordinates.
ScaledPose apply_nudge(const ScaledPose& pose, const Nudge& nudge);

struct AuditEntry {
  long revision = 0;  // revision after the edit
  std::optional<ScaledPose> set;
  std::optional<Nudge> nudge;
  ScaledPose result;
};

ScaledPose replay(const ScaledPose& initial, const std::vector<AuditEntry>& log);

struct Overlay {
  int frame = 0;
  std::vector<std::array<Vec2, 2>> box_edges;  // edges with both ends in front of the camera
  std::vector<std::optional<Vec2>> keypoints;  // projected model keypoints, empty when behind
  std::vector<KeypointAnnotation> annotations;  // stored pixels for this frame
};

Overlay compute_overlay(const Scene& scene, const SceneObject& object, const ScaledPose& world_pose, int frame);

// Holds the scenes being refined. Every accepted edit rewrites the scene file
// atomically and appends to the audit log.
class AnnotationStore {
 public:
  // Returns the scene id.
  std::string add_scene(const std::filesystem::path& path, int default_keyframes = 5);

  std::vector<std::string> sequence_ids() const;
  std::vector<int> keyframes(const std::string& seq) const;
  std::string image_of(const std::string& seq, int frame) const;
  PoseState pose(const std::string& seq, const std::string& oid) const;
  PoseState set_pose(const std::string& seq, const std::string& oid, const ScaledPose& pose, long expected_revision);
  PoseState nudge(const std::string& seq, const std::string& oid, const Nudge& nudge,
                  std::optional<long> expected_revision = std::nullopt);
  Overlay overlay(const std::string& seq, const std::string& oid, int frame) const;
  std::vector<AuditEntry> audit_log(const std::string& seq, const std::string& oid) const;
  ScaledPose initial_pose(const std::string& seq, const std::string& oid) const;
  std::filesystem::path scene_dir(const std::string& seq) const;

 private:
  struct ObjectState {
    ScaledPose initial;
    PoseState current;
    std::vector<AuditEntry> log;
  };
  struct Session {
    Scene scene;
    std::filesystem::path path;
    std::vector<int> keyframes;
    std::map<std::string, ObjectState> objects;
  };

  const Session& session(const std::string& seq) const;
  Session& session(const std::string& seq);
  const ObjectState& object(const Session& s, const std::string& oid) const;
  PoseState commit(Session& s, const std::string& oid, AuditEntry entry);

  mutable std::mutex mutex_;
  std::map<std::string, Session> sessions_;
};

void register_routes(httplib::Server& server, AnnotationStore& store);

}  // namespace genpose
