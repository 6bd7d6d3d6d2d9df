#pragma once

#include <string>

#include <json.hpp>

#include "genpose/geometry.hpp"

namespace genpose {

// Shared pose encoding of the text formats:
//   {"translation": [x, y, z], "quaternion_wxyz": [w, x, y, z], "scale": [sx, sy, sz]}
nlohmann::ordered_json pose_to_json(const Pose& pose);
nlohmann::ordered_json scaled_pose_to_json(const ScaledPose& pose);
// Throws ParseError on shape errors, ValidationError on invariant violations.
ScaledPose scaled_pose_from_json(const nlohmann::ordered_json& j, const std::string& where);

}  // namespace genpose
