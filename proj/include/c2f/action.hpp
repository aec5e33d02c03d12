#pragma once

#include <cstdint>
#include <string_view>

#include <Eigen/Geometry>

#include "c2f/geometry.hpp"

namespace c2f {

enum class GripperState : std::uint8_t { open = 0, closed = 1 };

std::string_view to_string(GripperState g);
GripperState gripper_from_string(std::string_view s);

/// End-effector target: position, orientation and gripper status.
struct Action {
    Vec3 position = Vec3::Zero();
    Eigen::Quaterniond orientation = Eigen::Quaterniond::Identity();
    GripperState gripper = GripperState::open;

    /// Throws InvalidArgument when the quaternion is not unit length or the position
    /// is outside `bounds`.
    void validate(const geometry::WorkspaceBounds& bounds) const;
};

}  // namespace c2f
