#pragma once

#include "avatarforge/dataset.hpp"

#include <Eigen/Core>

#include <optional>

namespace avatarforge {

// Camera convention: x right, y down, z forward (looking along +z in camera
// space). Poses are camera-to-world.

struct Ray {
    Eigen::Vector3d origin;
    Eigen::Vector3d direction;  // unit length
};

/// Intrinsics rescaled to a different output resolution.
Intrinsics scaled(const Intrinsics& intrinsics, int width, int height);

/// Ray through pixel (x, y)'s centre.
Ray pixel_ray(const Intrinsics& intrinsics, const Eigen::Matrix4d& cam_to_world, int x, int y);

/// Projects a world point to pixel coordinates; nullopt when behind the camera.
std::optional<Eigen::Vector2d> project(const Intrinsics& intrinsics, const Eigen::Matrix4d& cam_to_world,
                                       const Eigen::Vector3d& point);

/// Camera-to-world transform of a camera at `eye` looking at `target`.
Eigen::Matrix4d look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                        const Eigen::Vector3d& world_up = Eigen::Vector3d::UnitY());

/// Slab test against the axis-aligned box [lo, hi]; returns [t_near, t_far]
/// clipped to t >= 0, or nullopt on a miss.
std::optional<std::pair<double, double>> intersect_box(const Ray& ray, const Eigen::Vector3d& lo,
                                                       const Eigen::Vector3d& hi);

}  // namespace avatarforge
