#include "avatarforge/camera.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <limits>

namespace avatarforge {

Intrinsics scaled(const Intrinsics& intrinsics, int width, int height) {
    if (width == intrinsics.width && height == intrinsics.height) return intrinsics;
    const double sx = static_cast<double>(width) / intrinsics.width;
    const double sy = static_cast<double>(height) / intrinsics.height;
    return {intrinsics.fx * sx, intrinsics.fy * sy, intrinsics.cx * sx, intrinsics.cy * sy, width, height};
}

Ray pixel_ray(const Intrinsics& k, const Eigen::Matrix4d& cam_to_world, int x, int y) {
    const Eigen::Vector3d d_cam((x + 0.5 - k.cx) / k.fx, (y + 0.5 - k.cy) / k.fy, 1.0);
    const Eigen::Matrix3d rot = cam_to_world.topLeftCorner<3, 3>();
    return {cam_to_world.topRightCorner<3, 1>(), (rot * d_cam).normalized()};
}

std::optional<Eigen::Vector2d> project(const Intrinsics& k, const Eigen::Matrix4d& cam_to_world,
                                       const Eigen::Vector3d& point) {
    const Eigen::Matrix3d rot = cam_to_world.topLeftCorner<3, 3>();
    const Eigen::Vector3d p = rot.transpose() * (point - cam_to_world.topRightCorner<3, 1>());
    if (p.z() <= 1e-9) return std::nullopt;
    // Pixel centres sit at integer + 0.5 in ray space; landmark coordinates use
    // integer pixel indices, hence the -0.5.
    return Eigen::Vector2d(k.fx * p.x() / p.z() + k.cx - 0.5, k.fy * p.y() / p.z() + k.cy - 0.5);
}

Eigen::Matrix4d look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& world_up) {
    const Eigen::Vector3d forward = (target - eye).normalized();
    const Eigen::Vector3d right = forward.cross(world_up).normalized();
    const Eigen::Vector3d down = forward.cross(right);
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.block<3, 1>(0, 0) = right;
    m.block<3, 1>(0, 1) = down;
    m.block<3, 1>(0, 2) = forward;
    m.block<3, 1>(0, 3) = eye;
    return m;
}

std::optional<std::pair<double, double>> intersect_box(const Ray& ray, const Eigen::Vector3d& lo,
                                                       const Eigen::Vector3d& hi) {
    double t_near = 0.0;
    double t_far = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        const double d = ray.direction[a];
        const double o = ray.origin[a];
        if (std::abs(d) < 1e-12) {
            if (o < lo[a] || o > hi[a]) return std::nullopt;
            continue;
        }
        double t0 = (lo[a] - o) / d;
        double t1 = (hi[a] - o) / d;
        if (t0 > t1) std::swap(t0, t1);
        t_near = std::max(t_near, t0);
        t_far = std::min(t_far, t1);
        if (t_near >= t_far) return std::nullopt;
    }
    return std::make_pair(t_near, t_far);
}

}  // namespace avatarforge
