#pragma once

#include "avatarforge/avatar.hpp"
#include "avatarforge/dataset.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace avatarforge {

/// Synthetic head-like scene with known ground truth: a textured sphere with
/// eye and mouth markings, a jaw-opening blendshape and a widening blendshape,
/// orbited by a pinhole camera. Frames are renders of the ground-truth model.
struct ToySceneOptions {
    int frames = 20;
    int held_out = 4;
    int width = 64;
    int height = 64;
    int grid_resolution = 64;
    int basis_resolution = 8;
    int blendshapes = 2;  // 0, 1 or 2
    double yaw_degrees = 30.0;
    double pitch_degrees = 10.0;
    double distance = 3.0;
    double focal = 80.0;
    int samples_per_ray = 96;
    double fps = 25.0;
    /// Every frame shares the first frame's pose and expression.
    bool static_scene = false;
    std::uint64_t seed = 1;
};

struct ToyFrames {
    std::vector<FrameRecord> records;
    std::vector<Image> images;
    std::vector<Image> masks;
};

struct ToyScene {
    AvatarModel truth;
    Intrinsics intrinsics;
    ToyFrames train;
    ToyFrames held_out;
    std::vector<Eigen::Vector3d> canonical_landmarks;
    int lip_upper = 5;
    int lip_lower = 6;
};

/// Ground-truth avatar used by the toy scene.
AvatarModel make_toy_avatar(const ToySceneOptions& options);

/// Inverse of deform() by fixed-point iteration (canonical -> deformed).
Eigen::Vector3d deform_inverse(const DeformationBasis& basis, const Eigen::Vector3d& canonical,
                               const Eigen::VectorXd& expression);

ToyScene make_toy_scene(const ToySceneOptions& options = {});

/// Writes the training frames of `scene` as a dataset directory.
FrameDataset write_toy_dataset(const std::filesystem::path& root, const ToyScene& scene, double fps = 25.0);

}  // namespace avatarforge
