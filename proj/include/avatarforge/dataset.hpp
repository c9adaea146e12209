#pragma once

#include "avatarforge/image.hpp"

#include <Eigen/Core>

#include <filesystem>
#include <string>
#include <vector>

namespace avatarforge {

/// Pinhole camera intrinsics in pixels.
struct Intrinsics {
    double fx = 0.0;
    double fy = 0.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 0;
    int height = 0;

    void validate() const;
    bool operator==(const Intrinsics&) const = default;
};

/// Tracked parameters for one video frame. Paths are relative to the dataset root.
struct FrameRecord {
    int index = 0;
    std::string image_path;
    std::string mask_path;
    /// Camera-to-world rigid transform.
    Eigen::Matrix4d pose = Eigen::Matrix4d::Identity();
    Eigen::VectorXd expression;
    std::vector<Eigen::Vector2d> landmarks;
};

/// A validated, manifest-backed frame sequence. Pixels are loaded on demand.
class FrameDataset {
public:
    FrameDataset() = default;
    FrameDataset(std::filesystem::path root, Intrinsics intrinsics, std::vector<FrameRecord> frames,
                 double fps);

    const std::filesystem::path& root() const { return root_; }
    const Intrinsics& intrinsics() const { return intrinsics_; }
    const std::vector<FrameRecord>& frames() const { return frames_; }
    const FrameRecord& frame(std::size_t i) const { return frames_.at(i); }
    std::size_t size() const { return frames_.size(); }
    double fps() const { return fps_; }

    /// Expression dimension m (0 for an empty dataset).
    int expression_size() const;
    int landmark_count() const;

    /// RGB frame image in [0,1].
    Image load_image(std::size_t i) const;
    /// Single-channel soft mask in [0,1].
    Image load_mask(std::size_t i) const;

    std::vector<Image> load_images() const;
    std::vector<Image> load_masks() const;

    /// Frame image composited over the background through its mask.
    Image load_masked(std::size_t i, const Color& background = kWhite) const;

private:
    std::filesystem::path root_;
    Intrinsics intrinsics_;
    std::vector<FrameRecord> frames_;
    double fps_ = 0.0;
};

inline constexpr const char* kManifestName = "manifest.json";

/// Zero-padded six digit file stem used for frame and mask files.
std::string frame_stem(int index);

/// Parses and validates root/manifest.json. Every referenced file must exist
/// and match the intrinsics resolution.
FrameDataset load_dataset(const std::filesystem::path& root);

/// Writes a manifest describing `dataset`'s records (paths as stored) into root.
void write_manifest(const std::filesystem::path& root, const Intrinsics& intrinsics,
                    const std::vector<FrameRecord>& frames, double fps);

/// Creates a complete dataset directory (frames/, masks/, manifest.json).
/// Record image/mask paths are rewritten to the standard layout.
FrameDataset write_dataset(const std::filesystem::path& root, const Intrinsics& intrinsics,
                           std::vector<FrameRecord> frames, double fps,
                           const std::vector<Image>& images, const std::vector<Image>& masks);

/// Persists one image per frame as out/label/NNNNNN.png, copies the masks to
/// out/label/masks/ and writes a manifest pointing at the new files, so the
/// result is itself loadable with load_dataset. Returns out/label.
std::filesystem::path save_frameset(const FrameDataset& dataset, const std::vector<Image>& images,
                                    const std::filesystem::path& out, const std::string& label);

/// out = mask * image + (1 - mask) * background, per pixel.
Image masked(const Image& image, const Image& mask, const Color& background);

}  // namespace avatarforge
