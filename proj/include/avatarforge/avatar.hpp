#pragma once

#include "avatarforge/camera.hpp"
#include "avatarforge/dataset.hpp"
#include "avatarforge/image.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace avatarforge {

/// Canonical-space radiance grid over [-1,1]^3. Values live on R^3 nodes;
/// raw values are trilinearly interpolated and then activated
/// (sigma = softplus, colour = logistic).
struct RadianceGrid {
    int resolution = 0;
    std::vector<double> density_raw;  // R^3
    std::vector<double> color_raw;    // R^3 x 3, interleaved

    RadianceGrid() = default;
    RadianceGrid(int resolution, double density_init, double color_init);

    std::size_t node_count() const { return density_raw.size(); }
};

/// Expression blendshapes: one displacement grid per coefficient over the same
/// box. Offset(x, e) = sum_k e_k * trilinear(W_k, x).
struct DeformationBasis {
    int resolution = 0;
    int count = 0;
    std::vector<double> weights;  // count x R_d^3 x 3

    DeformationBasis() = default;
    DeformationBasis(int resolution, int count);

    std::size_t nodes_per_shape() const {
        return static_cast<std::size_t>(resolution) * resolution * resolution;
    }
};

/// First/second moment estimates of the adaptive-moment optimiser, laid out
/// like ModelGradients (density, colour, basis).
struct OptimizerState {
    std::uint64_t step = 0;
    std::vector<double> first_moment;
    std::vector<double> second_moment;
};

struct AvatarModel {
    RadianceGrid grid;
    DeformationBasis basis;
    Color background = kWhite;
    OptimizerState optimizer;

    std::size_t parameter_count() const {
        return grid.density_raw.size() + grid.color_raw.size() + basis.weights.size();
    }
};

struct AvatarShape {
    int grid_resolution = 64;
    int basis_resolution = 8;
    int expression_size = 0;
};

inline constexpr double kInitialDensityRaw = -4.0;
inline constexpr double kInitialColorRaw = 0.0;

/// Fresh model: near-empty grey density, zero deformation, white background.
AvatarModel make_avatar(const AvatarShape& shape);

double softplus(double x);
double softplus_inverse(double y);
double logistic(double x);
double logit(double p);

/// Maps a deformed-space point to canonical space: x + offset(x, e).
Eigen::Vector3d deform(const DeformationBasis& basis, const Eigen::Vector3d& x, const Eigen::VectorXd& e);

struct RenderOptions {
    int samples_per_ray = 96;
    /// Stratified jitter seed; without one every sample sits at its bin centre.
    std::optional<std::uint64_t> jitter_seed;
};

struct RayResult {
    Eigen::Vector3d color;
    double alpha = 0.0;  // 1 - residual transmittance
};

/// Per-sample quadrature terms of one ray, exposed for compositing checks.
struct RayTrace {
    std::vector<double> weights;  // T_i (1 - exp(-sigma_i delta))
    double residual_transmittance = 1.0;
    double delta = 0.0;
};

/// Volumetric rendering of one ray against the deformed field.
RayResult render_ray(const AvatarModel& model, const Ray& ray, const Eigen::VectorXd& expression,
                     const RenderOptions& options, std::uint64_t ray_id = 0, RayTrace* trace = nullptr);

struct RenderResult {
    Image color;  // RGB, composited over the background
    Image alpha;  // 1 channel
};

RenderResult render_view(const AvatarModel& model, const Intrinsics& intrinsics, const Eigen::Matrix4d& pose,
                         const Eigen::VectorXd& expression, int width, int height, const RenderOptions& options = {});

Image render_image(const AvatarModel& model, const Intrinsics& intrinsics, const Eigen::Matrix4d& pose,
                   const Eigen::VectorXd& expression, int width, int height, const RenderOptions& options = {});

/// One render per frame at its pose and expression, in dataset order. A
/// non-positive width/height means the dataset resolution.
std::vector<Image> render_dataset(const AvatarModel& model, const FrameDataset& dataset, int width = 0,
                                  int height = 0, const RenderOptions& options = {});

struct RaySample {
    Ray ray;
    Eigen::VectorXd expression;
    Eigen::Vector3d target;
    std::uint64_t ray_id = 0;
};

struct ModelGradients {
    std::vector<double> density;
    std::vector<double> color;
    std::vector<double> basis;

    explicit ModelGradients(const AvatarModel& model);
    void zero();
};

struct LossAndGrad {
    double loss = 0.0;
    ModelGradients gradients;
};

/// Throws naming the first grid that holds a non-finite parameter.
void check_finite(const AvatarModel& model);

/// Mean squared colour error over the batch (averaged over rays and RGB) and
/// its exact gradient with respect to every model parameter.
LossAndGrad loss_and_grad(const AvatarModel& model, std::span<const RaySample> batch, const RenderOptions& options);

/// Same as loss_and_grad but accumulates into an existing gradient buffer.
double accumulate_loss_and_grad(const AvatarModel& model, std::span<const RaySample> batch,
                                const RenderOptions& options, ModelGradients& gradients);

struct TrainConfig {
    int rays_per_step = 4096;
    int samples_per_ray = 96;
    double learning_rate = 5e-2;
    /// Step size for the deformation basis; displacements need far finer steps
    /// than raw density and colour.
    double deformation_learning_rate = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double epsilon = 1e-8;
    int steps_per_cycle = 2000;
    double background_fraction = 0.1;
    std::uint64_t rng_seed = 0;

    void validate() const;
};

/// Training images with the frame records they belong to.
struct TrainingSet {
    const FrameDataset& dataset;
    const std::vector<Image>& images;
    const std::vector<Image>& masks;
};

struct TrainLog {
    std::vector<double> losses;
};

/// Runs config.steps_per_cycle adaptive-moment updates on random ray batches.
/// Without `resume` parameters and optimiser state are reinitialised first.
/// Rays are drawn uniformly from masked pixels of all frames, plus a
/// background_fraction share from unmasked pixels.
AvatarModel train(AvatarModel model, const TrainingSet& data, const TrainConfig& config, bool resume,
                  TrainLog* log = nullptr);

/// Checkpoint file: "AVFGCKPT", u32 version, u32 R, u32 R_d, u32 m, f32 background[3],
/// u64 optimiser step, u32 has_moments, then f32 arrays density, colour, basis
/// [, first moments, second moments]. Little-endian throughout.
void save_checkpoint(const std::filesystem::path& path, const AvatarModel& model);
AvatarModel load_checkpoint(const std::filesystem::path& path);

}  // namespace avatarforge
