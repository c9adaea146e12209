#include "avatarforge/toy_scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace avatarforge {

namespace {

constexpr double kRadius = 0.6;

double smoothstep(double edge0, double edge1, double x) {
    const double t = std::clamp((x - edge0) / (edge1 - edge0), 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

Eigen::Vector3d on_sphere(double x, double y) {
    return {x, y, std::sqrt(kRadius * kRadius - x * x - y * y)};
}

std::vector<Eigen::Vector3d> face_landmarks() {
    return {on_sphere(-0.2, 0.18),  on_sphere(0.2, 0.18),  on_sphere(0.0, 0.0),  on_sphere(-0.17, -0.25),
            on_sphere(0.17, -0.25), on_sphere(0.0, -0.21), on_sphere(0.0, -0.29), on_sphere(0.0, -0.45)};
}

Eigen::Vector3d surface_color(const Eigen::Vector3d& p, const std::vector<Eigen::Vector3d>& marks) {
    Eigen::Vector3d c(0.85 + 0.08 * std::sin(7.0 * p.x() + 1.0), 0.62 + 0.08 * std::sin(6.0 * p.y()),
                      0.5 + 0.08 * std::sin(5.0 * p.z() + 2.0));
    const auto blend = [&](const Eigen::Vector3d& center, double radius, const Eigen::Vector3d& tint) {
        const double w = std::exp(-(p - center).squaredNorm() / (radius * radius));
        c = (1.0 - w) * c + w * tint;
    };
    blend(marks[0], 0.07, {0.15, 0.2, 0.35});
    blend(marks[1], 0.07, {0.15, 0.2, 0.35});
    blend(marks[2], 0.06, {0.7, 0.4, 0.3});
    // Mouth: a dark red band between the lip landmarks.
    const double mouth = smoothstep(0.2, 0.1, std::abs(p.x())) * smoothstep(0.06, 0.02, std::abs(p.y() + 0.25)) *
                         smoothstep(0.2, 0.4, p.z());
    c = (1.0 - mouth) * c + mouth * Eigen::Vector3d(0.55, 0.08, 0.1);
    return c.cwiseMax(0.02).cwiseMin(0.98);
}

Eigen::Matrix4d orbit_pose(double yaw_deg, double pitch_deg, double distance) {
    const double yaw = yaw_deg * std::numbers::pi / 180.0;
    const double pitch = pitch_deg * std::numbers::pi / 180.0;
    const Eigen::Vector3d eye(distance * std::sin(yaw) * std::cos(pitch), distance * std::sin(pitch),
                              distance * std::cos(yaw) * std::cos(pitch));
    return look_at(eye, Eigen::Vector3d::Zero());
}

void render_frames(const ToyScene& scene, const ToySceneOptions& opt, ToyFrames& frames) {
    const RenderOptions ro{opt.samples_per_ray, std::nullopt};
    for (auto& rec : frames.records) {
        RenderResult r = render_view(scene.truth, scene.intrinsics, rec.pose, rec.expression, opt.width, opt.height, ro);
        for (const auto& lm : scene.canonical_landmarks) {
            const Eigen::Vector3d world = deform_inverse(scene.truth.basis, lm, rec.expression);
            const auto px = project(scene.intrinsics, rec.pose, world);
            if (!px) throw Error("toy landmark behind the camera");
            rec.landmarks.push_back(
                px->cwiseMax(Eigen::Vector2d::Zero()).cwiseMin(Eigen::Vector2d(opt.width - 1.0, opt.height - 1.0)));
        }
        frames.images.push_back(std::move(r.color));
        frames.masks.push_back(std::move(r.alpha));
    }
}

}  // namespace

AvatarModel make_toy_avatar(const ToySceneOptions& opt) {
    if (opt.blendshapes < 0 || opt.blendshapes > 2) throw Error("toy scene supports 0 to 2 blendshapes");
    AvatarModel model = make_avatar({opt.grid_resolution, opt.basis_resolution, opt.blendshapes});
    const auto marks = face_landmarks();
    const int r = opt.grid_resolution;
    for (int k = 0; k < r; ++k) {
        for (int j = 0; j < r; ++j) {
            for (int i = 0; i < r; ++i) {
                const Eigen::Vector3d p(-1.0 + 2.0 * i / (r - 1), -1.0 + 2.0 * j / (r - 1), -1.0 + 2.0 * k / (r - 1));
                const std::size_t idx = (static_cast<std::size_t>(k) * r + j) * r + i;
                const double sigma = std::max(1e-3, 40.0 * logistic((kRadius - p.norm()) / 0.025));
                model.grid.density_raw[idx] = softplus_inverse(sigma);
                const double n = std::max(p.norm(), 1e-6);
                const Eigen::Vector3d c = surface_color(p * (kRadius / n), marks);
                for (int ch = 0; ch < 3; ++ch) model.grid.color_raw[idx * 3 + ch] = logit(c[ch]);
            }
        }
    }
    const int rd = opt.basis_resolution;
    const std::size_t nodes = model.basis.nodes_per_shape();
    for (int k = 0; k < rd; ++k) {
        for (int j = 0; j < rd; ++j) {
            for (int i = 0; i < rd; ++i) {
                const Eigen::Vector3d p(-1.0 + 2.0 * i / (rd - 1), -1.0 + 2.0 * j / (rd - 1), -1.0 + 2.0 * k / (rd - 1));
                const std::size_t idx = (static_cast<std::size_t>(k) * rd + j) * rd + i;
                if (opt.blendshapes >= 1) {
                    // Jaw: content below the mouth moves down (offset maps deformed -> canonical).
                    model.basis.weights[idx * 3 + 1] = 0.12 * smoothstep(-0.1, -0.4, p.y());
                }
                if (opt.blendshapes >= 2) {
                    // Widening about the vertical axis.
                    model.basis.weights[(nodes + idx) * 3 + 0] = -0.08 * p.x();
                }
            }
        }
    }
    return model;
}

Eigen::Vector3d deform_inverse(const DeformationBasis& basis, const Eigen::Vector3d& canonical,
                               const Eigen::VectorXd& expression) {
    Eigen::Vector3d x = canonical;
    for (int it = 0; it < 50; ++it) x = canonical - (deform(basis, x, expression) - x);
    return x;
}

ToyScene make_toy_scene(const ToySceneOptions& opt) {
    if (opt.frames < 1) throw Error("toy scene needs at least one frame");
    ToyScene scene;
    scene.truth = make_toy_avatar(opt);
    scene.intrinsics = {opt.focal * opt.width / 64.0, opt.focal * opt.height / 64.0, opt.width / 2.0,
                        opt.height / 2.0, opt.width, opt.height};
    scene.canonical_landmarks = face_landmarks();

    const int m = opt.blendshapes;
    auto expression_at = [&](double phase) {
        Eigen::VectorXd e(m);
        if (m >= 1) e[0] = 0.5 + 0.5 * std::sin(phase);
        if (m >= 2) e[1] = 0.5 + 0.5 * std::sin(0.6 * phase + 1.0);
        return e;
    };

    for (int i = 0; i < opt.frames; ++i) {
        const int t = opt.static_scene ? 0 : i;
        const double u = opt.frames > 1 ? static_cast<double>(t) / (opt.frames - 1) : 0.5;
        FrameRecord rec;
        rec.index = i;
        rec.pose = orbit_pose(opt.yaw_degrees * (2.0 * u - 1.0),
                              opt.pitch_degrees * std::sin(2.0 * std::numbers::pi * u), opt.distance);
        rec.expression = expression_at(0.7 * t);
        scene.train.records.push_back(std::move(rec));
    }

    std::uint64_t state = opt.seed * 0x9E3779B97F4A7C15ull + 17;
    auto uniform = [&state] {
        state = state * 6364136223846793005ull + 1442695040888963407ull;
        return static_cast<double>(state >> 11) * 0x1.0p-53;
    };
    for (int i = 0; i < opt.held_out; ++i) {
        FrameRecord rec;
        rec.index = opt.frames + i;
        rec.pose = orbit_pose(opt.yaw_degrees * (2.0 * uniform() - 1.0), opt.pitch_degrees * (2.0 * uniform() - 1.0),
                              opt.distance);
        rec.expression = expression_at(2.0 * std::numbers::pi * uniform());
        scene.held_out.records.push_back(std::move(rec));
    }

    render_frames(scene, opt, scene.train);
    render_frames(scene, opt, scene.held_out);
    return scene;
}

FrameDataset write_toy_dataset(const std::filesystem::path& root, const ToyScene& scene, double fps) {
    write_dataset(root, scene.intrinsics, scene.train.records, fps, scene.train.images, scene.train.masks);
    return load_dataset(root);
}

}  // namespace avatarforge
