#include "avatarforge/avatar.hpp"

#include "avatarforge/parallel.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

namespace avatarforge {

namespace {

std::size_t cube(int r) { return static_cast<std::size_t>(r) * r * r; }

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

double uniform01(std::uint64_t& state) { return static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53; }

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t s = a ^ (b * 0xD1B54A32D192ED03ull);
    return splitmix64(s);
}

// Trilinear stencil of a point inside [-1,1]^3 on an R^3 node lattice.
struct Stencil {
    std::array<std::size_t, 8> index;
    std::array<double, 8> weight;
    std::array<std::array<double, 3>, 8> dweight;  // d weight / d position
};

bool inside_box(const Eigen::Vector3d& p) {
    return p.x() >= -1.0 && p.x() <= 1.0 && p.y() >= -1.0 && p.y() <= 1.0 && p.z() >= -1.0 && p.z() <= 1.0;
}

Stencil make_stencil(const Eigen::Vector3d& p, int res) {
    Stencil s;
    const double scale = 0.5 * (res - 1);
    std::array<int, 3> base;
    std::array<double, 3> frac;
    for (int a = 0; a < 3; ++a) {
        const double g = (p[a] + 1.0) * scale;
        base[a] = std::clamp(static_cast<int>(std::floor(g)), 0, res - 2);
        frac[a] = g - base[a];
    }
    for (int c = 0; c < 8; ++c) {
        const int bx = c & 1, by = (c >> 1) & 1, bz = (c >> 2) & 1;
        const double wx = bx ? frac[0] : 1.0 - frac[0];
        const double wy = by ? frac[1] : 1.0 - frac[1];
        const double wz = bz ? frac[2] : 1.0 - frac[2];
        const double sx = bx ? scale : -scale;
        const double sy = by ? scale : -scale;
        const double sz = bz ? scale : -scale;
        s.index[c] = (static_cast<std::size_t>(base[2] + bz) * res + (base[1] + by)) * res + (base[0] + bx);
        s.weight[c] = wx * wy * wz;
        s.dweight[c] = {sx * wy * wz, wx * sy * wz, wx * wy * sz};
    }
    return s;
}

Eigen::Vector3d offset_at(const DeformationBasis& basis, const Stencil& s, const Eigen::VectorXd& e) {
    Eigen::Vector3d off = Eigen::Vector3d::Zero();
    const std::size_t nodes = basis.nodes_per_shape();
    for (int k = 0; k < basis.count; ++k) {
        if (e[k] == 0.0) continue;
        Eigen::Vector3d v = Eigen::Vector3d::Zero();
        for (int c = 0; c < 8; ++c) {
            const double* w = &basis.weights[(k * nodes + s.index[c]) * 3];
            v += s.weight[c] * Eigen::Vector3d(w[0], w[1], w[2]);
        }
        off += e[k] * v;
    }
    return off;
}

struct SampleState {
    bool occupied = false;  // canonical point inside the grid
    Stencil canonical;
    Stencil deformed;
    double density_raw = 0.0;
    Eigen::Vector3d color_raw = Eigen::Vector3d::Zero();
    double sigma = 0.0;
    Eigen::Vector3d color = Eigen::Vector3d::Zero();
    double transmittance = 1.0;  // T_i, before this sample
    double weight = 0.0;
};

void check_expression(const DeformationBasis& basis, const Eigen::VectorXd& e) {
    if (e.size() != basis.count) {
        throw Error("expression has " + std::to_string(e.size()) + " coefficients, model expects " +
                    std::to_string(basis.count));
    }
}

// Forward quadrature along one ray. With a target, also back-propagates
// dL/dC = seed_scale * (C - target) into `grads`.
RayResult integrate(const AvatarModel& model, const Ray& ray, const Eigen::VectorXd& e, const RenderOptions& options,
                    std::uint64_t ray_id, RayTrace* trace, const Eigen::Vector3d* target = nullptr,
                    double seed_scale = 0.0, ModelGradients* grads = nullptr) {
    const Eigen::Vector3d bg(model.background[0], model.background[1], model.background[2]);
    RayResult result{bg, 0.0};
    if (trace) *trace = RayTrace{};

    const auto hit = intersect_box(ray, Eigen::Vector3d::Constant(-1.0), Eigen::Vector3d::Constant(1.0));
    if (!hit) return result;

    const int n = options.samples_per_ray;
    const double delta = (hit->second - hit->first) / n;
    std::uint64_t rng = options.jitter_seed ? mix(*options.jitter_seed, ray_id) : 0;

    thread_local std::vector<SampleState> samples;
    samples.assign(static_cast<std::size_t>(n), SampleState{});

    const RadianceGrid& grid = model.grid;
    const bool deforms = model.basis.count > 0 && e.size() > 0 && e.cwiseAbs().maxCoeff() > 0.0;
    Eigen::Vector3d color = Eigen::Vector3d::Zero();
    double transmittance = 1.0;
    for (int i = 0; i < n; ++i) {
        SampleState& s = samples[static_cast<std::size_t>(i)];
        const double u = options.jitter_seed ? uniform01(rng) : 0.5;
        const Eigen::Vector3d x = ray.origin + (hit->first + (i + u) * delta) * ray.direction;
        Eigen::Vector3d xc = x;
        if (deforms) {
            s.deformed = make_stencil(x.cwiseMax(-1.0).cwiseMin(1.0), model.basis.resolution);
            xc = x + offset_at(model.basis, s.deformed, e);
        }
        s.transmittance = transmittance;
        if (!inside_box(xc)) continue;
        s.occupied = true;
        s.canonical = make_stencil(xc, grid.resolution);
        for (int c = 0; c < 8; ++c) {
            const std::size_t idx = s.canonical.index[c];
            const double w = s.canonical.weight[c];
            s.density_raw += w * grid.density_raw[idx];
            s.color_raw += w * Eigen::Vector3d(grid.color_raw[idx * 3], grid.color_raw[idx * 3 + 1],
                                               grid.color_raw[idx * 3 + 2]);
        }
        s.sigma = softplus(s.density_raw);
        s.color = s.color_raw.unaryExpr([](double v) { return logistic(v); });
        const double survive = std::exp(-s.sigma * delta);
        s.weight = transmittance * (1.0 - survive);
        color += s.weight * s.color;
        transmittance *= survive;
    }
    result.color = color + transmittance * bg;
    result.alpha = 1.0 - transmittance;

    if (trace) {
        trace->delta = delta;
        trace->residual_transmittance = transmittance;
        trace->weights.reserve(static_cast<std::size_t>(n));
        for (const auto& s : samples) trace->weights.push_back(s.weight);
    }

    if (target && grads) {
        const Eigen::Vector3d g = seed_scale * (result.color - *target);
        const std::size_t nodes = model.basis.nodes_per_shape();
        double behind = transmittance * g.dot(bg);  // g . S_{>i}
        for (int i = n - 1; i >= 0; --i) {
            const SampleState& s = samples[static_cast<std::size_t>(i)];
            if (!s.occupied) continue;
            const double t_next = s.transmittance * std::exp(-s.sigma * delta);
            const double g_dot_c = g.dot(s.color);
            const double d_sigma = delta * (t_next * g_dot_c - behind);
            behind += s.weight * g_dot_c;

            const double d_density_raw = d_sigma * logistic(s.density_raw);
            const Eigen::Vector3d d_color_raw =
                (s.weight * g).cwiseProduct(s.color.cwiseProduct(Eigen::Vector3d::Ones() - s.color));

            Eigen::Vector3d d_position = Eigen::Vector3d::Zero();
            for (int c = 0; c < 8; ++c) {
                const std::size_t idx = s.canonical.index[c];
                const double w = s.canonical.weight[c];
                grads->density[idx] += w * d_density_raw;
                for (int ch = 0; ch < 3; ++ch) grads->color[idx * 3 + ch] += w * d_color_raw[ch];
                if (deforms) {
                    double coeff = d_density_raw * grid.density_raw[idx];
                    for (int ch = 0; ch < 3; ++ch) coeff += d_color_raw[ch] * grid.color_raw[idx * 3 + ch];
                    const auto& dw = s.canonical.dweight[c];
                    d_position += coeff * Eigen::Vector3d(dw[0], dw[1], dw[2]);
                }
            }
            if (deforms) {
                for (int k = 0; k < model.basis.count; ++k) {
                    if (e[k] == 0.0) continue;
                    for (int c = 0; c < 8; ++c) {
                        const double scale = e[k] * s.deformed.weight[c];
                        double* gb = &grads->basis[(k * nodes + s.deformed.index[c]) * 3];
                        for (int a = 0; a < 3; ++a) gb[a] += scale * d_position[a];
                    }
                }
            }
        }
    }
    return result;
}

}  // namespace

RadianceGrid::RadianceGrid(int res, double density_init, double color_init)
    : resolution(res), density_raw(cube(res), density_init), color_raw(cube(res) * 3, color_init) {
    if (res < 2) throw Error("grid resolution must be at least 2");
}

DeformationBasis::DeformationBasis(int res, int n) : resolution(res), count(n), weights(cube(res) * 3 * n, 0.0) {
    if (res < 2) throw Error("deformation grid resolution must be at least 2");
    if (n < 0) throw Error("negative blendshape count");
}

AvatarModel make_avatar(const AvatarShape& shape) {
    AvatarModel model;
    model.grid = RadianceGrid(shape.grid_resolution, kInitialDensityRaw, kInitialColorRaw);
    model.basis = DeformationBasis(shape.basis_resolution, shape.expression_size);
    return model;
}

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

double softplus_inverse(double y) {
    if (!(y > 0.0)) throw Error("softplus_inverse requires a positive argument");
    return y > 30.0 ? y : std::log(std::expm1(y));
}

double logistic(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double z = std::exp(x);
    return z / (1.0 + z);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

Eigen::Vector3d deform(const DeformationBasis& basis, const Eigen::Vector3d& x, const Eigen::VectorXd& e) {
    check_expression(basis, e);
    if (!x.allFinite()) throw Error("deform: non-finite point");
    if (basis.count == 0) return x;
    const Stencil s = make_stencil(x.cwiseMax(-1.0).cwiseMin(1.0), basis.resolution);
    return x + offset_at(basis, s, e);
}

RayResult render_ray(const AvatarModel& model, const Ray& ray, const Eigen::VectorXd& expression,
                     const RenderOptions& options, std::uint64_t ray_id, RayTrace* trace) {
    check_expression(model.basis, expression);
    return integrate(model, ray, expression, options, ray_id, trace);
}

RenderResult render_view(const AvatarModel& model, const Intrinsics& intrinsics, const Eigen::Matrix4d& pose,
                         const Eigen::VectorXd& expression, int width, int height, const RenderOptions& options) {
    check_expression(model.basis, expression);
    const Intrinsics k = scaled(intrinsics, width, height);
    RenderResult out{Image(width, height, 3), Image(width, height, 1)};
    parallel_for(static_cast<std::size_t>(height), [&](std::size_t row) {
        const int y = static_cast<int>(row);
        for (int x = 0; x < width; ++x) {
            const std::uint64_t id = static_cast<std::uint64_t>(y) * width + x;
            const RayResult r = integrate(model, pixel_ray(k, pose, x, y), expression, options, id, nullptr);
            for (int c = 0; c < 3; ++c) out.color.at(x, y, c) = static_cast<float>(std::clamp(r.color[c], 0.0, 1.0));
            out.alpha.at(x, y, 0) = static_cast<float>(std::clamp(r.alpha, 0.0, 1.0));
        }
    });
    return out;
}

Image render_image(const AvatarModel& model, const Intrinsics& intrinsics, const Eigen::Matrix4d& pose,
                   const Eigen::VectorXd& expression, int width, int height, const RenderOptions& options) {
    return render_view(model, intrinsics, pose, expression, width, height, options).color;
}

std::vector<Image> render_dataset(const AvatarModel& model, const FrameDataset& dataset, int width, int height,
                                  const RenderOptions& options) {
    if (width <= 0) width = dataset.intrinsics().width;
    if (height <= 0) height = dataset.intrinsics().height;
    std::vector<Image> out;
    out.reserve(dataset.size());
    for (const auto& rec : dataset.frames()) {
        out.push_back(render_image(model, dataset.intrinsics(), rec.pose, rec.expression, width, height, options));
    }
    return out;
}

ModelGradients::ModelGradients(const AvatarModel& model)
    : density(model.grid.density_raw.size(), 0.0),
      color(model.grid.color_raw.size(), 0.0),
      basis(model.basis.weights.size(), 0.0) {}

void ModelGradients::zero() {
    std::fill(density.begin(), density.end(), 0.0);
    std::fill(color.begin(), color.end(), 0.0);
    std::fill(basis.begin(), basis.end(), 0.0);
}

void check_finite(const AvatarModel& model) {
    auto finite = [](const std::vector<double>& v) {
        return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
    };
    if (!finite(model.grid.density_raw)) throw Error("non-finite parameter in density grid");
    if (!finite(model.grid.color_raw)) throw Error("non-finite parameter in color grid");
    if (!finite(model.basis.weights)) throw Error("non-finite parameter in deformation basis");
}

double accumulate_loss_and_grad(const AvatarModel& model, std::span<const RaySample> batch,
                                const RenderOptions& options, ModelGradients& gradients) {
    if (batch.empty()) throw Error("loss_and_grad: empty batch");
    check_finite(model);
    const double norm = 1.0 / (3.0 * static_cast<double>(batch.size()));
    double loss = 0.0;
    for (const RaySample& sample : batch) {
        check_expression(model.basis, sample.expression);
        const RayResult r = integrate(model, sample.ray, sample.expression, options, sample.ray_id, nullptr,
                                      &sample.target, 2.0 * norm, &gradients);
        loss += (r.color - sample.target).squaredNorm() * norm;
    }
    return loss;
}

LossAndGrad loss_and_grad(const AvatarModel& model, std::span<const RaySample> batch, const RenderOptions& options) {
    LossAndGrad out{0.0, ModelGradients(model)};
    out.loss = accumulate_loss_and_grad(model, batch, options, out.gradients);
    return out;
}

void TrainConfig::validate() const {
    if (rays_per_step <= 0 || samples_per_ray <= 0 || steps_per_cycle < 0) {
        throw Error("train config: rays, samples and steps must be positive");
    }
    if (!(learning_rate > 0.0) || !(deformation_learning_rate > 0.0) || !(beta1 > 0.0 && beta1 < 1.0) ||
        !(beta2 > 0.0 && beta2 < 1.0) || !(epsilon > 0.0)) {
        throw Error("train config: invalid optimiser constants");
    }
    if (!(background_fraction >= 0.0 && background_fraction <= 1.0)) {
        throw Error("train config: background_fraction must be in [0, 1]");
    }
}

namespace {

struct PixelRef {
    std::uint32_t frame;
    std::uint16_t x;
    std::uint16_t y;
};

void adam_update(std::vector<double>& params, const std::vector<double>& grad, double* m, double* v,
                 const TrainConfig& cfg, double lr, double bias1, double bias2) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        const double m_hat = m[i] / bias1;
        const double v_hat = v[i] / bias2;
        params[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
}

}  // namespace

AvatarModel train(AvatarModel model, const TrainingSet& data, const TrainConfig& config, bool resume, TrainLog* log) {
    config.validate();
    const FrameDataset& ds = data.dataset;
    if (data.images.size() != ds.size() || data.masks.size() != ds.size()) {
        throw Error("train: images/masks not aligned with frame records");
    }
    if (config.steps_per_cycle == 0) return model;
    if (ds.size() == 0) throw Error("train: empty dataset");
    if (ds.expression_size() != model.basis.count) {
        throw Error("train: dataset expression size differs from the model's blendshape count");
    }

    if (!resume) {
        model = make_avatar({model.grid.resolution, model.basis.resolution, model.basis.count});
    }
    const std::size_t n_params = model.parameter_count();
    if (model.optimizer.first_moment.size() != n_params) {
        model.optimizer = OptimizerState{0, std::vector<double>(n_params, 0.0), std::vector<double>(n_params, 0.0)};
    }

    std::vector<PixelRef> foreground;
    std::vector<PixelRef> background;
    std::vector<Intrinsics> cameras;
    for (std::size_t f = 0; f < ds.size(); ++f) {
        const Image& img = data.images[f];
        const Image& mask = data.masks[f];
        if (!img.same_size(mask) || img.channels() != 3) throw Error("train: image/mask mismatch at frame " +
                                                                     std::to_string(ds.frame(f).index));
        cameras.push_back(scaled(ds.intrinsics(), img.width(), img.height()));
        for (int y = 0; y < img.height(); ++y) {
            for (int x = 0; x < img.width(); ++x) {
                const PixelRef ref{static_cast<std::uint32_t>(f), static_cast<std::uint16_t>(x),
                                   static_cast<std::uint16_t>(y)};
                (mask.at(x, y, 0) > 0.5f ? foreground : background).push_back(ref);
            }
        }
    }
    if (foreground.empty()) foreground.swap(background);

    const int n_rays = config.rays_per_step;
    int n_background = background.empty() ? 0 : static_cast<int>(std::lround(config.background_fraction * n_rays));
    ModelGradients grads(model);
    std::vector<RaySample> batch(static_cast<std::size_t>(n_rays));

    for (int it = 0; it < config.steps_per_cycle; ++it) {
        const std::uint64_t step = model.optimizer.step;
        std::uint64_t rng = mix(config.rng_seed, step);
        for (int r = 0; r < n_rays; ++r) {
            const auto& pool = r < n_background ? background : foreground;
            const PixelRef ref = pool[splitmix64(rng) % pool.size()];
            const FrameRecord& rec = ds.frame(ref.frame);
            RaySample& s = batch[static_cast<std::size_t>(r)];
            s.ray = pixel_ray(cameras[ref.frame], rec.pose, ref.x, ref.y);
            s.expression = rec.expression;
            const float* px = data.images[ref.frame].pixel(ref.x, ref.y);
            s.target = Eigen::Vector3d(px[0], px[1], px[2]);
            s.ray_id = static_cast<std::uint64_t>(r);
        }

        grads.zero();
        const RenderOptions opts{config.samples_per_ray, mix(config.rng_seed ^ 0xA5A5A5A5ull, step)};
        const double loss = accumulate_loss_and_grad(model, batch, opts, grads);
        if (!std::isfinite(loss)) {
            std::ostringstream msg;
            msg << "training diverged at step " << step << ": loss = " << loss;
            throw Error(msg.str());
        }
        if (log) log->losses.push_back(loss);

        model.optimizer.step = step + 1;
        const double t = static_cast<double>(model.optimizer.step);
        const double lr = config.learning_rate;
        const double basis_lr = config.deformation_learning_rate;
        const double bias1 = 1.0 - std::pow(config.beta1, t);
        const double bias2 = 1.0 - std::pow(config.beta2, t);
        double* m = model.optimizer.first_moment.data();
        double* v = model.optimizer.second_moment.data();
        adam_update(model.grid.density_raw, grads.density, m, v, config, lr, bias1, bias2);
        m += grads.density.size();
        v += grads.density.size();
        adam_update(model.grid.color_raw, grads.color, m, v, config, lr, bias1, bias2);
        m += grads.color.size();
        v += grads.color.size();
        adam_update(model.basis.weights, grads.basis, m, v, config, basis_lr, bias1, bias2);
    }
    check_finite(model);
    return model;
}

}  // namespace avatarforge
