#include "avatarforge/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace avatarforge {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(PipelineMode mode) {
    switch (mode) {
        case PipelineMode::full: return "full";
        case PipelineMode::one_seed_once: return "one-seed-once";
        case PipelineMode::ebsynth_once: return "ebsynth-once";
    }
    return "full";
}

PipelineMode parse_pipeline_mode(const std::string& text) {
    std::string t = text;
    for (auto& c : t) {
        if (c == '_') c = '-';
    }
    if (t == "full") return PipelineMode::full;
    if (t == "one-seed-once") return PipelineMode::one_seed_once;
    if (t == "ebsynth-once") return PipelineMode::ebsynth_once;
    throw Error("unknown pipeline mode '" + text + "' (expected full, one-seed-once or ebsynth-once)");
}

void PipelineConfig::validate() const {
    if (cycles < 1) throw Error("pipeline config: cycles must be >= 1, got " + std::to_string(cycles));
    if (!seed) throw Error("pipeline config: a root seed is required");
    if (editor.empty()) throw Error("pipeline config: editor is required");
    if (!(edit_timeout_seconds > 0.0)) throw Error("pipeline config: edit timeout must be positive");
    if (!(edit.image_guidance > 0.0) || !(edit.text_guidance > 0.0)) {
        throw Error("pipeline config: guidance scales must be positive");
    }
    if (edit.steps < 1) throw Error("pipeline config: edit steps must be >= 1");
    if (preview_views < 0) throw Error("pipeline config: preview_views must be >= 0");
    if (avatar.grid_resolution < 2 || avatar.basis_resolution < 2) {
        throw Error("pipeline config: grid resolutions must be >= 2");
    }
    synthesis.validate();
    guide_weights.validate();
    training.validate();
}

std::string pipeline_config_to_json(const PipelineConfig& c) {
    json j;
    j["cycles"] = c.cycles;
    j["mode"] = to_string(c.mode);
    j["editor"] = c.editor;
    j["edit_timeout_seconds"] = c.edit_timeout_seconds;
    j["edit"] = {{"image_guidance", c.edit.image_guidance},
                 {"text_guidance", c.edit.text_guidance},
                 {"steps", c.edit.steps}};
    j["synthesis"] = {{"patch_size", c.synthesis.patch_size},
                      {"pyramid_min_dim", c.synthesis.pyramid_min_dim},
                      {"pyramid_factor", c.synthesis.pyramid_factor},
                      {"pm_iterations", c.synthesis.pm_iterations},
                      {"em_rounds", c.synthesis.em_rounds},
                      {"random_search_radius_decay", c.synthesis.random_search_radius_decay}};
    j["guide_weights"] = {{"appearance", c.guide_weights.appearance},
                          {"positional", c.guide_weights.positional},
                          {"segmentation", c.guide_weights.segmentation},
                          {"style", c.guide_weights.style}};
    j["training"] = {{"rays_per_step", c.training.rays_per_step},
                     {"samples_per_ray", c.training.samples_per_ray},
                     {"learning_rate", c.training.learning_rate},
                     {"deformation_learning_rate", c.training.deformation_learning_rate},
                     {"beta1", c.training.beta1},
                     {"beta2", c.training.beta2},
                     {"epsilon", c.training.epsilon},
                     {"steps_per_cycle", c.training.steps_per_cycle},
                     {"background_fraction", c.training.background_fraction}};
    j["avatar"] = {{"grid_resolution", c.avatar.grid_resolution}, {"basis_resolution", c.avatar.basis_resolution}};
    j["exemplar_override"] = c.exemplar_override ? json(*c.exemplar_override) : json(nullptr);
    j["lip_landmarks"] = c.lip_landmarks ? json::array({c.lip_landmarks->first, c.lip_landmarks->second})
                                         : json(nullptr);
    j["resume_training"] = c.resume_training;
    j["seed"] = c.seed ? json(*c.seed) : json(nullptr);
    j["preview_views"] = c.preview_views;
    return j.dump(2);
}

namespace {

template <typename T>
void read_field(const json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key) || j.at(key).is_null()) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw Error("pipeline config: field '" + where + key + "': " + e.what());
    }
}

}  // namespace

PipelineConfig pipeline_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(std::string("pipeline config: invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw Error("pipeline config: top level must be an object");

    PipelineConfig c;
    read_field(j, "cycles", c.cycles, "");
    if (j.contains("mode")) c.mode = parse_pipeline_mode(j.at("mode").get<std::string>());
    read_field(j, "editor", c.editor, "");
    read_field(j, "edit_timeout_seconds", c.edit_timeout_seconds, "");
    if (j.contains("edit")) {
        const auto& e = j.at("edit");
        read_field(e, "image_guidance", c.edit.image_guidance, "edit.");
        read_field(e, "text_guidance", c.edit.text_guidance, "edit.");
        read_field(e, "steps", c.edit.steps, "edit.");
    }
    if (j.contains("synthesis")) {
        const auto& s = j.at("synthesis");
        read_field(s, "patch_size", c.synthesis.patch_size, "synthesis.");
        read_field(s, "pyramid_min_dim", c.synthesis.pyramid_min_dim, "synthesis.");
        read_field(s, "pyramid_factor", c.synthesis.pyramid_factor, "synthesis.");
        read_field(s, "pm_iterations", c.synthesis.pm_iterations, "synthesis.");
        read_field(s, "em_rounds", c.synthesis.em_rounds, "synthesis.");
        read_field(s, "random_search_radius_decay", c.synthesis.random_search_radius_decay, "synthesis.");
    }
    if (j.contains("guide_weights")) {
        const auto& g = j.at("guide_weights");
        read_field(g, "appearance", c.guide_weights.appearance, "guide_weights.");
        read_field(g, "positional", c.guide_weights.positional, "guide_weights.");
        read_field(g, "segmentation", c.guide_weights.segmentation, "guide_weights.");
        read_field(g, "style", c.guide_weights.style, "guide_weights.");
    }
    if (j.contains("training")) {
        const auto& t = j.at("training");
        read_field(t, "rays_per_step", c.training.rays_per_step, "training.");
        read_field(t, "samples_per_ray", c.training.samples_per_ray, "training.");
        read_field(t, "learning_rate", c.training.learning_rate, "training.");
        read_field(t, "deformation_learning_rate", c.training.deformation_learning_rate, "training.");
        read_field(t, "beta1", c.training.beta1, "training.");
        read_field(t, "beta2", c.training.beta2, "training.");
        read_field(t, "epsilon", c.training.epsilon, "training.");
        read_field(t, "steps_per_cycle", c.training.steps_per_cycle, "training.");
        read_field(t, "background_fraction", c.training.background_fraction, "training.");
    }
    if (j.contains("avatar")) {
        const auto& a = j.at("avatar");
        read_field(a, "grid_resolution", c.avatar.grid_resolution, "avatar.");
        read_field(a, "basis_resolution", c.avatar.basis_resolution, "avatar.");
    }
    if (j.contains("exemplar_override") && !j.at("exemplar_override").is_null()) {
        c.exemplar_override = j.at("exemplar_override").get<std::size_t>();
    }
    if (j.contains("lip_landmarks") && !j.at("lip_landmarks").is_null()) {
        const auto& l = j.at("lip_landmarks");
        if (!l.is_array() || l.size() != 2) throw Error("pipeline config: lip_landmarks must be [upper, lower]");
        c.lip_landmarks = std::pair{l[0].get<int>(), l[1].get<int>()};
    }
    read_field(j, "resume_training", c.resume_training, "");
    if (j.contains("seed") && !j.at("seed").is_null()) c.seed = j.at("seed").get<std::uint64_t>();
    read_field(j, "preview_views", c.preview_views, "");
    return c;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open pipeline config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return pipeline_config_from_json(ss.str());
}

std::uint64_t derive_seed(std::uint64_t root, const std::string& stream, std::uint64_t index) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : stream) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    std::uint64_t z = root ^ h ^ (index * 0xD1B54A32D192ED03ull);
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

std::size_t select_exemplar(const FrameDataset& dataset, std::optional<std::pair<int, int>> lip_landmarks,
                            std::optional<std::size_t> exemplar_override) {
    if (dataset.size() == 0) throw Error("select_exemplar: empty dataset");
    if (exemplar_override) {
        if (*exemplar_override >= dataset.size()) {
            throw Error("exemplar override " + std::to_string(*exemplar_override) + " out of range for " +
                        std::to_string(dataset.size()) + " frames");
        }
        return *exemplar_override;
    }
    if (!lip_landmarks) throw Error("select_exemplar: upper/lower lip landmark indices are not configured");
    const auto [upper, lower] = *lip_landmarks;
    const int count = dataset.landmark_count();
    if (upper < 0 || lower < 0 || upper >= count || lower >= count) {
        throw Error("select_exemplar: lip landmark indices out of range for " + std::to_string(count) + " landmarks");
    }
    std::size_t best = 0;
    double best_gap = -1.0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const auto& lms = dataset.frame(i).landmarks;
        const double gap = std::abs(lms[static_cast<std::size_t>(lower)].y() - lms[static_cast<std::size_t>(upper)].y());
        if (gap > best_gap) {
            best_gap = gap;
            best = i;
        }
    }
    return best;
}

namespace {

template <typename F>
auto run_stage(int cycle, const char* stage, F&& body) {
    try {
        return body();
    } catch (const std::exception& e) {
        throw Error("cycle " + std::to_string(cycle) + " stage '" + stage + "' failed: " + e.what());
    }
}

std::vector<std::vector<Eigen::Vector2d>> all_landmarks(const FrameDataset& dataset) {
    std::vector<std::vector<Eigen::Vector2d>> out;
    out.reserve(dataset.size());
    for (const auto& f : dataset.frames()) out.push_back(f.landmarks);
    return out;
}

RenderOptions eval_render_options(const PipelineConfig& config) {
    RenderOptions options;
    options.samples_per_ray = config.training.samples_per_ray;
    return options;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << text << '\n';
    if (!out) throw Error("failed writing " + path.string());
}

json cycle_summary(const CycleArtifacts& a) {
    return {{"cycle", a.cycle},
            {"edited_dir", a.edited_dir.string()},
            {"checkpoint", a.checkpoint.string()},
            {"metrics_report", a.metrics_report.string()},
            {"edited_temporal_consistency", a.edited_metrics.temporal_consistency},
            {"edited_mean_sharpness", a.edited_metrics.mean_sharpness},
            {"render_temporal_consistency", a.render_metrics.temporal_consistency},
            {"render_mean_sharpness", a.render_metrics.mean_sharpness},
            {"render_mean_psnr_vs_edited", a.render_metrics.mean_psnr ? json(*a.render_metrics.mean_psnr) : json()}};
}

// Trains on an edited set, then persists checkpoint, renders' metrics and the report.
void finish_cycle(PipelineState& state, CycleArtifacts& a, const PipelineConfig& config, const fs::path& cycle_dir,
                  bool resume) {
    const auto landmarks = all_landmarks(state.dataset);
    a.edited_metrics = run_stage(a.cycle, "evaluate-edited",
                                 [&] { return evaluate_frames(a.edited, state.masks, landmarks); });

    TrainConfig training = config.training;
    training.rng_seed = derive_seed(*config.seed, "train", static_cast<std::uint64_t>(a.cycle));
    const TrainingSet data{state.dataset, a.edited, state.masks};
    state.model = run_stage(a.cycle, "train", [&] { return train(std::move(state.model), data, training, resume); });

    a.checkpoint = cycle_dir / "model.ckpt";
    run_stage(a.cycle, "checkpoint", [&] {
        save_checkpoint(a.checkpoint, state.model);
        return 0;
    });

    a.renders = run_stage(a.cycle, "render", [&] {
        return render_dataset(state.model, state.dataset, 0, 0, eval_render_options(config));
    });
    a.render_metrics = run_stage(a.cycle, "evaluate-renders",
                                 [&] { return evaluate_frames(a.renders, state.masks, landmarks, &a.edited); });

    a.metrics_report = cycle_dir / "metrics.json";
    json report{{"cycle", a.cycle},
                {"edited", json::parse(report_to_json(a.edited_metrics, "edited"))},
                {"renders", json::parse(report_to_json(a.render_metrics, "renders"))}};
    write_text(a.metrics_report, report.dump(2));
}

}  // namespace

CycleArtifacts run_cycle(PipelineState& state, int cycle, const PipelineConfig& config, const fs::path& out) {
    if (cycle < 0) throw Error("cycle index must be non-negative");
    if (!config.seed) throw Error("pipeline config: a root seed is required");
    if (cycle >= 1 && state.model.grid.resolution == 0) throw Error("cycle " + std::to_string(cycle) + " needs a trained model");

    CycleArtifacts a;
    a.cycle = cycle;
    const fs::path cycle_dir = out / ("cycle" + std::to_string(cycle));
    fs::create_directories(cycle_dir);

    const std::vector<Image> targets =
        cycle == 0 ? state.originals : run_stage(cycle, "render-targets", [&] {
            return render_dataset(state.model, state.dataset, 0, 0, eval_render_options(config));
        });

    SynthesisParams synthesis = config.synthesis;
    synthesis.rng_seed = derive_seed(*config.seed, "synthesis", static_cast<std::uint64_t>(cycle));
    a.edited = run_stage(cycle, "propagate", [&] {
        return propagate_sequence(state.dataset, state.exemplar, state.edited_exemplar, targets, state.masks, synthesis,
                                  config.guide_weights);
    });
    a.edited_dir = run_stage(cycle, "save-edited", [&] { return save_frameset(state.dataset, a.edited, cycle_dir, "edited"); });

    if (cycle == 0 && state.model.grid.resolution == 0) {
        AvatarShape shape = config.avatar;
        shape.expression_size = state.dataset.expression_size();
        state.model = make_avatar(shape);
    }
    finish_cycle(state, a, config, cycle_dir, config.resume_training && cycle >= 1);
    return a;
}

namespace {

Eigen::Matrix4d rotate_about_vertical(const Eigen::Matrix4d& pose, double angle) {
    Eigen::Matrix4d r = Eigen::Matrix4d::Identity();
    r(0, 0) = std::cos(angle);
    r(0, 2) = std::sin(angle);
    r(2, 0) = -std::sin(angle);
    r(2, 2) = std::cos(angle);
    return r * pose;
}

std::vector<fs::path> write_previews(const AvatarModel& model, const FrameDataset& dataset, std::size_t exemplar,
                                     const PipelineConfig& config, const fs::path& dir) {
    fs::create_directories(dir);
    std::vector<fs::path> paths;
    const auto& ex = dataset.frame(exemplar);
    const auto& intr = dataset.intrinsics();
    const RenderOptions options = eval_render_options(config);

    const int views = config.preview_views;
    constexpr double kOrbitHalfAngle = 40.0 * std::numbers::pi / 180.0;
    for (int v = 0; v < views; ++v) {
        const double angle = views == 1 ? 0.0 : -kOrbitHalfAngle + 2.0 * kOrbitHalfAngle * v / (views - 1);
        const Image img = render_image(model, intr, rotate_about_vertical(ex.pose, angle), ex.expression, intr.width,
                                       intr.height, options);
        paths.push_back(dir / ("orbit_" + std::to_string(v) + ".png"));
        write_png(paths.back(), img);
    }

    for (int k = 0; k < dataset.expression_size(); ++k) {
        double lo = ex.expression[k], hi = lo;
        for (const auto& f : dataset.frames()) {
            lo = std::min(lo, f.expression[k]);
            hi = std::max(hi, f.expression[k]);
        }
        for (int s = 0; s < 3; ++s) {
            Eigen::VectorXd e = ex.expression;
            e[k] = lo + (hi - lo) * s / 2.0;
            const Image img = render_image(model, intr, ex.pose, e, intr.width, intr.height, options);
            paths.push_back(dir / ("expression_" + std::to_string(k) + "_" + std::to_string(s) + ".png"));
            write_png(paths.back(), img);
        }
    }
    return paths;
}

EditRequest make_request(const Image& image, const std::string& instruction, const PipelineConfig& config) {
    EditRequest req;
    req.image = image;
    req.instruction = instruction;
    req.image_guidance = config.edit.image_guidance;
    req.text_guidance = config.edit.text_guidance;
    req.steps = config.edit.steps;
    req.seed = derive_seed(*config.seed, "edit");
    return req;
}

}  // namespace

PipelineResult run_pipeline(const fs::path& dataset_root, const std::string& instruction, const PipelineConfig& config,
                            const fs::path& out, Editor* editor) {
    config.validate();
    const FrameDataset dataset = load_dataset(dataset_root);
    if (dataset.landmark_count() == 0) throw Error("pipeline needs landmarks in the dataset");

    std::shared_ptr<Editor> owned;
    if (!editor) {
        owned = make_editor(config.editor, config.edit_timeout_seconds);
        editor = owned.get();
    }
    fs::create_directories(out);

    PipelineState state{dataset, dataset.load_masks(), {}, 0, {}, {}};
    state.originals.reserve(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) state.originals.push_back(masked(dataset.load_image(i), state.masks[i], kWhite));
    state.exemplar = select_exemplar(dataset, config.lip_landmarks, config.exemplar_override);

    PipelineResult result;
    result.exemplar = state.exemplar;

    if (config.mode == PipelineMode::one_seed_once) {
        CycleArtifacts a;
        a.cycle = 0;
        const fs::path cycle_dir = out / "cycle0";
        fs::create_directories(cycle_dir);
        a.edited.reserve(dataset.size());
        for (std::size_t i = 0; i < dataset.size(); ++i) {
            a.edited.push_back(run_stage(0, "edit", [&] {
                return editor->edit(make_request(state.originals[i], instruction, config)).image;
            }));
            ++result.edit_calls;
        }
        state.edited_exemplar = a.edited[state.exemplar];
        a.edited_dir = run_stage(0, "save-edited", [&] { return save_frameset(dataset, a.edited, cycle_dir, "edited"); });
        AvatarShape shape = config.avatar;
        shape.expression_size = dataset.expression_size();
        state.model = make_avatar(shape);
        finish_cycle(state, a, config, cycle_dir, false);
        result.cycles.push_back(std::move(a));
    } else {
        state.edited_exemplar = run_stage(0, "edit", [&] {
            return editor->edit(make_request(state.originals[state.exemplar], instruction, config)).image;
        });
        ++result.edit_calls;
        if (!state.edited_exemplar.same_size(state.originals[state.exemplar])) {
            throw Error("edited exemplar resolution does not match the dataset");
        }
        write_png(out / "exemplar_edited.png", state.edited_exemplar);
        for (int t = 0; t < config.effective_cycles(); ++t) result.cycles.push_back(run_cycle(state, t, config, out));
    }

    result.final_checkpoint = out / "final.ckpt";
    save_checkpoint(result.final_checkpoint, state.model);
    result.previews = write_previews(state.model, dataset, state.exemplar, config, out / "previews");

    json cycles = json::array();
    for (const auto& a : result.cycles) cycles.push_back(cycle_summary(a));
    const json report{{"mode", to_string(config.mode)},
                      {"cycles_run", result.cycles.size()},
                      {"exemplar", state.exemplar},
                      {"exemplar_frame_index", dataset.frame(state.exemplar).index},
                      {"edit_calls", result.edit_calls},
                      {"editor", editor->describe()},
                      {"instruction", instruction},
                      {"final_checkpoint", result.final_checkpoint.string()},
                      {"final_render_temporal_consistency", result.cycles.back().render_metrics.temporal_consistency},
                      {"per_cycle", cycles}};
    result.metrics_report = out / "metrics.json";
    write_text(result.metrics_report, report.dump(2));
    result.model = std::move(state.model);
    return result;
}

}  // namespace avatarforge
