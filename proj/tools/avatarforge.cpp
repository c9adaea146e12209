// Command-line front end: full runs plus the individual stages.

#include "avatarforge/avatar.hpp"
#include "avatarforge/dataset.hpp"
#include "avatarforge/editor.hpp"
#include "avatarforge/guides.hpp"
#include "avatarforge/metrics.hpp"
#include "avatarforge/pipeline.hpp"
#include "avatarforge/stylize.hpp"
#include "avatarforge/toy_scene.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace avatarforge;

namespace {

std::vector<double> parse_list(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            out.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw Error("invalid number '" + item + "' in list '" + text + "'");
        }
    }
    return out;
}

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << text << '\n';
}

Image positional_preview(const Image& positional) {
    Image out(positional.width(), positional.height(), 3);
    for (int y = 0; y < out.height(); ++y) {
        for (int x = 0; x < out.width(); ++x) {
            out.at(x, y, 0) = positional.at(x, y, 0);
            out.at(x, y, 1) = positional.at(x, y, 1);
        }
    }
    clamp01(out);
    return out;
}

void dump_guides(const FrameDataset& ds, std::size_t exemplar, const std::vector<Image>& images,
                 const std::vector<Image>& masks, const GuideWeights& weights, const fs::path& dir) {
    fs::create_directories(dir);
    const FrameView src{ds.frame(exemplar), images[exemplar], masks[exemplar]};
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const GuideStack g = build_guides(src, {ds.frame(i), images[i], masks[i]}, weights);
        const std::string stem = frame_stem(ds.frame(i).index);
        write_png(dir / (stem + "_appearance.png"), g.appearance_tgt);
        write_png(dir / (stem + "_positional.png"), positional_preview(g.positional_tgt));
        write_png(dir / (stem + "_segmentation.png"), g.seg_tgt);
    }
    write_png(dir / "exemplar_appearance.png", src.image);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Instruction-driven stylisation of deformable head avatars"};
    app.require_subcommand(1);

    // run
    auto* run = app.add_subcommand("run", "Edit one exemplar, then alternate propagation and avatar training");
    std::string run_dataset, run_instruction, run_editor, run_mode, run_out, run_config;
    std::optional<int> run_cycles;
    std::optional<std::uint64_t> run_seed;
    std::optional<std::size_t> run_exemplar;
    std::vector<int> run_lips;
    run->add_option("--dataset", run_dataset, "Dataset directory")->required();
    run->add_option("--instruction", run_instruction, "Editing instruction")->required();
    run->add_option("--editor", run_editor, "mock:<kind> or http://host:port");
    run->add_option("--cycles", run_cycles, "Dataset update cycles");
    run->add_option("--mode", run_mode, "full | one-seed-once | ebsynth-once");
    run->add_option("--seed", run_seed, "Root seed");
    run->add_option("--out", run_out, "Output directory")->required();
    run->add_option("--config", run_config, "JSON configuration file");
    run->add_option("--exemplar", run_exemplar, "Exemplar frame position (overrides selection)");
    run->add_option("--lip-landmarks", run_lips, "Upper and lower lip landmark indices")->expected(2);

    // select-exemplar
    auto* sel = app.add_subcommand("select-exemplar", "Print the frame position with the widest mouth opening");
    std::string sel_dataset;
    std::vector<int> sel_lips;
    sel->add_option("--dataset", sel_dataset, "Dataset directory")->required();
    sel->add_option("--lip-landmarks", sel_lips, "Upper and lower lip landmark indices")->expected(2)->required();

    // stylize
    auto* sty = app.add_subcommand("stylize", "Propagate an edited exemplar to every frame");
    std::string sty_dataset, sty_style, sty_out, sty_config, sty_dump;
    std::size_t sty_exemplar = 0;
    std::uint64_t sty_seed = 0;
    sty->add_option("--dataset", sty_dataset, "Dataset directory")->required();
    sty->add_option("--exemplar", sty_exemplar, "Exemplar frame position")->required();
    sty->add_option("--style", sty_style, "Edited exemplar PNG")->required();
    sty->add_option("--out", sty_out, "Output directory")->required();
    sty->add_option("--seed", sty_seed, "Synthesis seed");
    sty->add_option("--config", sty_config, "JSON configuration file (synthesis and guide weights)");
    sty->add_option("--dump-guides", sty_dump, "Also write guide channels as PNGs to this directory");

    // train
    auto* trn = app.add_subcommand("train", "Fit an avatar to a dataset");
    std::string trn_dataset, trn_out, trn_resume, trn_config;
    std::optional<int> trn_steps, trn_rays, trn_samples;
    std::uint64_t trn_seed = 0;
    trn->add_option("--dataset", trn_dataset, "Dataset directory")->required();
    trn->add_option("--out", trn_out, "Checkpoint to write")->required();
    trn->add_option("--resume-from", trn_resume, "Continue from this checkpoint");
    trn->add_option("--config", trn_config, "JSON configuration file (training and avatar sections)");
    trn->add_option("--steps", trn_steps, "Optimisation steps");
    trn->add_option("--rays", trn_rays, "Rays per step");
    trn->add_option("--samples", trn_samples, "Samples per ray");
    trn->add_option("--seed", trn_seed, "Ray sampling seed");

    // render
    auto* ren = app.add_subcommand("render", "Render a checkpoint at a dataset frame's camera");
    std::string ren_model, ren_dataset, ren_out, ren_expression;
    std::size_t ren_frame = 0;
    int ren_samples = 96, ren_width = 0, ren_height = 0;
    ren->add_option("--model", ren_model, "Checkpoint")->required();
    ren->add_option("--dataset", ren_dataset, "Dataset providing intrinsics and poses")->required();
    ren->add_option("--pose-from-frame", ren_frame, "Frame position whose pose is used")->required();
    ren->add_option("--expression", ren_expression, "Comma-separated coefficients (default: the frame's)");
    ren->add_option("--samples", ren_samples, "Samples per ray");
    ren->add_option("--width", ren_width, "Output width (default: dataset)");
    ren->add_option("--height", ren_height, "Output height (default: dataset)");
    ren->add_option("--out", ren_out, "Output PNG")->required();

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "Sharpness, PSNR and temporal consistency of a frame set");
    std::string ev_frames, ev_reference, ev_out, ev_csv;
    ev->add_option("--frames", ev_frames, "Dataset directory holding the frames to score")->required();
    ev->add_option("--reference", ev_reference, "Dataset directory with reference frames for PSNR");
    ev->add_option("--out", ev_out, "JSON report path (default: stdout)");
    ev->add_option("--csv", ev_csv, "Per-frame CSV path");

    // make-toy
    auto* toy = app.add_subcommand("make-toy", "Write the synthetic deformable test scene as a dataset");
    std::string toy_out;
    ToySceneOptions toy_options;
    toy->add_option("--out", toy_out, "Dataset directory")->required();
    toy->add_option("--frames", toy_options.frames, "Training frames");
    toy->add_option("--size", toy_options.width, "Square image size");
    toy->add_flag("--static", toy_options.static_scene, "Freeze pose and expression");
    toy->add_option("--seed", toy_options.seed, "Scene seed");

    // mock-editor-server
    auto* srv = app.add_subcommand("mock-editor-server", "Serve a mock editor over the HTTP edit protocol");
    std::string srv_mock = "identity", srv_host = "127.0.0.1";
    int srv_port = 8765;
    srv->add_option("--mock", srv_mock, "identity | sepia | posterize:K [:noise=S]");
    srv->add_option("--host", srv_host, "Bind address");
    srv->add_option("--port", srv_port, "Port");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            PipelineConfig config = run_config.empty() ? PipelineConfig{} : load_pipeline_config(run_config);
            if (!run_editor.empty()) config.editor = run_editor;
            if (run_cycles) config.cycles = *run_cycles;
            if (!run_mode.empty()) config.mode = parse_pipeline_mode(run_mode);
            if (run_seed) config.seed = run_seed;
            if (run_exemplar) config.exemplar_override = run_exemplar;
            if (run_lips.size() == 2) config.lip_landmarks = std::pair{run_lips[0], run_lips[1]};
            const PipelineResult result = run_pipeline(run_dataset, run_instruction, config, run_out);
            std::cout << "exemplar " << result.exemplar << ", " << result.edit_calls << " edit call(s), "
                      << result.cycles.size() << " cycle(s)\n"
                      << "checkpoint " << result.final_checkpoint.string() << "\n"
                      << "metrics " << result.metrics_report.string() << "\n";
        } else if (*sel) {
            const FrameDataset ds = load_dataset(sel_dataset);
            std::cout << select_exemplar(ds, std::pair{sel_lips[0], sel_lips[1]}) << "\n";
        } else if (*sty) {
            const FrameDataset ds = load_dataset(sty_dataset);
            if (sty_exemplar >= ds.size()) throw Error("exemplar position out of range");
            PipelineConfig config = sty_config.empty() ? PipelineConfig{} : load_pipeline_config(sty_config);
            config.synthesis.rng_seed = sty_seed;
            const auto masks = ds.load_masks();
            std::vector<Image> targets;
            for (std::size_t i = 0; i < ds.size(); ++i) targets.push_back(masked(ds.load_image(i), masks[i], kWhite));
            const Image style = to_rgb(read_png(sty_style));
            if (!sty_dump.empty()) dump_guides(ds, sty_exemplar, targets, masks, config.guide_weights, sty_dump);
            const auto frames =
                propagate_sequence(ds, sty_exemplar, style, targets, masks, config.synthesis, config.guide_weights);
            fs::create_directories(sty_out);
            for (std::size_t i = 0; i < ds.size(); ++i) {
                write_png(fs::path(sty_out) / (frame_stem(ds.frame(i).index) + ".png"), frames[i]);
            }
            std::cout << "wrote " << frames.size() << " frames to " << sty_out << "\n";
        } else if (*trn) {
            const FrameDataset ds = load_dataset(trn_dataset);
            PipelineConfig config = trn_config.empty() ? PipelineConfig{} : load_pipeline_config(trn_config);
            TrainConfig tc = config.training;
            if (trn_steps) tc.steps_per_cycle = *trn_steps;
            if (trn_rays) tc.rays_per_step = *trn_rays;
            if (trn_samples) tc.samples_per_ray = *trn_samples;
            tc.rng_seed = trn_seed;
            const auto images = ds.load_images();
            const auto masks = ds.load_masks();
            AvatarModel model;
            const bool resume = !trn_resume.empty();
            if (resume) {
                model = load_checkpoint(trn_resume);
            } else {
                AvatarShape shape = config.avatar;
                shape.expression_size = ds.expression_size();
                model = make_avatar(shape);
            }
            TrainLog log;
            model = train(std::move(model), {ds, images, masks}, tc, resume, &log);
            save_checkpoint(trn_out, model);
            if (!log.losses.empty()) std::cout << "final loss " << log.losses.back() << "\n";
        } else if (*ren) {
            const AvatarModel model = load_checkpoint(ren_model);
            const FrameDataset ds = load_dataset(ren_dataset);
            if (ren_frame >= ds.size()) throw Error("frame position out of range");
            Eigen::VectorXd e = ds.frame(ren_frame).expression;
            if (!ren_expression.empty()) {
                const auto values = parse_list(ren_expression);
                if (static_cast<int>(values.size()) != model.basis.count) {
                    throw Error("expression needs " + std::to_string(model.basis.count) + " coefficients");
                }
                e = Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
            }
            const int w = ren_width > 0 ? ren_width : ds.intrinsics().width;
            const int h = ren_height > 0 ? ren_height : ds.intrinsics().height;
            RenderOptions options;
            options.samples_per_ray = ren_samples;
            write_png(ren_out, render_image(model, ds.intrinsics(), ds.frame(ren_frame).pose, e, w, h, options));
        } else if (*ev) {
            const FrameDataset ds = load_dataset(ev_frames);
            std::vector<std::vector<Eigen::Vector2d>> landmarks;
            for (const auto& f : ds.frames()) landmarks.push_back(f.landmarks);
            const auto frames = ds.load_images();
            const auto masks = ds.load_masks();
            std::vector<Image> refs;
            if (!ev_reference.empty()) {
                const FrameDataset ref = load_dataset(ev_reference);
                if (ref.size() != ds.size()) throw Error("reference set has a different frame count");
                refs = ref.load_images();
            }
            const MetricReport report = evaluate_frames(frames, masks, landmarks, refs.empty() ? nullptr : &refs);
            const std::string json = report_to_json(report, ev_frames);
            if (ev_out.empty()) {
                std::cout << json << "\n";
            } else {
                write_file(ev_out, json);
            }
            if (!ev_csv.empty()) write_file(ev_csv, report_to_csv(report));
        } else if (*toy) {
            toy_options.height = toy_options.width;
            const ToyScene scene = make_toy_scene(toy_options);
            const FrameDataset ds = write_toy_dataset(toy_out, scene, toy_options.fps);
            std::cout << "wrote " << ds.size() << " frames; lip landmarks " << scene.lip_upper << " "
                      << scene.lip_lower << "\n";
        } else if (*srv) {
            const MockSpec spec = parse_mock_spec(srv_mock);
            EditServer server([spec](const EditRequest& r) { return edit_mock(spec, r).image; });
            const int port = server.bind(srv_host, srv_port);
            std::cout << "serving mock:" << spec.to_string() << " on http://" << srv_host << ":" << port << std::endl;
            server.listen();
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
