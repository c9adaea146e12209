#pragma once

#include "avatarforge/avatar.hpp"
#include "avatarforge/dataset.hpp"
#include "avatarforge/editor.hpp"
#include "avatarforge/guides.hpp"
#include "avatarforge/metrics.hpp"
#include "avatarforge/stylize.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace avatarforge {

enum class PipelineMode {
    full,           // one exemplar edit, `cycles` rounds of propagate + train
    one_seed_once,  // every frame edited independently with one seed, trained once
    ebsynth_once,   // one exemplar edit, a single propagate + train round
};

std::string to_string(PipelineMode mode);
PipelineMode parse_pipeline_mode(const std::string& text);

/// Conditioning defaults forwarded to the exemplar editor.
struct EditSettings {
    double image_guidance = 1.5;
    double text_guidance = 3.5;
    int steps = 100;
};

struct PipelineConfig {
    int cycles = 3;
    PipelineMode mode = PipelineMode::full;
    std::string editor = "mock:identity";
    double edit_timeout_seconds = kDefaultEditTimeout;
    EditSettings edit;
    SynthesisParams synthesis;
    GuideWeights guide_weights;
    TrainConfig training;
    AvatarShape avatar;
    std::optional<std::size_t> exemplar_override;
    /// Upper and lower lip landmark indices used for exemplar selection.
    std::optional<std::pair<int, int>> lip_landmarks;
    bool resume_training = true;
    /// Root of every random stream; required.
    std::optional<std::uint64_t> seed;
    int preview_views = 5;

    void validate() const;
    /// Number of propagate/train cycles the mode actually runs.
    int effective_cycles() const { return mode == PipelineMode::full ? cycles : 1; }
};

std::string pipeline_config_to_json(const PipelineConfig& config);
/// Fields absent from the JSON keep their defaults.
PipelineConfig pipeline_config_from_json(const std::string& text);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

/// Deterministic child seed for a named random stream.
std::uint64_t derive_seed(std::uint64_t root, const std::string& stream, std::uint64_t index = 0);

/// Frame position with the widest vertical lip-landmark gap (mouth most open);
/// ties go to the lowest position. An override wins outright.
std::size_t select_exemplar(const FrameDataset& dataset, std::optional<std::pair<int, int>> lip_landmarks,
                            std::optional<std::size_t> exemplar_override = std::nullopt);

struct PipelineState {
    const FrameDataset& dataset;
    std::vector<Image> masks;
    std::vector<Image> originals;  // masked over white
    std::size_t exemplar = 0;
    Image edited_exemplar;
    AvatarModel model;
};

struct CycleArtifacts {
    int cycle = 0;
    std::filesystem::path edited_dir;
    std::filesystem::path checkpoint;
    std::filesystem::path metrics_report;
    std::vector<Image> edited;
    std::vector<Image> renders;
    MetricReport edited_metrics;
    MetricReport render_metrics;
};

/// One dataset update: stylise targets (original frames at cycle 0, renders of
/// the current avatar afterwards) from the fixed edited exemplar, persist the
/// edited set, then train on it. Artifacts go to out/cycle<t>/.
CycleArtifacts run_cycle(PipelineState& state, int cycle, const PipelineConfig& config,
                         const std::filesystem::path& out);

struct PipelineResult {
    std::size_t exemplar = 0;
    int edit_calls = 0;
    std::filesystem::path final_checkpoint;
    std::filesystem::path metrics_report;
    std::vector<std::filesystem::path> previews;
    std::vector<CycleArtifacts> cycles;
    AvatarModel model;
};

/// End-to-end run. `editor` overrides config.editor when given.
PipelineResult run_pipeline(const std::filesystem::path& dataset_root, const std::string& instruction,
                            const PipelineConfig& config, const std::filesystem::path& out,
                            Editor* editor = nullptr);

}  // namespace avatarforge
