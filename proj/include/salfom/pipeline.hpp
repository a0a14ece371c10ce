#pragma once

// Training loop, sliding-window inference and the ablation runner.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "salfom/adam.hpp"
#include "salfom/data.hpp"
#include "salfom/metrics.hpp"
#include "salfom/model.hpp"

namespace salfom {

enum class EarlyStopMetric { val_loss, val_cc };

struct TrainConfig {
    AdamConfig adam;            // lr defaults to 1e-5
    int batch_size = 1;         // >1 accumulates gradients over consecutive samples
    int max_steps = 1000;
    int validate_every = 100;
    int patience = 5;           // validations without improvement before stopping
    std::uint64_t seed = 0;
    int val_max_samples = 16;   // evenly spaced validation windows
    bool freeze_encoder = false;
    EarlyStopMetric early_stop = EarlyStopMetric::val_loss;
    // Directory holding per-window feature files to train the decoder on
    // instead of running the encoder (implies a frozen encoder).
    std::optional<std::filesystem::path> feature_dir;
    std::filesystem::path diagnostics_dir = ".";
    int log_every = 10;

    void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
// Reads the keys present in `j` on top of `base`.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

struct StepRecord {
    int step = 0;
    double loss = 0.0, kl = 0.0, cc = 0.0;
    bool cc_skipped = false;
};

struct ValidationRecord {
    int step = 0;
    double loss = 0.0;
    double cc = 0.0;
};

struct TrainResult {
    std::vector<StepRecord> steps;
    std::vector<ValidationRecord> validations;
    int best_step = -1;      // step whose parameters the model holds on return
    int steps_run = 0;
    bool stopped_early = false;
};

using LogFn = std::function<void(const std::string&)>;

// One (video, end frame) training window per frame of every video.
struct SampleRef {
    std::size_t video = 0;
    std::int64_t frame = 0;
};
std::vector<SampleRef> all_windows(const data::DatasetIndex& index);

// Trains in place; the model holds the best-validation parameters on return.
// Without validation videos the training split doubles as validation set.
// A non-finite loss writes a JSON dump into diagnostics_dir and throws NumericError.
TrainResult train(SaliencyModel& model, const data::DatasetIndex& train_set, const data::DatasetIndex* val_set,
                  const TrainConfig& cfg, data::FrameStore& store, const LogFn& log = {});

// Path of the feature file for the window ending at `frame`.
std::filesystem::path feature_path(const std::filesystem::path& dir, const std::string& video, std::int64_t frame);

// Encodes every window of `index` and writes one feature file per window.
void export_window_features(const SaliencyModel& model, const data::DatasetIndex& index, data::FrameStore& store,
                            const std::filesystem::path& dir);

// Supplies the clip for a list of source-frame indices.
using ClipFetcher = std::function<VideoClip(const std::vector<std::int64_t>&)>;

// One map per frame; frame k comes from the window ending at k.
std::vector<SaliencyMap> sliding_window_predict(const SaliencyModel& model, std::int64_t frame_count,
                                                const ClipFetcher& fetch);
std::vector<SaliencyMap> sliding_window_predict(const SaliencyModel& model, data::FrameStore& store,
                                                const data::VideoEntry& video);
// Same, reading encoder features from `feature_dir` instead of frames.
std::vector<SaliencyMap> sliding_window_predict_features(const SaliencyModel& model,
                                                         const std::filesystem::path& feature_dir,
                                                         const data::VideoEntry& video);

// Predicted map as 8-bit gray, min-max rescaled to [0, 255].
std::vector<std::uint8_t> to_gray8(const SaliencyMap& map);

enum class EncoderVariant { toy_default, reduced_frames, imported_features };
const char* to_string(EncoderVariant v);
EncoderVariant parse_encoder_variant(const std::string& name);

struct AblationSpec {
    EncoderVariant encoder = EncoderVariant::toy_default;
    BranchSet branches = BranchSet::all();

    std::string label() const;
};

// Full model, the three single branches and the three pairs.
std::vector<AblationSpec> standard_ablation();

struct AblationConfig {
    ModelConfig model;
    TrainConfig train;
    std::filesystem::path work_dir;  // scratch space for imported-feature variants
    int eval_frames_per_video = 0;   // 0 scores every validation frame
};

struct AblationRow {
    AblationSpec spec;
    std::string label;
    bool ok = false;
    std::string error;
    MetricSet metrics;  // S-AUC left at 0; not part of the comparison
    std::int64_t frames_scored = 0;
    int steps = 0;
    std::int64_t parameters = 0;
};

// Trains and scores every spec on the dataset's train/val splits.  A failing
// variant is reported in its row and does not stop the others.
std::vector<AblationRow> run_ablation(const std::vector<AblationSpec>& specs, const std::filesystem::path& data_root,
                                      const AblationConfig& cfg, const LogFn& log = {});

void write_ablation_table(std::ostream& os, const std::vector<AblationRow>& rows);
nlohmann::json to_json(const std::vector<AblationRow>& rows);

}  // namespace salfom
