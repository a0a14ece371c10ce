#pragma once

// Saliency evaluation metrics and report aggregation.
//
// Location metrics (AUC-Judd, shuffled AUC, NSS) score a map against discrete
// fixations; distribution metrics (CC, SIM) against a continuous density map.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "salfom/maps.hpp"

namespace salfom {

struct MetricValue {
    double value = 0.0;
    bool degenerate = false;  // a zero-variance operand forced the value
};

// Mean z-score of S at fixations, population std.  Constant S gives 0 (degenerate).
MetricValue nss(const SaliencyMap& s, const FixationMap& fx);

// ROC area with fixated pixels as positives and all other pixels as negatives.
// Thresholds are the distinct values of S at fixations.  Throws
// UndefinedMetricError when every pixel is fixated.
double auc_judd(const SaliencyMap& s, const FixationMap& fx);

// Negative draws for shuffled AUC: `splits` rows of `count` pool positions,
// sampled with replacement.
std::vector<std::vector<std::size_t>> sample_negative_splits(std::size_t pool_size, std::size_t count,
                                                             int splits, std::uint64_t seed);

// Fixations of `pool` mapped to pixel indices of an height x width map.
std::vector<std::int64_t> pool_indices(const std::vector<FixationMap>& pool, std::int64_t height,
                                       std::int64_t width);

// ROC area of positives over negatives, ties counted as one half.
double roc_area(std::span<const double> positives, std::span<const double> negatives);

// Shuffled AUC: negatives are S at fixations drawn from the pool, one draw of
// fixation_count locations per split, averaged over splits.  Throws
// ConfigError on an empty pool.
double shuffled_auc(const SaliencyMap& s, const FixationMap& fx, std::span<const std::int64_t> pool,
                    std::uint64_t seed, int splits = 100);
double shuffled_auc(const SaliencyMap& s, const FixationMap& fx, const std::vector<FixationMap>& pool,
                    std::uint64_t seed, int splits = 100);

// Pearson correlation.  Zero variance gives 0 (degenerate).
MetricValue cc_metric(const SaliencyMap& s, const GroundTruthMap& g);

// Histogram intersection of the normalized maps.
double sim(const SaliencyMap& s, const GroundTruthMap& g);

struct MetricSet {
    double auc_j = 0.0, s_auc = 0.0, nss = 0.0, cc = 0.0, sim = 0.0;
};

struct FrameRecord {
    std::string video;
    std::int64_t frame = 0;  // 0-based frame index
    MetricSet metrics;
    bool nss_degenerate = false;
    bool cc_degenerate = false;
};

struct VideoSummary {
    std::string video;
    std::int64_t frames = 0;
    MetricSet mean;
};

enum class ShufflePool {
    other_videos,  // falls back to other frames of the same video when only one video exists
    other_frames,
};

struct ShuffleSpec {
    ShufflePool pool = ShufflePool::other_videos;
    int splits = 100;
};

struct MetricsReport {
    std::vector<FrameRecord> frames;
    std::vector<VideoSummary> videos;
    MetricSet dataset;  // mean of per-video means
    std::vector<std::string> errors;
    nlohmann::json settings;

    bool ok() const { return errors.empty() && !frames.empty(); }
};

// Fills per-video and dataset means from `frames`.
void aggregate(MetricsReport& report);

// Scores one frame.  The prediction is resized to the ground-truth size first.
FrameRecord score_frame(const SaliencyMap& prediction, const GroundTruthMap& density,
                        const FixationMap& fixations, std::span<const std::int64_t> pool,
                        std::uint64_t seed, int splits);

// Seed for frame `frame` of the video at position `video` in the sorted split.
std::uint64_t frame_seed(std::uint64_t seed, std::uint64_t video, std::uint64_t frame);

// Scores `<pred_dir>/<video>/NNNNN.png` against `<split_dir>/<video>/{maps,fixations}/NNNNN.png`.
// Frames without ground truth are listed in `errors` and skipped.
MetricsReport evaluate_directory(const std::filesystem::path& pred_dir,
                                 const std::filesystem::path& split_dir, const ShuffleSpec& shuffle,
                                 std::uint64_t seed);

// One JSON object per frame, then one per video, then the dataset summary.
void write_jsonl(std::ostream& os, const MetricsReport& report);
// video,frame,auc_j,s_auc,nss,cc,sim
void write_csv(std::ostream& os, const MetricsReport& report);
void write_summary(std::ostream& os, const MetricsReport& report);

}  // namespace salfom
