#pragma once

// Dataset indexing, clip windows and the synthetic moving-blob generator.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "salfom/encoder.hpp"
#include "salfom/image_io.hpp"
#include "salfom/maps.hpp"

namespace salfom::data {

enum class Split { train, val, test };
const char* to_string(Split s);
Split parse_split(const std::string& name);

enum class Layout { dhf1k };

struct VideoEntry {
    std::string video_id;
    std::int64_t frame_count = 0;
    std::vector<std::filesystem::path> frames, maps, fixations;  // maps/fixations empty when unannotated
};

struct DatasetIndex {
    std::filesystem::path root;
    Split split = Split::train;
    std::vector<VideoEntry> videos;
    std::vector<std::string> errors;    // itemized problems; offending videos are dropped
    std::vector<std::string> warnings;

    bool ok() const { return errors.empty(); }
    std::int64_t frame_total() const;
};

// Reads <root>/<split>/<video>/{frames,maps,fixations}.  Annotation counts must
// match the frame count except on the test split, where they may be absent.
DatasetIndex index_dataset(const std::filesystem::path& root, Split split, Layout layout = Layout::dhf1k);

// Source frames for the window ending at `end_frame`.  Slot k (0-based from
// the window start) that falls before frame 0 takes frame window-1-k, clamped
// to the last frame of the video.
std::vector<std::int64_t> window_indices(std::int64_t end_frame, std::int64_t window, std::int64_t video_length);

// Bilinear resize to height x width; pixel values stay in [0, 1].
VideoClip preprocess(const std::vector<image::Image>& frames, std::int64_t height, std::int64_t width,
                     std::vector<std::int64_t> frame_indices = {});

struct TrainingSample {
    std::string video_id;
    std::int64_t frame = 0;  // index of the clip's last frame, the prediction target
    VideoClip clip;
    GroundTruthMap target;   // at the model's output resolution
    FixationMap fixations;   // at the dataset's resolution
};

// Decoded, resized frames and annotations kept in memory.
class FrameStore {
public:
    FrameStore(std::int64_t height, std::int64_t width) : height_(height), width_(width) {}

    std::int64_t height() const { return height_; }
    std::int64_t width() const { return width_; }

    const image::Image& frame(const VideoEntry& video, std::int64_t index);
    // Density resized to the model resolution.
    const GroundTruthMap& density(const VideoEntry& video, std::int64_t index);
    // Density at its stored resolution.
    GroundTruthMap native_density(const VideoEntry& video, std::int64_t index) const;
    FixationMap fixations(const VideoEntry& video, std::int64_t index) const;

    VideoClip clip(const VideoEntry& video, const std::vector<std::int64_t>& indices);

private:
    std::int64_t height_, width_;
    std::map<std::pair<std::string, std::int64_t>, image::Image> frames_;
    std::map<std::pair<std::string, std::int64_t>, GroundTruthMap> densities_;
};

TrainingSample make_window(FrameStore& store, const VideoEntry& video, std::int64_t end_frame,
                           std::int64_t window);

struct Standardization {
    std::array<double, 3> mean{0.5, 0.5, 0.5};
    std::array<double, 3> std{0.25, 0.25, 0.25};
};

// Per-channel RGB mean and population std over every frame of the index.
Standardization compute_standardization(const DatasetIndex& index);

// Contents of <root>/meta.json, if present.
std::optional<nlohmann::json> read_meta(const std::filesystem::path& root);
std::optional<Standardization> meta_standardization(const std::filesystem::path& root);

struct SynthSpec {
    int videos = 2;
    int frames = 20;
    int resolution = 64;
    std::uint64_t seed = 0;
    int fixations_per_frame = 8;
    double noise = 0.03;
};

// Number of validation videos for n generated videos.
int synth_val_count(int videos);

// Writes the dataset layout plus meta.json.  Deterministic per spec.
void synth_dataset(const SynthSpec& spec, const std::filesystem::path& root);

}  // namespace salfom::data
