#include "salfom/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>

#include "salfom/error.hpp"
#include "salfom/layout.hpp"

namespace salfom::data {

namespace fs = std::filesystem;

const char* to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "train";
}

Split parse_split(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "val") return Split::val;
    if (name == "test") return Split::test;
    throw ConfigError("unknown split '" + name + "' (expected train, val or test)");
}

std::int64_t DatasetIndex::frame_total() const {
    std::int64_t n = 0;
    for (const auto& v : videos) n += v.frame_count;
    return n;
}

namespace {

// Checks that files are numbered 1..n without gaps; returns the paths.
std::vector<fs::path> contiguous(const fs::path& dir, const std::string& video, const char* kind,
                                 std::vector<std::string>& errors) {
    std::vector<fs::path> paths;
    std::int64_t expect = 0;
    for (const auto& [idx, path] : layout::list_frame_files(dir)) {
        while (expect < idx) {
            errors.push_back(video + ": missing " + kind + " " + layout::frame_file_name(expect));
            paths.emplace_back();
            ++expect;
        }
        paths.push_back(path);
        ++expect;
    }
    return paths;
}

}  // namespace

DatasetIndex index_dataset(const fs::path& root, Split split, Layout) {
    DatasetIndex index;
    index.root = root;
    index.split = split;
    const fs::path split_dir = root / to_string(split);
    std::error_code ec;
    if (!fs::is_directory(root, ec)) {
        index.errors.push_back("dataset root does not exist: " + root.string());
        return index;
    }
    const auto names = layout::list_subdirectories(split_dir);
    if (names.empty()) {
        index.warnings.push_back("no videos under " + split_dir.string());
        return index;
    }
    for (const auto& name : names) {
        std::vector<std::string> errors;
        const fs::path vdir = split_dir / name;
        VideoEntry v;
        v.video_id = name;
        v.frames = contiguous(vdir / layout::kFramesDir, name, "frame", errors);
        v.frame_count = static_cast<std::int64_t>(v.frames.size());
        if (v.frame_count == 0) errors.push_back(name + ": no frames");

        const bool annotated = fs::is_directory(vdir / layout::kMapsDir) ||
                               fs::is_directory(vdir / layout::kFixationsDir) || split != Split::test;
        if (annotated) {
            for (const char* kind : {layout::kMapsDir, layout::kFixationsDir}) {
                const std::string label = kind == layout::kMapsDir ? "ground-truth map" : "fixation map";
                auto paths = contiguous(vdir / kind, name, label.c_str(), errors);
                for (auto k = static_cast<std::int64_t>(paths.size()); k < v.frame_count; ++k) {
                    errors.push_back(name + ": missing " + label + " " + layout::frame_file_name(k));
                }
                if (static_cast<std::int64_t>(paths.size()) > v.frame_count) {
                    errors.push_back(name + ": " + std::to_string(paths.size()) + " " + label + "s for " +
                                     std::to_string(v.frame_count) + " frames");
                }
                (kind == layout::kMapsDir ? v.maps : v.fixations) = std::move(paths);
            }
        }
        if (errors.empty()) {
            index.videos.push_back(std::move(v));
        } else {
            index.errors.insert(index.errors.end(), errors.begin(), errors.end());
        }
    }
    return index;
}

std::vector<std::int64_t> window_indices(std::int64_t end_frame, std::int64_t window, std::int64_t video_length) {
    if (video_length < 1) throw PreconditionError("video has no frames");
    if (window < 1) throw PreconditionError("window must hold at least one frame");
    if (end_frame < 0 || end_frame >= video_length) {
        throw PreconditionError("end frame " + std::to_string(end_frame) + " outside video of length " +
                                std::to_string(video_length));
    }
    std::vector<std::int64_t> idx(static_cast<std::size_t>(window));
    for (std::int64_t k = 0; k < window; ++k) {
        const std::int64_t f = end_frame - window + 1 + k;
        idx[static_cast<std::size_t>(k)] = f >= 0 ? f : std::min(window - 1 - k, video_length - 1);
    }
    return idx;
}

VideoClip preprocess(const std::vector<image::Image>& frames, std::int64_t height, std::int64_t width,
                     std::vector<std::int64_t> frame_indices) {
    if (frames.empty()) throw PreconditionError("preprocess needs at least one frame");
    VideoClip clip;
    clip.frames = static_cast<std::int64_t>(frames.size());
    clip.height = height;
    clip.width = width;
    clip.pixels.reserve(static_cast<std::size_t>(clip.frames * height * width * 3));
    for (const auto& f : frames) {
        if (f.channels != 3) throw ShapeError("preprocess expects RGB frames");
        const auto r = image::resize(f, height, width);
        for (double v : r.data) clip.pixels.push_back(std::clamp(v, 0.0, 1.0));
    }
    if (frame_indices.empty()) {
        for (std::int64_t k = 0; k < clip.frames; ++k) frame_indices.push_back(k);
    }
    clip.frame_indices = std::move(frame_indices);
    return clip;
}

const image::Image& FrameStore::frame(const VideoEntry& video, std::int64_t index) {
    const auto key = std::make_pair(video.video_id, index);
    auto it = frames_.find(key);
    if (it != frames_.end()) return it->second;
    if (index < 0 || index >= video.frame_count) throw PreconditionError("frame index out of range");
    auto img = image::resize(image::read_rgb(video.frames[static_cast<std::size_t>(index)]), height_, width_);
    for (double& v : img.data) v = std::clamp(v, 0.0, 1.0);
    return frames_.emplace(key, std::move(img)).first->second;
}

GroundTruthMap FrameStore::native_density(const VideoEntry& video, std::int64_t index) const {
    if (index < 0 || index >= static_cast<std::int64_t>(video.maps.size())) {
        throw PreconditionError(video.video_id + " has no ground-truth map for frame " + std::to_string(index));
    }
    return image::read_density(video.maps[static_cast<std::size_t>(index)]);
}

const GroundTruthMap& FrameStore::density(const VideoEntry& video, std::int64_t index) {
    const auto key = std::make_pair(video.video_id, index);
    auto it = densities_.find(key);
    if (it != densities_.end()) return it->second;
    GroundTruthMap g = native_density(video, index);
    g.data = resize_map(g.data, g.height, g.width, height_, width_);
    g.height = height_;
    g.width = width_;
    return densities_.emplace(key, std::move(g)).first->second;
}

FixationMap FrameStore::fixations(const VideoEntry& video, std::int64_t index) const {
    if (index < 0 || index >= static_cast<std::int64_t>(video.fixations.size())) {
        throw PreconditionError(video.video_id + " has no fixation map for frame " + std::to_string(index));
    }
    return image::read_fixations(video.fixations[static_cast<std::size_t>(index)]);
}

VideoClip FrameStore::clip(const VideoEntry& video, const std::vector<std::int64_t>& indices) {
    VideoClip clip;
    clip.frames = static_cast<std::int64_t>(indices.size());
    clip.height = height_;
    clip.width = width_;
    clip.pixels.reserve(static_cast<std::size_t>(clip.frames * height_ * width_ * 3));
    for (auto i : indices) {
        const auto& f = frame(video, i);
        clip.pixels.insert(clip.pixels.end(), f.data.begin(), f.data.end());
    }
    clip.frame_indices = indices;
    return clip;
}

TrainingSample make_window(FrameStore& store, const VideoEntry& video, std::int64_t end_frame, std::int64_t window) {
    TrainingSample s;
    s.video_id = video.video_id;
    s.frame = end_frame;
    s.clip = store.clip(video, window_indices(end_frame, window, video.frame_count));
    if (!video.maps.empty()) s.target = store.density(video, end_frame);
    if (!video.fixations.empty()) s.fixations = store.fixations(video, end_frame);
    return s;
}

Standardization compute_standardization(const DatasetIndex& index) {
    std::array<double, 3> sum{}, sq{};
    double count = 0.0;
    for (const auto& v : index.videos) {
        for (const auto& path : v.frames) {
            const auto img = image::read_rgb(path);
            for (std::size_t i = 0; i < img.data.size(); i += 3) {
                for (int c = 0; c < 3; ++c) {
                    sum[c] += img.data[i + c];
                    sq[c] += img.data[i + c] * img.data[i + c];
                }
            }
            count += static_cast<double>(img.height * img.width);
        }
    }
    Standardization st;
    if (count == 0.0) return st;
    for (int c = 0; c < 3; ++c) {
        st.mean[c] = sum[c] / count;
        st.std[c] = std::max(1e-3, std::sqrt(std::max(0.0, sq[c] / count - st.mean[c] * st.mean[c])));
    }
    return st;
}

std::optional<nlohmann::json> read_meta(const fs::path& root) {
    const fs::path p = root / layout::kMetaFile;
    if (!fs::exists(p)) return std::nullopt;
    std::ifstream is(p);
    try {
        return nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& ex) {
        throw FormatError(p.string() + ": " + ex.what());
    }
}

std::optional<Standardization> meta_standardization(const fs::path& root) {
    auto meta = read_meta(root);
    if (!meta || !meta->contains("pixel_mean") || !meta->contains("pixel_std")) return std::nullopt;
    Standardization st;
    try {
        st.mean = (*meta)["pixel_mean"].get<std::array<double, 3>>();
        st.std = (*meta)["pixel_std"].get<std::array<double, 3>>();
    } catch (const nlohmann::json::exception& ex) {
        throw FormatError(root.string() + "/meta.json: bad standardization constants: " + ex.what());
    }
    return st;
}

int synth_val_count(int videos) { return videos >= 2 ? std::max(1, videos / 5) : 0; }

namespace {

std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

struct Blob {
    double y, x, vy, vx;
};

}  // namespace

void synth_dataset(const SynthSpec& spec, const fs::path& root) {
    if (spec.videos < 1 || spec.frames < 1) throw ConfigError("synthetic dataset needs >= 1 video and frame");
    if (spec.resolution < 16) throw ConfigError("synthetic resolution must be >= 16");
    if (spec.fixations_per_frame < 1) throw ConfigError("need at least one fixation per frame");

    const int res = spec.resolution;
    const double sigma = 0.07 * res;
    const double support = 3.0 * sigma;
    const double margin = 1.5 * sigma;
    const double speed = 0.04 * res;
    const std::array<double, 3> blob_color{1.0, 0.85, 0.2};
    const std::array<double, 3> distractor_color{0.15, 0.35, 0.9};
    const int n_val = synth_val_count(spec.videos);

    std::array<double, 3> sum{}, sq{};
    double count = 0.0;
    nlohmann::json trajectories = nlohmann::json::object();
    nlohmann::json splits = {{"train", nlohmann::json::array()}, {"val", nlohmann::json::array()}};

    for (int v = 0; v < spec.videos; ++v) {
        char id[32];
        std::snprintf(id, sizeof id, "video_%03d", v + 1);
        const bool is_val = v >= spec.videos - n_val;
        const char* split = is_val ? "val" : "train";
        splits[split].push_back(id);
        const fs::path vdir = root / split / id;
        for (const char* d : {layout::kFramesDir, layout::kMapsDir, layout::kFixationsDir}) {
            fs::create_directories(vdir / d);
        }

        std::mt19937_64 rng(mix(spec.seed ^ mix(static_cast<std::uint64_t>(v) + 1)));
        std::uniform_real_distribution<double> pos(margin, res - 1 - margin);
        std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
        std::normal_distribution<double> noise(0.0, spec.noise);
        const double a = angle(rng);
        Blob b{pos(rng), pos(rng), speed * std::sin(a), speed * std::cos(a)};
        const double dy = pos(rng), dx = pos(rng);

        nlohmann::json traj = nlohmann::json::array();
        for (int f = 0; f < spec.frames; ++f) {
            traj.push_back({b.y, b.x});
            image::Image frame{res, res, 3, std::vector<double>(static_cast<std::size_t>(res) * res * 3)};
            std::vector<std::uint8_t> gt(static_cast<std::size_t>(res) * res);
            for (int y = 0; y < res; ++y) {
                for (int x = 0; x < res; ++x) {
                    const double d2 = (y - b.y) * (y - b.y) + (x - b.x) * (x - b.x);
                    const double e2 = (y - dy) * (y - dy) + (x - dx) * (x - dx);
                    const double k = std::exp(-d2 / (2 * sigma * sigma));
                    const double ka = 0.9 * k;
                    const double kd = 0.9 * std::exp(-e2 / (2 * sigma * sigma));
                    const auto p = (static_cast<std::size_t>(y) * res + x);
                    for (int c = 0; c < 3; ++c) {
                        double px = 0.45 + noise(rng);
                        px = px * (1 - kd) + distractor_color[c] * kd;
                        px = px * (1 - ka) + blob_color[c] * ka;
                        px = std::round(std::clamp(px, 0.0, 1.0) * 255.0) / 255.0;
                        frame.data[p * 3 + c] = px;
                        sum[c] += px;
                        sq[c] += px * px;
                    }
                    gt[p] = std::sqrt(d2) <= support ? static_cast<std::uint8_t>(std::lround(255.0 * k)) : 0;
                }
            }
            count += static_cast<double>(res) * res;

            std::vector<double> weights(gt.begin(), gt.end());
            std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
            std::vector<std::uint8_t> fix(gt.size(), 0);
            for (int k = 0; k < spec.fixations_per_frame; ++k) fix[pick(rng)] = 255;

            const auto name = layout::frame_file_name(f);
            image::write_png(vdir / layout::kFramesDir / name, frame);
            image::write_gray8(vdir / layout::kMapsDir / name, res, res, gt);
            image::write_gray8(vdir / layout::kFixationsDir / name, res, res, fix);

            b.y += b.vy;
            b.x += b.vx;
            if (b.y < margin || b.y > res - 1 - margin) {
                b.vy = -b.vy;
                b.y = std::clamp(b.y, margin, res - 1 - margin);
            }
            if (b.x < margin || b.x > res - 1 - margin) {
                b.vx = -b.vx;
                b.x = std::clamp(b.x, margin, res - 1 - margin);
            }
        }
        trajectories[id] = std::move(traj);
    }

    std::array<double, 3> mean{}, sd{};
    for (int c = 0; c < 3; ++c) {
        mean[c] = sum[c] / count;
        sd[c] = std::max(1e-3, std::sqrt(std::max(0.0, sq[c] / count - mean[c] * mean[c])));
    }
    nlohmann::json meta = {
        {"generator", "moving-blob"},
        {"seed", spec.seed},
        {"videos", spec.videos},
        {"frames", spec.frames},
        {"resolution", res},
        {"fixations_per_frame", spec.fixations_per_frame},
        {"noise", spec.noise},
        {"blob_sigma", sigma},
        {"splits", splits},
        {"pixel_mean", mean},
        {"pixel_std", sd},
        {"trajectories", trajectories},
        {"frame_numbering", "1-based file names"},
    };
    std::ofstream os(root / layout::kMetaFile, std::ios::trunc);
    if (!os) throw IoError("cannot write " + (root / layout::kMetaFile).string());
    os << meta.dump(2) << '\n';
}

}  // namespace salfom::data
