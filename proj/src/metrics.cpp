#include "salfom/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <random>

#include "salfom/error.hpp"
#include "salfom/image_io.hpp"
#include "salfom/layout.hpp"
#include "salfom/losses.hpp"

namespace salfom {

namespace {

void check_operands(const SaliencyMap& s, std::int64_t h, std::int64_t w, const char* what) {
    if (s.size() == 0 || static_cast<std::int64_t>(s.data.size()) != s.size()) {
        throw ShapeError(std::string(what) + ": saliency map data does not match its dims");
    }
    if (s.height != h || s.width != w) {
        throw ShapeError(std::string(what) + ": map is " + std::to_string(s.height) + "x" +
                         std::to_string(s.width) + ", reference is " + std::to_string(h) + "x" +
                         std::to_string(w));
    }
    for (double v : s.data) {
        if (!std::isfinite(v)) throw PreconditionError(std::string(what) + ": non-finite saliency value");
    }
}

void check_fixations(const SaliencyMap& s, const FixationMap& fx, const char* what) {
    check_operands(s, fx.height, fx.width, what);
    if (fx.fixation_count < 1) throw UndefinedMetricError(std::string(what) + ": no fixations");
}

std::vector<double> values_at(const SaliencyMap& s, std::span<const std::int64_t> idx) {
    std::vector<double> v;
    v.reserve(idx.size());
    for (auto i : idx) v.push_back(s.data[static_cast<std::size_t>(i)]);
    return v;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

MetricValue nss(const SaliencyMap& s, const FixationMap& fx) {
    check_fixations(s, fx, "nss");
    if (has_zero_variance(s.data)) return {0.0, true};
    const auto n = static_cast<double>(s.data.size());
    double mean = 0.0;
    for (double v : s.data) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : s.data) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / n);
    double total = 0.0;
    const auto idx = fx.fixated_indices();
    for (auto i : idx) total += (s.data[static_cast<std::size_t>(i)] - mean) / sd;
    return {total / static_cast<double>(idx.size()), false};
}

double auc_judd(const SaliencyMap& s, const FixationMap& fx) {
    check_fixations(s, fx, "auc_judd");
    const auto n_pixels = static_cast<std::int64_t>(s.data.size());
    const auto n_pos = fx.fixation_count;
    if (n_pos == n_pixels) throw UndefinedMetricError("auc_judd: every pixel is fixated");

    auto pos = values_at(s, fx.fixated_indices());
    std::sort(pos.begin(), pos.end(), std::greater<>());
    std::vector<double> all = s.data;
    std::sort(all.begin(), all.end());
    const auto n_neg = static_cast<double>(n_pixels - n_pos);

    double area = 0.0;
    double prev_tpr = 0.0, prev_fpr = 0.0;
    std::size_t k = 0;
    while (k < pos.size()) {
        const double thresh = pos[k];
        while (k < pos.size() && pos[k] == thresh) ++k;
        const auto above = static_cast<double>(all.end() - std::lower_bound(all.begin(), all.end(), thresh));
        const double tp = static_cast<double>(k);
        const double tpr = tp / static_cast<double>(n_pos);
        const double fpr = (above - tp) / n_neg;
        area += 0.5 * (tpr + prev_tpr) * (fpr - prev_fpr);
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    area += 0.5 * (1.0 + prev_tpr) * (1.0 - prev_fpr);
    return area;
}

std::vector<std::vector<std::size_t>> sample_negative_splits(std::size_t pool_size, std::size_t count,
                                                             int splits, std::uint64_t seed) {
    if (pool_size == 0) throw ConfigError("shuffled AUC needs a non-empty negative pool");
    if (splits < 1) throw ConfigError("shuffled AUC needs at least one split");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, pool_size - 1);
    std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(splits));
    for (auto& row : out) {
        row.resize(count);
        for (auto& v : row) v = pick(rng);
    }
    return out;
}

std::vector<std::int64_t> pool_indices(const std::vector<FixationMap>& pool, std::int64_t height,
                                       std::int64_t width) {
    std::vector<std::int64_t> out;
    for (const auto& fx : pool) {
        for (auto i : fx.fixated_indices()) {
            const auto y = i / fx.width;
            const auto x = i % fx.width;
            const auto ty = std::min<std::int64_t>(
                height - 1, static_cast<std::int64_t>((static_cast<double>(y) + 0.5) * height / fx.height));
            const auto tx = std::min<std::int64_t>(
                width - 1, static_cast<std::int64_t>((static_cast<double>(x) + 0.5) * width / fx.width));
            out.push_back(ty * width + tx);
        }
    }
    return out;
}

double roc_area(std::span<const double> positives, std::span<const double> negatives) {
    if (positives.empty() || negatives.empty()) throw UndefinedMetricError("ROC area needs both classes");
    std::vector<double> neg(negatives.begin(), negatives.end());
    std::sort(neg.begin(), neg.end());
    double wins = 0.0;
    for (double p : positives) {
        const auto lo = std::lower_bound(neg.begin(), neg.end(), p);
        const auto hi = std::upper_bound(lo, neg.end(), p);
        wins += static_cast<double>(lo - neg.begin()) + 0.5 * static_cast<double>(hi - lo);
    }
    return wins / (static_cast<double>(positives.size()) * static_cast<double>(neg.size()));
}

double shuffled_auc(const SaliencyMap& s, const FixationMap& fx, std::span<const std::int64_t> pool,
                    std::uint64_t seed, int splits) {
    check_fixations(s, fx, "shuffled_auc");
    if (pool.empty()) throw ConfigError("shuffled_auc: the shuffle pool has no fixations");
    for (auto i : pool) {
        if (i < 0 || i >= s.size()) throw ShapeError("shuffled_auc: pool location outside the map");
    }
    const auto pos = values_at(s, fx.fixated_indices());
    const auto draws = sample_negative_splits(pool.size(), pos.size(), splits, seed);
    double total = 0.0;
    std::vector<double> neg(pos.size());
    for (const auto& row : draws) {
        for (std::size_t k = 0; k < row.size(); ++k) neg[k] = s.data[static_cast<std::size_t>(pool[row[k]])];
        total += roc_area(pos, neg);
    }
    return total / static_cast<double>(draws.size());
}

double shuffled_auc(const SaliencyMap& s, const FixationMap& fx, const std::vector<FixationMap>& pool,
                    std::uint64_t seed, int splits) {
    const auto idx = pool_indices(pool, s.height, s.width);
    return shuffled_auc(s, fx, idx, seed, splits);
}

MetricValue cc_metric(const SaliencyMap& s, const GroundTruthMap& g) {
    check_operands(s, g.height, g.width, "cc_metric");
    if (has_zero_variance(s.data) || has_zero_variance(g.data)) return {0.0, true};
    return {-cc_loss(s, g), false};
}

double sim(const SaliencyMap& s, const GroundTruthMap& g) {
    check_operands(s, g.height, g.width, "sim");
    const auto sn = normalize_to_distribution(s.data);
    const auto gn = normalize_to_distribution(g.data);
    double total = 0.0;
    for (std::size_t i = 0; i < sn.size(); ++i) total += std::min(sn[i], gn[i]);
    return total;
}

std::uint64_t frame_seed(std::uint64_t seed, std::uint64_t video, std::uint64_t frame) {
    return splitmix64(splitmix64(splitmix64(seed) ^ video) ^ frame);
}

FrameRecord score_frame(const SaliencyMap& prediction, const GroundTruthMap& density,
                        const FixationMap& fixations, std::span<const std::int64_t> pool,
                        std::uint64_t seed, int splits) {
    if (density.height != fixations.height || density.width != fixations.width) {
        throw ShapeError("density and fixation maps differ in size");
    }
    SaliencyMap s = prediction;
    s.data = resize_map(prediction.data, prediction.height, prediction.width, density.height, density.width);
    s.height = density.height;
    s.width = density.width;
    s.normalized = false;

    FrameRecord rec;
    const auto n = nss(s, fixations);
    const auto c = cc_metric(s, density);
    rec.metrics.auc_j = auc_judd(s, fixations);
    rec.metrics.s_auc = shuffled_auc(s, fixations, pool, seed, splits);
    rec.metrics.nss = n.value;
    rec.metrics.cc = c.value;
    rec.metrics.sim = sim(s, density);
    rec.nss_degenerate = n.degenerate;
    rec.cc_degenerate = c.degenerate;
    return rec;
}

namespace {

void accumulate(MetricSet& acc, const MetricSet& m) {
    acc.auc_j += m.auc_j;
    acc.s_auc += m.s_auc;
    acc.nss += m.nss;
    acc.cc += m.cc;
    acc.sim += m.sim;
}

MetricSet divided(MetricSet m, double n) {
    m.auc_j /= n;
    m.s_auc /= n;
    m.nss /= n;
    m.cc /= n;
    m.sim /= n;
    return m;
}

nlohmann::json to_json(const MetricSet& m) {
    return {{"auc_j", m.auc_j}, {"s_auc", m.s_auc}, {"nss", m.nss}, {"cc", m.cc}, {"sim", m.sim}};
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

const char* pool_name(ShufflePool p) { return p == ShufflePool::other_videos ? "other_videos" : "other_frames"; }

}  // namespace

void aggregate(MetricsReport& report) {
    report.videos.clear();
    std::map<std::string, std::size_t> slot;
    std::vector<MetricSet> sums;
    for (const auto& rec : report.frames) {
        auto [it, fresh] = slot.try_emplace(rec.video, report.videos.size());
        if (fresh) {
            report.videos.push_back({rec.video, 0, {}});
            sums.emplace_back();
        }
        report.videos[it->second].frames += 1;
        accumulate(sums[it->second], rec.metrics);
    }
    report.dataset = {};
    for (std::size_t i = 0; i < report.videos.size(); ++i) {
        report.videos[i].mean = divided(sums[i], static_cast<double>(report.videos[i].frames));
        accumulate(report.dataset, report.videos[i].mean);
    }
    if (!report.videos.empty()) report.dataset = divided(report.dataset, static_cast<double>(report.videos.size()));
}

MetricsReport evaluate_directory(const std::filesystem::path& pred_dir,
                                 const std::filesystem::path& split_dir, const ShuffleSpec& shuffle,
                                 std::uint64_t seed) {
    MetricsReport report;
    report.settings = {{"seed", seed}, {"shuffle_pool", pool_name(shuffle.pool)}, {"splits", shuffle.splits},
                       {"aggregation", "mean of per-video means"}, {"resize", "bilinear to ground-truth size"}};

    const auto split_videos = layout::list_subdirectories(split_dir);
    const auto pred_videos = layout::list_subdirectories(pred_dir);

    // Fixations of every annotated video in the split form the shuffle pool.
    std::map<std::string, std::vector<FixationMap>> fixations;
    std::map<std::string, std::vector<std::int64_t>> fixation_frames;
    for (const auto& v : split_videos) {
        auto& maps = fixations[v];
        for (const auto& [idx, path] : layout::list_frame_files(split_dir / v / layout::kFixationsDir)) {
            fixation_frames[v].push_back(idx);
            try {
                maps.push_back(image::read_fixations(path));
            } catch (const Error& ex) {
                report.errors.push_back(ex.what());
                maps.emplace_back();
            }
        }
    }
    bool fell_back = false;

    for (const auto& video : pred_videos) {
        const auto vpos = static_cast<std::uint64_t>(
            std::lower_bound(split_videos.begin(), split_videos.end(), video) - split_videos.begin());
        const auto found = std::binary_search(split_videos.begin(), split_videos.end(), video);
        const auto files = layout::list_frame_files(pred_dir / video);
        if (!found) {
            report.errors.push_back("no ground truth for predicted video '" + video + "'");
            continue;
        }
        std::vector<FixationMap> other_videos;
        if (shuffle.pool == ShufflePool::other_videos) {
            for (const auto& [name, maps] : fixations) {
                if (name != video) other_videos.insert(other_videos.end(), maps.begin(), maps.end());
            }
        }
        const bool use_frames = shuffle.pool == ShufflePool::other_frames ||
                                pool_indices(other_videos, 1, 1).empty();
        if (use_frames && shuffle.pool == ShufflePool::other_videos) fell_back = true;

        for (const auto& [idx, path] : files) {
            const auto name = layout::frame_file_name(idx);
            const auto gt_path = split_dir / video / layout::kMapsDir / name;
            const auto fx_path = split_dir / video / layout::kFixationsDir / name;
            try {
                if (!std::filesystem::exists(gt_path)) throw IoError("missing ground-truth map " + gt_path.string());
                if (!std::filesystem::exists(fx_path)) throw IoError("missing fixation map " + fx_path.string());
                const auto density = image::read_density(gt_path);
                const auto fx = image::read_fixations(fx_path);
                const auto pred_img = image::read_gray(path);
                SaliencyMap pred{pred_img.height, pred_img.width, pred_img.data, false};

                std::vector<std::int64_t> pool;
                if (use_frames) {
                    std::vector<FixationMap> others;
                    const auto& own = fixations[video];
                    const auto& own_frames = fixation_frames[video];
                    for (std::size_t k = 0; k < own.size(); ++k) {
                        if (own_frames[k] != idx) others.push_back(own[k]);
                    }
                    pool = pool_indices(others, density.height, density.width);
                } else {
                    pool = pool_indices(other_videos, density.height, density.width);
                }
                auto rec = score_frame(pred, density, fx, pool, frame_seed(seed, vpos, static_cast<std::uint64_t>(idx)),
                                       shuffle.splits);
                rec.video = video;
                rec.frame = idx;
                report.frames.push_back(std::move(rec));
            } catch (const Error& ex) {
                report.errors.push_back(video + "/" + name + ": " + ex.what());
            }
        }
    }
    if (report.frames.empty() && report.errors.empty()) {
        report.errors.push_back("no predictions found under " + pred_dir.string());
    }
    report.settings["shuffle_pool_fallback"] = fell_back;
    aggregate(report);
    return report;
}

void write_jsonl(std::ostream& os, const MetricsReport& report) {
    for (const auto& rec : report.frames) {
        auto j = to_json(rec.metrics);
        j["video"] = rec.video;
        j["frame"] = rec.frame;
        j["nss_degenerate"] = rec.nss_degenerate;
        j["cc_degenerate"] = rec.cc_degenerate;
        os << j.dump() << '\n';
    }
    for (const auto& v : report.videos) {
        os << nlohmann::json{{"video_mean", v.video}, {"frames", v.frames}, {"metrics", to_json(v.mean)}}.dump()
           << '\n';
    }
    os << nlohmann::json{{"dataset_mean", to_json(report.dataset)},
                         {"videos", report.videos.size()},
                         {"frames", report.frames.size()},
                         {"errors", report.errors},
                         {"settings", report.settings}}
              .dump()
       << '\n';
}

void write_csv(std::ostream& os, const MetricsReport& report) {
    os << "video,frame,auc_j,s_auc,nss,cc,sim\n";
    for (const auto& r : report.frames) {
        os << r.video << ',' << r.frame << ',' << fmt(r.metrics.auc_j) << ',' << fmt(r.metrics.s_auc) << ','
           << fmt(r.metrics.nss) << ',' << fmt(r.metrics.cc) << ',' << fmt(r.metrics.sim) << '\n';
    }
}

void write_summary(std::ostream& os, const MetricsReport& report) {
    char line[160];
    std::snprintf(line, sizeof line, "%-20s %7s %8s %8s %8s %8s %8s\n", "video", "frames", "AUC-J", "S-AUC",
                  "NSS", "CC", "SIM");
    os << line;
    auto row = [&](const std::string& name, std::int64_t frames, const MetricSet& m) {
        std::snprintf(line, sizeof line, "%-20s %7lld %8.4f %8.4f %8.4f %8.4f %8.4f\n", name.c_str(),
                      static_cast<long long>(frames), m.auc_j, m.s_auc, m.nss, m.cc, m.sim);
        os << line;
    };
    for (const auto& v : report.videos) row(v.video, v.frames, v.mean);
    row("mean", static_cast<std::int64_t>(report.frames.size()), report.dataset);
    for (const auto& e : report.errors) os << "error: " << e << '\n';
}

}  // namespace salfom
