#include <cmath>
#include <filesystem>
#include <map>
#include <random>
#include <sstream>

#include "doctest.h"
#include "salfom/error.hpp"
#include "salfom/image_io.hpp"
#include "salfom/layout.hpp"
#include "salfom/losses.hpp"
#include "salfom/metrics.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace salfom;
namespace fs = std::filesystem;

namespace {

SaliencyMap smap(std::int64_t h, std::int64_t w, std::vector<double> v) {
    return SaliencyMap{h, w, std::move(v), false};
}

GroundTruthMap gmap(std::int64_t h, std::int64_t w, std::vector<double> v) {
    return GroundTruthMap{h, w, std::move(v)};
}

FixationMap fixmap(std::int64_t h, std::int64_t w, std::uint32_t bits) {
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(h * w));
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = (bits >> i) & 1u;
    return FixationMap::from_mask(h, w, mask);
}

}  // namespace

TEST_CASE("NSS examples") {
    const auto s = smap(2, 2, {0.9, 0.1, 0.2, 0.3});
    const double mu = 0.375;
    const double sd = std::sqrt(((0.9 - mu) * (0.9 - mu) + (0.1 - mu) * (0.1 - mu) + (0.2 - mu) * (0.2 - mu) +
                                 (0.3 - mu) * (0.3 - mu)) / 4.0);
    const auto v = nss(s, fixmap(2, 2, 0b0001));
    CHECK_FALSE(v.degenerate);
    CHECK(v.value == doctest::Approx((0.9 - mu) / sd).epsilon(1e-12));

    const auto flat = nss(smap(2, 2, {0.4, 0.4, 0.4, 0.4}), fixmap(2, 2, 0b0011));
    CHECK(flat.degenerate);
    CHECK(flat.value == 0.0);
    CHECK_THROWS_AS(nss(s, fixmap(2, 2, 0)), UndefinedMetricError);

    // Peaked map scored at its own top pixels beats random maps.
    std::vector<double> peak(9);
    for (int i = 0; i < 9; ++i) peak[i] = std::exp(-0.5 * (std::pow(i / 3 - 1, 2) + std::pow(i % 3 - 1, 2)));
    const auto top = fixmap(3, 3, (1u << 4) | (1u << 1));
    const double own = nss(smap(3, 3, peak), top).value;
    CHECK(own > 0.0);
    std::mt19937_64 rng(1);
    double random_mean = 0;
    for (int k = 0; k < 100; ++k) random_mean += nss(smap(3, 3, testutil::uniform(9, rng)), top).value / 100;
    CHECK(own >= random_mean);
}

TEST_CASE("NSS is invariant to positive affine maps") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> a_dist(0.01, 100), b_dist(-50, 50);
    for (int k = 0; k < 1000; ++k) {
        const auto v = testutil::uniform(16, rng);
        const auto fx = fixmap(4, 4, static_cast<std::uint32_t>(rng() % 0xFFFF) + 1);
        const double a = a_dist(rng), b = b_dist(rng);
        auto w = v;
        for (auto& x : w) x = a * x + b;
        CHECK(nss(smap(4, 4, w), fx).value == doctest::Approx(nss(smap(4, 4, v), fx).value).epsilon(1e-9));
    }
}

TEST_CASE("AUC-Judd examples") {
    CHECK(auc_judd(smap(2, 2, {0.9, 0.1, 0.2, 0.3}), fixmap(2, 2, 0b0001)) == 1.0);
    CHECK(auc_judd(smap(2, 2, {0.5, 0.5, 0.5, 0.5}), fixmap(2, 2, 0b0101)) == doctest::Approx(0.5));
    CHECK(auc_judd(smap(3, 3, std::vector<double>(9, 0.2)), fixmap(3, 3, 0b1)) == doctest::Approx(0.5));
    CHECK(auc_judd(smap(2, 2, {0.8, 0.7, 0.1, 0.2}), fixmap(2, 2, 0b0011)) == 1.0);
    CHECK_THROWS_AS(auc_judd(smap(2, 2, {0.1, 0.2, 0.3, 0.4}), fixmap(2, 2, 0b1111)), UndefinedMetricError);
}

TEST_CASE("AUC-Judd equals an exhaustive ROC sweep on every small map") {
    const double levels[3] = {0.0, 0.5, 1.0};
    std::size_t cases = 0;
    for (auto [h, w] : std::vector<std::pair<int, int>>{{1, 2}, {2, 1}, {1, 3}, {2, 2}, {2, 3}, {3, 3}}) {
        const int n = h * w;
        int combos = 1;
        for (int i = 0; i < n; ++i) combos *= 3;
        // Every value assignment is checked on small grids; 3x3 sweeps a seeded sample.
        std::mt19937_64 rng(static_cast<std::uint64_t>(n));
        const int value_sets = n <= 6 ? combos : 300;
        for (int c = 0; c < value_sets; ++c) {
            int code = n <= 6 ? c : static_cast<int>(rng() % static_cast<std::uint64_t>(combos));
            std::vector<double> s(n);
            for (int i = 0; i < n; ++i) {
                s[i] = levels[code % 3];
                code /= 3;
            }
            for (std::uint32_t bits = 1; bits + 1 < (1u << n); ++bits) {
                const auto fx = fixmap(h, w, bits);
                CHECK(auc_judd(smap(h, w, s), fx) == doctest::Approx(oracle::brute_auc(s, fx.data)).epsilon(1e-12));
                ++cases;
            }
        }
    }
    CHECK(cases > 100000);
}

TEST_CASE("ranking metrics ignore strictly monotone transforms") {
    std::mt19937_64 rng(3);
    for (int k = 0; k < 200; ++k) {
        const auto v = testutil::uniform(25, rng);
        auto w = v;
        for (auto& x : w) x = std::exp(3 * x) - 2;
        const auto fx = fixmap(5, 5, static_cast<std::uint32_t>(rng() % 0xFFFFFF) + 1);
        if (fx.fixation_count == 25) continue;
        CHECK(auc_judd(smap(5, 5, w), fx) == doctest::Approx(auc_judd(smap(5, 5, v), fx)).epsilon(1e-12));
        const std::vector<std::int64_t> pool{0, 3, 7, 11, 12, 19, 24};
        CHECK(shuffled_auc(smap(5, 5, w), fx, pool, 9, 20) == shuffled_auc(smap(5, 5, v), fx, pool, 9, 20));
    }
}

TEST_CASE("shuffled AUC") {
    std::mt19937_64 rng(4);
    const auto s = smap(4, 4, testutil::uniform(16, rng));
    const auto fx = fixmap(4, 4, 0b1000010000100001);
    const std::vector<std::int64_t> pool{1, 2, 6, 9, 14};

    const double a = shuffled_auc(s, fx, pool, 123, 50);
    CHECK(shuffled_auc(s, fx, pool, 123, 50) == a);
    CHECK(shuffled_auc(s, fx, pool, 124, 50) != a);

    // Re-draw the same splits and score each by counting pairs.
    const auto draws = sample_negative_splits(pool.size(), 4, 50, 123);
    const auto fixated = fx.fixated_indices();
    std::vector<double> pos;
    for (auto i : fixated) pos.push_back(s.data[i]);
    double total = 0;
    for (const auto& row : draws) {
        std::vector<double> neg;
        for (auto k : row) neg.push_back(s.data[pool[k]]);
        total += oracle::pairwise_auc(pos, neg);
    }
    CHECK(a == doctest::Approx(total / 50).epsilon(1e-12));

    // Negatives drawn at the positives themselves.
    CHECK(shuffled_auc(s, fx, fixated, 5, 200) == doctest::Approx(0.5).epsilon(0.05));
    // Perfect ranking.
    auto ranked = smap(4, 4, std::vector<double>(16, 0.1));
    for (auto i : fixated) ranked.data[i] = 0.9;
    CHECK(shuffled_auc(ranked, fx, pool, 1, 10) == 1.0);

    CHECK_THROWS_AS(shuffled_auc(s, fx, std::vector<std::int64_t>{}, 1, 10), ConfigError);
    CHECK_THROWS_AS(shuffled_auc(s, fx, std::vector<FixationMap>{}, 1, 10), ConfigError);
    CHECK_THROWS_AS(sample_negative_splits(0, 3, 2, 1), ConfigError);
}

TEST_CASE("shuffled AUC is at chance when negatives share the positive distribution") {
    std::mt19937_64 rng(5);
    const std::int64_t h = 64, w = 64;
    const auto s = smap(h, w, testutil::uniform(h * w, rng));
    std::uniform_int_distribution<std::int64_t> pix(0, h * w - 1);
    double total = 0;
    const int trials = 20;
    for (int t = 0; t < trials; ++t) {
        std::vector<std::pair<std::int64_t, std::int64_t>> pts;
        for (int k = 0; k < 40; ++k) {
            const auto p = pix(rng);
            pts.emplace_back(p / w, p % w);
        }
        const auto fx = FixationMap::from_points(h, w, pts);
        std::vector<std::int64_t> pool;
        for (int k = 0; k < 400; ++k) pool.push_back(pix(rng));
        total += shuffled_auc(s, fx, pool, static_cast<std::uint64_t>(t), 100);
    }
    CHECK(std::abs(total / trials - 0.5) <= 0.02);
}

TEST_CASE("pool coordinates follow the target resolution") {
    const auto fx = FixationMap::from_points(4, 4, {{0, 0}, {3, 3}, {1, 2}});
    CHECK(pool_indices({fx}, 4, 4) == std::vector<std::int64_t>{0, 6, 15});
    CHECK(pool_indices({fx}, 8, 8) == std::vector<std::int64_t>{1 * 8 + 1, 3 * 8 + 5, 7 * 8 + 7});
    CHECK(pool_indices({fx}, 2, 2) == std::vector<std::int64_t>{0, 1, 3});
}

TEST_CASE("CC metric and SIM") {
    std::mt19937_64 rng(6);
    for (int k = 0; k < 50; ++k) {
        const auto g = testutil::uniform(16, rng);
        const auto s = testutil::uniform(16, rng);
        CHECK(cc_metric(smap(4, 4, g), gmap(4, 4, g)).value == doctest::Approx(1.0).epsilon(1e-9));
        auto aff = g;
        for (auto& x : aff) x = 3 * x + 1;
        CHECK(cc_metric(smap(4, 4, aff), gmap(4, 4, g)).value == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(std::abs(cc_metric(smap(4, 4, s), gmap(4, 4, g)).value + cc_loss(smap(4, 4, s), gmap(4, 4, g))) <= 1e-6);

        CHECK(sim(smap(4, 4, s), gmap(4, 4, s)) == doctest::Approx(1.0).epsilon(1e-12));
        const double ab = sim(smap(4, 4, s), gmap(4, 4, g));
        CHECK(ab == doctest::Approx(sim(smap(4, 4, g), gmap(4, 4, s))).epsilon(1e-12));
        CHECK(ab >= 0.0);
        CHECK(ab <= 1.0 + 1e-12);
    }
    const auto flat = cc_metric(smap(2, 2, {1, 1, 1, 1}), gmap(2, 2, {0.1, 0.2, 0.3, 0.4}));
    CHECK(flat.degenerate);
    CHECK(flat.value == 0.0);
    CHECK(sim(smap(1, 2, {0.5, 0.5}), gmap(1, 2, {0.25, 0.75})) == doctest::Approx(0.75));
    CHECK(sim(smap(1, 3, {1, 0, 0}), gmap(1, 3, {0, 0, 1})) == 0.0);
    CHECK_THROWS_AS(sim(smap(1, 2, {0, 0}), gmap(1, 2, {0.25, 0.75})), DegenerateInputError);
    CHECK_THROWS_AS(sim(smap(1, 3, {1, 0, 0}), gmap(1, 2, {0.25, 0.75})), ShapeError);
}

namespace {

struct EvalFixture {
    testutil::TempDir dir{"eval"};
    fs::path split() const { return dir.path() / "val"; }
    fs::path pred() const { return dir.path() / "pred"; }

    // 3 videos x 4 frames of 8x8 maps, predictions at 16x16.
    EvalFixture() {
        std::mt19937_64 rng(7);
        std::uniform_int_distribution<int> byte(0, 255), pix(0, 63);
        for (int v = 0; v < 3; ++v) {
            const auto name = "video_00" + std::to_string(v);
            fs::create_directories(split() / name / layout::kMapsDir);
            fs::create_directories(split() / name / layout::kFixationsDir);
            fs::create_directories(pred() / name);
            for (int f = 0; f < 4; ++f) {
                std::vector<std::uint8_t> gt(64), fx(64, 0), pr(256);
                for (auto& b : gt) b = static_cast<std::uint8_t>(byte(rng));
                for (int k = 0; k < 3; ++k) fx[pix(rng)] = 255;
                for (auto& b : pr) b = static_cast<std::uint8_t>(byte(rng));
                const auto file = layout::frame_file_name(f);
                image::write_gray8(split() / name / layout::kMapsDir / file, 8, 8, gt);
                image::write_gray8(split() / name / layout::kFixationsDir / file, 8, 8, fx);
                image::write_gray8(pred() / name / file, 16, 16, pr);
            }
        }
    }
};

}  // namespace

TEST_CASE("directory evaluation aggregates per-video means") {
    EvalFixture fx;
    const auto report = evaluate_directory(fx.pred(), fx.split(), ShuffleSpec{ShufflePool::other_videos, 20}, 99);
    REQUIRE(report.ok());
    REQUIRE(report.frames.size() == 12);
    REQUIRE(report.videos.size() == 3);

    // Recompute every frame from the files and the documented pool and seed.
    std::map<std::string, std::vector<double>> cc_by_video, sauc_by_video;
    for (const auto& rec : report.frames) {
        const auto name = layout::frame_file_name(rec.frame);
        const auto density = image::read_density(fx.split() / rec.video / layout::kMapsDir / name);
        const auto fixations = image::read_fixations(fx.split() / rec.video / layout::kFixationsDir / name);
        const auto img = image::read_gray(fx.pred() / rec.video / name);
        SaliencyMap s{8, 8, resize_map(img.data, 16, 16, 8, 8), false};
        std::vector<FixationMap> others;
        for (int v = 0; v < 3; ++v) {
            const auto other = "video_00" + std::to_string(v);
            if (other == rec.video) continue;
            for (int f = 0; f < 4; ++f) {
                others.push_back(image::read_fixations(fx.split() / other / layout::kFixationsDir /
                                                       layout::frame_file_name(f)));
            }
        }
        const auto vpos = static_cast<std::uint64_t>(rec.video.back() - '0');
        CHECK(rec.metrics.cc == doctest::Approx(cc_metric(s, density).value).epsilon(1e-12));
        CHECK(rec.metrics.sim == doctest::Approx(sim(s, density)).epsilon(1e-12));
        CHECK(rec.metrics.nss == doctest::Approx(nss(s, fixations).value).epsilon(1e-12));
        CHECK(rec.metrics.auc_j == doctest::Approx(auc_judd(s, fixations)).epsilon(1e-12));
        CHECK(rec.metrics.s_auc ==
              doctest::Approx(shuffled_auc(s, fixations, others, frame_seed(99, vpos, static_cast<std::uint64_t>(rec.frame)), 20))
                  .epsilon(1e-12));
        cc_by_video[rec.video].push_back(rec.metrics.cc);
        sauc_by_video[rec.video].push_back(rec.metrics.s_auc);
    }
    double cc_mean = 0, sauc_mean = 0;
    for (const auto& v : report.videos) {
        double c = 0, sa = 0;
        for (double x : cc_by_video[v.video]) c += x / 4;
        for (double x : sauc_by_video[v.video]) sa += x / 4;
        CHECK(v.frames == 4);
        CHECK(v.mean.cc == doctest::Approx(c).epsilon(1e-12));
        CHECK(v.mean.s_auc == doctest::Approx(sa).epsilon(1e-12));
        cc_mean += c / 3;
        sauc_mean += sa / 3;
    }
    CHECK(report.dataset.cc == doctest::Approx(cc_mean).epsilon(1e-12));
    CHECK(report.dataset.s_auc == doctest::Approx(sauc_mean).epsilon(1e-12));

    const auto again = evaluate_directory(fx.pred(), fx.split(), ShuffleSpec{ShufflePool::other_videos, 20}, 99);
    CHECK(again.dataset.s_auc == report.dataset.s_auc);

    std::ostringstream csv, jsonl;
    write_csv(csv, report);
    write_jsonl(jsonl, report);
    CHECK(csv.str().rfind("video,frame,auc_j,s_auc,nss,cc,sim\n", 0) == 0);
    std::size_t lines = 0;
    for (char c : csv.str()) lines += c == '\n';
    CHECK(lines == 13);
    std::istringstream js(jsonl.str());
    std::string first;
    std::getline(js, first);
    CHECK(nlohmann::json::parse(first).contains("s_auc"));
}

TEST_CASE("predictions equal to ground truth score perfectly on distribution metrics") {
    EvalFixture fx;
    for (const auto& video : layout::list_subdirectories(fx.pred())) {
        for (const auto& [idx, path] : layout::list_frame_files(fx.pred() / video)) {
            fs::copy_file(fx.split() / video / layout::kMapsDir / layout::frame_file_name(idx), path,
                          fs::copy_options::overwrite_existing);
        }
    }
    const auto report = evaluate_directory(fx.pred(), fx.split(), ShuffleSpec{}, 1);
    REQUIRE(report.ok());
    for (const auto& rec : report.frames) {
        CHECK(rec.metrics.cc == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(rec.metrics.sim == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("directory evaluation errors") {
    EvalFixture fx;
    fs::remove(fx.split() / "video_001" / layout::kMapsDir / layout::frame_file_name(2));
    const auto report = evaluate_directory(fx.pred(), fx.split(), ShuffleSpec{ShufflePool::other_frames, 10}, 3);
    CHECK_FALSE(report.ok());
    REQUIRE(report.errors.size() == 1);
    CHECK(report.errors[0].find("00003.png") != std::string::npos);
    CHECK(report.frames.size() == 11);

    testutil::TempDir empty("eval_empty");
    const auto none = evaluate_directory(empty.path(), fx.split(), ShuffleSpec{}, 3);
    CHECK_FALSE(none.ok());
    CHECK(none.frames.empty());
    CHECK_FALSE(none.errors.empty());
}
