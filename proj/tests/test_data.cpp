#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "salfom/data.hpp"
#include "salfom/error.hpp"
#include "salfom/layout.hpp"
#include "test_util.hpp"

using namespace salfom;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

// Every regular file under `root`, relative path -> bytes.
std::map<std::string, std::string> tree(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
    }
    return out;
}

}  // namespace

TEST_CASE("window indices") {
    using V = std::vector<std::int64_t>;
    V full;
    for (int i = 0; i < 16; ++i) full.push_back(i);
    CHECK(data::window_indices(15, 16, 20) == full);
    CHECK(data::window_indices(0, 4, 10) == V{3, 2, 1, 0});
    CHECK(data::window_indices(2, 4, 3) == V{2, 0, 1, 2});
    CHECK(data::window_indices(1, 4, 10) == V{3, 2, 0, 1});
    CHECK(data::window_indices(19, 16, 20).front() == 4);
    CHECK(data::window_indices(0, 1, 1) == V{0});
    CHECK(data::window_indices(0, 16, 1) == V(16, 0));
}

TEST_CASE("window index invariants") {
    for (std::int64_t len = 1; len <= 24; ++len) {
        for (std::int64_t t = 1; t <= 17; ++t) {
            for (std::int64_t end = 0; end < len; ++end) {
                const auto idx = data::window_indices(end, t, len);
                REQUIRE(idx.size() == static_cast<std::size_t>(t));
                CHECK(idx.back() == end);
                for (auto i : idx) {
                    CHECK(i >= 0);
                    CHECK(i < len);
                }
                if (end >= t - 1) {
                    for (std::int64_t k = 0; k < t; ++k) CHECK(idx[k] == end - t + 1 + k);
                } else {
                    // Slots from frame 0 onward are in order; the padded prefix follows the rule.
                    const auto pad = t - 1 - end;
                    for (std::int64_t k = 0; k < t; ++k) {
                        CHECK(idx[k] == (k < pad ? std::min(t - 1 - k, len - 1) : k - pad));
                    }
                }
            }
        }
    }
    CHECK_THROWS_AS(data::window_indices(5, 4, 5), PreconditionError);
    CHECK_THROWS_AS(data::window_indices(0, 0, 5), PreconditionError);
}

TEST_CASE("synthetic datasets are deterministic") {
    testutil::TempDir a("synth_a"), b("synth_b"), c("synth_c");
    data::SynthSpec spec;
    spec.videos = 2;
    spec.frames = 20;
    spec.resolution = 64;
    spec.seed = 7;
    data::synth_dataset(spec, a.path());
    data::synth_dataset(spec, b.path());
    const auto ta = tree(a.path());
    CHECK(ta.size() == 2 * 20 * 3 + 1);
    CHECK(ta == tree(b.path()));
    spec.seed = 8;
    data::synth_dataset(spec, c.path());
    CHECK(ta != tree(c.path()));

    CHECK(data::synth_val_count(1) == 0);
    CHECK(data::synth_val_count(2) == 1);
    CHECK(data::synth_val_count(10) == 2);
    CHECK(data::synth_val_count(12) == 2);
    data::SynthSpec bad;
    bad.videos = 0;
    CHECK_THROWS_AS(data::synth_dataset(bad, c.path()), ConfigError);
}

TEST_CASE("synthetic ground truth follows the blob") {
    testutil::TempDir dir("synth_gt");
    data::SynthSpec spec;
    spec.videos = 3;
    spec.frames = 12;
    spec.resolution = 48;
    spec.seed = 3;
    spec.fixations_per_frame = 12;
    data::synth_dataset(spec, dir.path());
    const auto meta = data::read_meta(dir.path());
    REQUIRE(meta.has_value());
    const auto& traj = (*meta)["trajectories"];
    int checked = 0;
    for (auto split : {data::Split::train, data::Split::val}) {
        const auto index = data::index_dataset(dir.path(), split);
        REQUIRE(index.ok());
        for (const auto& v : index.videos) {
            for (std::int64_t f = 0; f < v.frame_count; ++f) {
                const auto gt = image::read_density(v.maps[f]);
                const auto fx = image::read_fixations(v.fixations[f]);
                const auto arg = std::max_element(gt.data.begin(), gt.data.end()) - gt.data.begin();
                const double cy = traj[v.video_id][f][0], cx = traj[v.video_id][f][1];
                CHECK(std::abs(static_cast<double>(arg / gt.width) - cy) <= 1.0);
                CHECK(std::abs(static_cast<double>(arg % gt.width) - cx) <= 1.0);
                CHECK(fx.fixation_count >= 1);
                for (auto i : fx.fixated_indices()) CHECK(gt.data[i] > 0.0);
                ++checked;
            }
        }
    }
    CHECK(checked == 36);
    const auto st = data::meta_standardization(dir.path());
    REQUIRE(st.has_value());
    for (int c = 0; c < 3; ++c) {
        CHECK(st->mean[c] > 0.0);
        CHECK(st->mean[c] < 1.0);
        CHECK(st->std[c] > 0.0);
    }
}

TEST_CASE("dataset indexing") {
    testutil::TempDir dir("index");
    data::SynthSpec spec;
    spec.videos = 3;
    spec.frames = 20;
    spec.resolution = 32;
    data::synth_dataset(spec, dir.path());

    const auto train = data::index_dataset(dir.path(), data::Split::train);
    CHECK(train.ok());
    REQUIRE(train.videos.size() == 2);
    CHECK(train.videos[0].video_id == "video_001");
    CHECK(train.videos[1].video_id == "video_002");
    for (const auto& v : train.videos) {
        CHECK(v.frame_count == 20);
        CHECK(v.maps.size() == 20);
        CHECK(v.fixations.size() == 20);
    }
    CHECK(train.frame_total() == 40);
    const auto again = data::index_dataset(dir.path(), data::Split::train);
    CHECK(again.videos[1].frames == train.videos[1].frames);

    // Standardization computed from the frames agrees with the stored constants.
    const auto computed = data::compute_standardization(train);
    CHECK(computed.mean[0] > 0.0);

    fs::remove(dir.path() / "train" / "video_002" / layout::kMapsDir / "00005.png");
    const auto broken = data::index_dataset(dir.path(), data::Split::train);
    CHECK_FALSE(broken.ok());
    REQUIRE(broken.errors.size() == 1);
    CHECK(broken.errors[0].find("video_002") != std::string::npos);
    CHECK(broken.errors[0].find("00005.png") != std::string::npos);
    CHECK(broken.videos.size() == 1);

    testutil::TempDir empty("index_empty");
    const auto none = data::index_dataset(empty.path(), data::Split::train);
    CHECK(none.ok());
    CHECK(none.videos.empty());
    CHECK_FALSE(none.warnings.empty());

    CHECK(data::parse_split("val") == data::Split::val);
    CHECK_THROWS_AS(data::parse_split("dev"), ConfigError);
}

TEST_CASE("windows pair each clip with its last frame's target") {
    testutil::TempDir dir("windows");
    data::SynthSpec spec;
    spec.videos = 1;
    spec.frames = 6;
    spec.resolution = 32;
    data::synth_dataset(spec, dir.path());
    const auto index = data::index_dataset(dir.path(), data::Split::train);
    REQUIRE(index.videos.size() == 1);
    data::FrameStore store(32, 32);
    const auto& v = index.videos[0];
    for (std::int64_t end = 0; end < 6; ++end) {
        const auto s = data::make_window(store, v, end, 4);
        CHECK(s.frame == end);
        CHECK(s.clip.frame_indices.back() == end);
        CHECK(s.clip.frame_indices == data::window_indices(end, 4, 6));
        CHECK(s.target.data == image::read_density(v.maps[end]).data);
        const auto& last = store.frame(v, end);
        const auto n = static_cast<std::size_t>(32 * 32 * 3);
        CHECK(std::equal(last.data.begin(), last.data.end(), s.clip.pixels.end() - static_cast<std::ptrdiff_t>(n)));
    }
}

TEST_CASE("preprocessing") {
    image::Image constant{360, 640, 3, {}};
    for (int i = 0; i < 360 * 640; ++i) {
        constant.data.insert(constant.data.end(), {0.2, 0.6, 0.9});
    }
    const auto clip = data::preprocess({constant}, 224, 224);
    CHECK(clip.frames == 1);
    CHECK(clip.pixels.size() == 224u * 224u * 3u);
    CHECK_NOTHROW(clip.validate());
    for (std::size_t i = 0; i < clip.pixels.size(); ++i) {
        CHECK(clip.pixels[i] == doctest::Approx(constant.data[i % 3]).epsilon(1e-6));
    }

    std::mt19937_64 rng(1);
    image::Image img{224, 224, 3, testutil::uniform(224 * 224 * 3, rng)};
    const auto same = data::preprocess({img, img}, 224, 224, {4, 5});
    CHECK(same.frames == 2);
    CHECK(same.frame_indices == std::vector<std::int64_t>{4, 5});
    for (std::size_t i = 0; i < img.data.size(); ++i) CHECK(same.pixels[i] == img.data[i]);

    image::Image noisy{50, 70, 3, testutil::uniform(50 * 70 * 3, rng)};
    const auto resized = data::preprocess({noisy}, 32, 32);
    for (double v : resized.pixels) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}
