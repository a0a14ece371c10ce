#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include "doctest.h"
#include "salfom/encoder.hpp"
#include "salfom/error.hpp"
#include "salfom/tensor_io.hpp"
#include "test_util.hpp"

using namespace salfom;

namespace {

EncoderConfig small_encoder(int image, int patch, int frames, int embed = 16) {
    EncoderConfig e;
    e.patch_size = patch;
    e.image_height = e.image_width = image;
    e.window_frames = frames;
    e.embed_dim = embed;
    e.heads = 2;
    e.depth = 1;
    return e;
}

VideoClip random_clip(std::int64_t t, std::int64_t h, std::int64_t w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    VideoClip c;
    c.frames = t;
    c.height = h;
    c.width = w;
    c.pixels = testutil::uniform(static_cast<std::size_t>(t * h * w * 3), rng);
    for (std::int64_t k = 0; k < t; ++k) c.frame_indices.push_back(k);
    return c;
}

FeatureVolume sequential_volume(std::int64_t t, std::int64_t h, std::int64_t w, std::int64_t c) {
    FeatureVolume v;
    v.t = t;
    v.h = h;
    v.w = w;
    v.c = c;
    for (std::int64_t i = 0; i < t * h * w * c; ++i) v.data.push_back(static_cast<float>(i) * 0.37f - 3.0f);
    return v;
}

}  // namespace

TEST_CASE("patch embedding shape law") {
    nn::Rng rng(1);
    Encoder single(small_encoder(16, 16, 1), rng);
    const auto one = single.patch_embed(random_clip(1, 16, 16, 1));
    CHECK(one.shape() == Shape{1, 1, 1, 16});

    Encoder enc(small_encoder(32, 8, 4), rng);
    const auto vol = enc.patch_embed(random_clip(4, 32, 32, 2));
    CHECK(vol.shape() == Shape{4, 4, 4, 16});
    CHECK(vol.provenance == Provenance::encoded);
    CHECK_THROWS_AS(enc.patch_embed(random_clip(4, 30, 32, 3)), ShapeError);
    CHECK_THROWS_AS(enc.patch_embed(random_clip(5, 32, 32, 3)), ShapeError);
}

TEST_CASE("encode preserves time, is deterministic and finite on zero input") {
    nn::Rng rng(2);
    Encoder enc(small_encoder(32, 8, 4), rng);
    for (int t : {1, 2, 4}) {
        const auto vol = enc.encode(random_clip(t, 32, 32, static_cast<std::uint64_t>(t)));
        CHECK(vol.shape() == Shape{t, 4, 4, 16});
    }
    auto zero = random_clip(3, 32, 32, 0);
    std::fill(zero.pixels.begin(), zero.pixels.end(), 0.0);
    const auto a = enc.encode(zero);
    const auto b = enc.encode(zero);
    CHECK(a.all_finite());
    CHECK(a.data == b.data);
}

TEST_CASE("clip validation") {
    auto clip = random_clip(2, 8, 8, 4);
    clip.pixels[5] = 1.5;
    CHECK_THROWS_AS(clip.validate(), PreconditionError);
    clip.pixels[5] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(clip.validate(), PreconditionError);
    clip = random_clip(2, 8, 8, 4);
    clip.frame_indices.pop_back();
    CHECK_THROWS_AS(clip.validate(), ShapeError);
}

TEST_CASE("encoder gradients match finite differences") {
    EncoderConfig cfg = small_encoder(16, 8, 2, 8);
    nn::Rng rng(3);
    Encoder enc(cfg, rng);
    std::mt19937_64 data_rng(4);
    const auto clip = Tensor::from({2, 16, 16, 3}, testutil::uniform(2 * 16 * 16 * 3, data_rng));
    const auto w = testutil::uniform(2 * 2 * 2 * 8, data_rng, -1, 1);
    auto f = [&] { return ops::weighted_sum(enc.forward(clip), w); };
    int checked = 0;
    enc.visit("", [&](const std::string& name, Tensor& p) {
        const auto rep = testutil::grad_check(f, p, 1e-3, 1e-7, 1e-6, 8);
        INFO(name);
        CHECK(rep.worst <= 1.0);
        ++checked;
    });
    CHECK(checked > 8);
}

TEST_CASE("feature files round-trip bit-exactly") {
    testutil::TempDir dir("features");
    const auto vol = sequential_volume(2, 2, 2, 4);
    const auto path = dir.path() / "seq.sfeat";
    export_features(vol, path);
    EncoderConfig expect = small_encoder(16, 8, 4, 4);
    const auto back = import_features(path, expect);
    CHECK(back.provenance == Provenance::imported);
    CHECK(back.shape() == vol.shape());
    REQUIRE(back.data.size() == vol.data.size());
    for (std::size_t i = 0; i < vol.data.size(); ++i) CHECK(back.data[i] == vol.data[i]);

    // Header layout: magic, version, four dims, dtype, then the f32 payload in index order.
    std::ifstream is(path, std::ios::binary);
    std::string magic(8, '\0');
    is.read(magic.data(), 8);
    CHECK(magic == "SFOMFEAT");
    CHECK(io::read_u32(is) == 1u);
    CHECK(io::read_u32(is) == 2u);
    CHECK(io::read_u32(is) == 2u);
    CHECK(io::read_u32(is) == 2u);
    CHECK(io::read_u32(is) == 4u);
    CHECK(io::read_u32(is) == 1u);
    float first = 0;
    is.read(reinterpret_cast<char*>(&first), 4);
    CHECK(first == vol.data[0]);

    std::mt19937_64 rng(5);
    FeatureVolume random = sequential_volume(3, 2, 2, 4);
    for (auto& v : random.data) v = static_cast<float>(std::normal_distribution<double>(0, 10)(rng));
    export_features(random, path);
    CHECK(import_features(path, expect).data == random.data);
}

TEST_CASE("feature file errors") {
    testutil::TempDir dir("feature_errors");
    const auto path = dir.path() / "f.sfeat";
    EncoderConfig expect = small_encoder(16, 8, 4, 4);

    auto bad = sequential_volume(2, 2, 2, 4);
    bad.data[3] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(export_features(bad, path), PreconditionError);

    export_features(sequential_volume(2, 2, 2, 8), path);
    CHECK_THROWS_AS(import_features(path, expect), ShapeError);

    export_features(sequential_volume(5, 2, 2, 4), path);
    CHECK_THROWS_AS(import_features(path, expect), ShapeError);

    export_features(sequential_volume(2, 2, 2, 4), path);
    const auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size - 3);
    CHECK_THROWS_AS(import_features(path, expect), FormatError);

    {
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        os << "NOTAFEAT and some bytes";
    }
    CHECK_THROWS_AS(import_features(path, expect), FormatError);

    export_features(sequential_volume(2, 2, 2, 4), path);
    {
        std::ofstream os(path, std::ios::binary | std::ios::app);
        os << 'x';
    }
    CHECK_THROWS_AS(import_features(path, expect), FormatError);
    CHECK_THROWS_AS(import_features(dir.path() / "missing.sfeat", expect), IoError);
}
