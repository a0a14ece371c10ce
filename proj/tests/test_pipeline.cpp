#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "doctest.h"
#include "salfom/error.hpp"
#include "salfom/losses.hpp"
#include "salfom/pipeline.hpp"
#include "test_util.hpp"

using namespace salfom;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_model(int frames = 4) {
    ModelConfig cfg;
    cfg.encoder.patch_size = 8;
    cfg.encoder.image_height = cfg.encoder.image_width = 32;
    cfg.encoder.window_frames = frames;
    cfg.encoder.embed_dim = 16;
    cfg.encoder.heads = 2;
    cfg.encoder.depth = 1;
    cfg.encoder.mlp_ratio = 2;
    auto& d = cfg.decoder;
    d.num_layers = 2;
    d.tcfe_channels = {16, 8};
    d.tcfe_heads = 2;
    d.window_size = {2, 2, 2};
    d.dfd_channels = {8, 8};
    d.sfd_channels = {8, 8};
    d.dfd_spatial_scale = {2, 2};
    d.dfd_temporal_schedule = {2, 1};
    d.fusion_channels = 8;
    d.norm_groups = 2;
    cfg.init_seed = 5;
    cfg.validate();
    return cfg;
}

struct SynthFixture {
    testutil::TempDir dir{"pipeline"};
    data::DatasetIndex train, val;

    explicit SynthFixture(int videos = 2, int frames = 6) {
        data::SynthSpec spec;
        spec.videos = videos;
        spec.frames = frames;
        spec.resolution = 32;
        spec.seed = 11;
        data::synth_dataset(spec, dir.path());
        train = data::index_dataset(dir.path(), data::Split::train);
        val = data::index_dataset(dir.path(), data::Split::val);
    }
};

TrainConfig quick_train(int steps) {
    TrainConfig t;
    t.adam.lr = 1e-3;
    t.max_steps = steps;
    t.validate_every = 2;
    t.patience = 100;
    t.seed = 3;
    t.log_every = 0;
    return t;
}

std::vector<std::vector<double>> snapshot(SaliencyModel& m) {
    std::vector<std::vector<double>> out;
    for (auto& [name, t] : m.named_parameters()) out.push_back(testutil::vec(t));
    return out;
}

double validation_loss(const SaliencyModel& model, const data::DatasetIndex& val, data::FrameStore& store) {
    NoGradGuard ng;
    double total = 0;
    int n = 0;
    for (const auto& v : val.videos) {
        for (std::int64_t f = 0; f < v.frame_count; ++f) {
            const auto s = data::make_window(store, v, f, model.config().encoder.window_frames);
            total += losses::total_loss(model.forward(s.clip.to_tensor()), s.target.data, losses::CcMode::guard)
                         .total.item();
            ++n;
        }
    }
    return total / n;
}

}  // namespace

TEST_CASE("train config JSON") {
    auto t = quick_train(7);
    t.freeze_encoder = true;
    t.early_stop = EarlyStopMetric::val_cc;
    t.feature_dir = "feats";
    const auto back = train_config_from_json(to_json(t));
    CHECK(to_json(back) == to_json(t));
    CHECK(back.feature_dir == fs::path("feats"));
    CHECK_THROWS_AS(train_config_from_json({{"learning_rate", 0.1}}), ConfigError);
    TrainConfig bad;
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = TrainConfig{};
    bad.adam.lr = -1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
    SynthFixture fx;
    SaliencyModel model(tiny_model());
    const auto before = snapshot(model);
    auto cfg = quick_train(4);
    cfg.adam.lr = 0.0;
    data::FrameStore store(32, 32);
    const auto res = train(model, fx.train, &fx.val, cfg, store);
    CHECK(res.steps_run == 4);
    CHECK(snapshot(model) == before);
}

TEST_CASE("training is deterministic and moves the loss") {
    SynthFixture fx;
    auto cfg = quick_train(6);
    cfg.batch_size = 2;
    SaliencyModel a(tiny_model()), b(tiny_model());
    data::FrameStore store_a(32, 32), store_b(32, 32);
    const auto ra = train(a, fx.train, &fx.val, cfg, store_a);
    const auto rb = train(b, fx.train, &fx.val, cfg, store_b);
    REQUIRE(ra.steps.size() == 6);
    for (std::size_t i = 0; i < ra.steps.size(); ++i) {
        CHECK(ra.steps[i].loss == rb.steps[i].loss);
        CHECK(std::isfinite(ra.steps[i].loss));
        CHECK(ra.steps[i].loss == doctest::Approx(ra.steps[i].kl + ra.steps[i].cc).epsilon(1e-12));
    }
    CHECK(snapshot(a) == snapshot(b));
    CHECK(ra.validations.size() == 3);
}

TEST_CASE("early stopping keeps the best validation snapshot") {
    SynthFixture fx;
    data::FrameStore store(32, 32);
    {
        // Nothing improves after the first validation when nothing changes.
        SaliencyModel model(tiny_model());
        auto cfg = quick_train(50);
        cfg.adam.lr = 0.0;
        cfg.validate_every = 1;
        cfg.patience = 2;
        const auto res = train(model, fx.train, &fx.val, cfg, store);
        CHECK(res.stopped_early);
        CHECK(res.steps_run == 3);
        CHECK(res.best_step == 1);
    }
    {
        SaliencyModel model(tiny_model());
        auto cfg = quick_train(8);
        cfg.adam.lr = 2e-2;  // large enough to make the curve bumpy
        cfg.validate_every = 1;
        cfg.val_max_samples = 1000;
        const auto res = train(model, fx.train, &fx.val, cfg, store);
        double best = std::numeric_limits<double>::infinity();
        int best_step = -1;
        for (const auto& v : res.validations) {
            if (v.loss < best) {
                best = v.loss;
                best_step = v.step;
            }
        }
        CHECK(res.best_step == best_step);
        CHECK(validation_loss(model, fx.val, store) == doctest::Approx(best).epsilon(1e-12));
        for (auto& [name, p] : model.named_parameters()) CHECK(p.requires_grad());
    }
}

TEST_CASE("frozen encoder stays fixed") {
    SynthFixture fx;
    SaliencyModel model(tiny_model());
    std::vector<std::vector<double>> enc_before, dec_before;
    for (auto& [name, t] : model.named_parameters()) {
        (name.rfind("encoder.", 0) == 0 ? enc_before : dec_before).push_back(testutil::vec(t));
    }
    auto cfg = quick_train(3);
    cfg.freeze_encoder = true;
    data::FrameStore store(32, 32);
    train(model, fx.train, &fx.val, cfg, store);
    std::vector<std::vector<double>> enc_after, dec_after;
    for (auto& [name, t] : model.named_parameters()) {
        (name.rfind("encoder.", 0) == 0 ? enc_after : dec_after).push_back(testutil::vec(t));
        CHECK(t.requires_grad());
    }
    CHECK(enc_after == enc_before);
    CHECK(dec_after != dec_before);
}

TEST_CASE("non-finite loss writes a diagnostic dump") {
    SynthFixture fx;
    SaliencyModel model(tiny_model());
    for (auto& [name, t] : model.named_parameters()) {
        if (name == "decoder.fuse.out.bias") t.mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
    }
    testutil::TempDir diag("diag");
    auto cfg = quick_train(3);
    cfg.diagnostics_dir = diag.path();
    data::FrameStore store(32, 32);
    CHECK_THROWS_AS(train(model, fx.train, &fx.val, cfg, store), NumericError);
    const auto dump_path = diag.path() / "nonfinite_step_1.json";
    REQUIRE(fs::exists(dump_path));
    std::ifstream is(dump_path);
    const auto dump = nlohmann::json::parse(is);
    CHECK(dump["step"] == 1);
    CHECK(dump["non_finite_parameters"] == nlohmann::json::array({"decoder.fuse.out.bias"}));
    CHECK(dump.contains("window"));
}

TEST_CASE("sliding-window prediction") {
    auto cfg = tiny_model(16);
    SaliencyModel model(cfg);
    // Each frame gets a distinct, reproducible texture.
    auto fetch = [](const std::vector<std::int64_t>& idx) {
        VideoClip clip;
        clip.frames = static_cast<std::int64_t>(idx.size());
        clip.height = clip.width = 32;
        clip.frame_indices = idx;
        for (auto f : idx) {
            std::mt19937_64 rng(static_cast<std::uint64_t>(f) + 100);
            const auto px = testutil::uniform(32 * 32 * 3, rng);
            clip.pixels.insert(clip.pixels.end(), px.begin(), px.end());
        }
        return clip;
    };
    for (std::int64_t len : {1, 5, 16, 20}) {
        const auto maps = sliding_window_predict(model, len, fetch);
        CHECK(maps.size() == static_cast<std::size_t>(len));
        CHECK(maps[0].data == model.predict(fetch(data::window_indices(0, 16, len))).data);
        if (len == 20) {
            std::vector<std::int64_t> tail;
            for (int f = 4; f <= 19; ++f) tail.push_back(f);
            CHECK(maps[19].data == model.predict(fetch(tail)).data);
            CHECK(maps[0].data != maps[19].data);
        }
    }
    CHECK_THROWS_AS(sliding_window_predict(model, 0, fetch), PreconditionError);
}

TEST_CASE("feature export feeds the decoder") {
    SynthFixture fx(2, 5);
    SaliencyModel model(tiny_model());
    data::FrameStore store(32, 32);
    testutil::TempDir feats("features_dir");
    export_window_features(model, fx.val, store, feats.path());
    const auto& video = fx.val.videos[0];
    CHECK(fs::exists(feature_path(feats.path(), video.video_id, 4)));
    const auto direct = sliding_window_predict(model, store, video);
    const auto via_files = sliding_window_predict_features(model, feats.path(), video);
    REQUIRE(direct.size() == via_files.size());
    for (std::size_t f = 0; f < direct.size(); ++f) {
        for (std::size_t i = 0; i < direct[f].data.size(); ++i) {
            CHECK(via_files[f].data[i] == doctest::Approx(direct[f].data[i]).epsilon(1e-4));
        }
    }
}

TEST_CASE("gray conversion") {
    SaliencyMap m{1, 3, {0.2, 0.6, 0.4}, false};
    CHECK(to_gray8(m) == std::vector<std::uint8_t>{0, 255, 128});
    SaliencyMap flat{1, 2, {0.3, 0.3}, false};
    CHECK(to_gray8(flat) == std::vector<std::uint8_t>{0, 0});
}

TEST_CASE("checkpoints round-trip bit-exactly") {
    SynthFixture fx(2, 4);
    auto cfg = tiny_model();
    cfg.encoder.pixel_mean = {0.41, 0.42, 0.43};
    SaliencyModel model(cfg);
    data::FrameStore store(32, 32);
    train(model, fx.train, &fx.val, quick_train(2), store);
    testutil::TempDir dir("ckpt");
    const auto path = dir.path() / "model.sfom";
    model.save(path);
    auto loaded = SaliencyModel::load(path);
    CHECK(to_json(loaded.config()) == to_json(model.config()));
    auto a = model.named_parameters();
    auto b = loaded.named_parameters();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].first == b[i].first);
        CHECK(testutil::vec(a[i].second) == testutil::vec(b[i].second));
    }
    const auto& video = fx.val.videos[0];
    const auto p1 = sliding_window_predict(model, store, video);
    const auto p2 = sliding_window_predict(loaded, store, video);
    for (std::size_t f = 0; f < p1.size(); ++f) CHECK(p1[f].data == p2[f].data);
}

TEST_CASE("checkpoint load errors") {
    SaliencyModel model(tiny_model());
    testutil::TempDir dir("ckpt_err");
    const auto path = dir.path() / "m.sfom";
    model.save(path);
    std::string bytes;
    {
        std::ifstream is(path, std::ios::binary);
        std::ostringstream ss;
        ss << is.rdbuf();
        bytes = ss.str();
    }
    auto write = [&](const std::string& content) {
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        os << content;
    };
    write("NOTACKPT" + bytes.substr(8));
    CHECK_THROWS_AS(SaliencyModel::load(path), FormatError);
    write(bytes.substr(0, bytes.size() - 5));
    CHECK_THROWS_AS(SaliencyModel::load(path), FormatError);
    write(bytes + "x");
    CHECK_THROWS_AS(SaliencyModel::load(path), FormatError);

    // Same-length edit of the embedded config: the stored tensors no longer fit.
    auto edited = bytes;
    const auto pos = edited.find("\"fusion_channels\":8");
    REQUIRE(pos != std::string::npos);
    edited[pos + std::string("\"fusion_channels\":").size()] = '6';
    write(edited);
    CHECK_THROWS_AS(SaliencyModel::load(path), ShapeError);
    CHECK_THROWS_AS(SaliencyModel::load(dir.path() / "absent.sfom"), IoError);
}

TEST_CASE("ablation runner") {
    CHECK(standard_ablation().size() == 7);
    CHECK(standard_ablation()[0].label() == "TCFE+DFD+SFD");
    AblationSpec reduced{EncoderVariant::reduced_frames, BranchSet::parse("TCFE")};
    CHECK(reduced.label() == "reduced-frames:TCFE");

    SynthFixture fx(3, 4);
    AblationConfig cfg;
    cfg.model = tiny_model();
    cfg.train = quick_train(2);
    testutil::TempDir work("ablation_work");
    cfg.work_dir = work.path();
    cfg.eval_frames_per_video = 2;

    const auto none = run_ablation({}, fx.dir.path(), cfg);
    CHECK(none.empty());
    std::ostringstream empty_table;
    write_ablation_table(empty_table, none);
    std::size_t lines = 0;
    for (char c : empty_table.str()) lines += c == '\n';
    CHECK(lines == 2);

    const std::vector<AblationSpec> specs{
        {EncoderVariant::toy_default, BranchSet::parse("TCFE")},
        {EncoderVariant::toy_default, BranchSet()},
        {EncoderVariant::reduced_frames, BranchSet::all()},
        {EncoderVariant::imported_features, BranchSet::parse("DFD+SFD")},
    };
    const auto rows = run_ablation(specs, fx.dir.path(), cfg);
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].ok);
    CHECK(rows[0].label == "TCFE");
    CHECK(rows[0].frames_scored == 2);
    CHECK_FALSE(rows[1].ok);
    CHECK_FALSE(rows[1].error.empty());
    CHECK(rows[2].ok);
    CHECK(rows[3].ok);
    CHECK(rows[3].label == "imported-features:DFD+SFD");

    std::ostringstream table;
    write_ablation_table(table, rows);
    CHECK(table.str().find("failed") != std::string::npos);
    CHECK(to_json(rows).size() == 4);

    const auto again = run_ablation(specs, fx.dir.path(), cfg);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(again[i].metrics.cc == rows[i].metrics.cc);
        CHECK(again[i].metrics.nss == rows[i].metrics.nss);
    }
}
