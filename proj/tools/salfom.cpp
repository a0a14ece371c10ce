// Command-line front end: synth, train, predict, evaluate, ablate, export-features.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "salfom/data.hpp"
#include "salfom/error.hpp"
#include "salfom/image_io.hpp"
#include "salfom/layout.hpp"
#include "salfom/metrics.hpp"
#include "salfom/model.hpp"
#include "salfom/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace salfom;

namespace {

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string data_root;
    std::string preset;
};

json load_config(const Common& c) {
    if (c.config_path.empty()) return json::object();
    std::ifstream is(c.config_path);
    if (!is) throw IoError("cannot open config file " + c.config_path);
    try {
        json j = json::parse(is);
        if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
        for (const auto& [key, value] : j.items()) {
            if (key != "preset" && key != "encoder" && key != "decoder" && key != "train" && key != "data" &&
                key != "ablation" && key != "branches" && key != "init_seed") {
                throw ConfigError("unknown config section '" + key + "'");
            }
        }
        return j;
    } catch (const json::exception& ex) {
        throw ConfigError(c.config_path + ": " + ex.what());
    }
}

fs::path data_root(const Common& c, const json& cfg) {
    if (!c.data_root.empty()) return c.data_root;
    if (cfg.contains("data") && cfg["data"].contains("root")) return cfg["data"]["root"].get<std::string>();
    if (const char* env = std::getenv("SALFOM_DATA_ROOT")) return env;
    throw ConfigError("no dataset root: pass --data, set data.root or SALFOM_DATA_ROOT");
}

ModelConfig model_config(const Common& c, json cfg, const fs::path* root) {
    if (!c.preset.empty()) cfg["preset"] = c.preset;
    if (!cfg.contains("preset")) cfg["preset"] = "toy";
    ModelConfig mc = model_config_from_json(cfg);
    if (c.seed) mc.init_seed = *c.seed;
    const bool explicit_std = cfg.contains("encoder") && (cfg["encoder"].contains("pixel_mean") ||
                                                           cfg["encoder"].contains("pixel_std"));
    if (root && !explicit_std) {
        if (auto st = data::meta_standardization(*root)) {
            mc.encoder.pixel_mean = st->mean;
            mc.encoder.pixel_std = st->std;
        } else {
            const auto idx = data::index_dataset(*root, data::Split::train);
            const auto computed = data::compute_standardization(idx);
            mc.encoder.pixel_mean = computed.mean;
            mc.encoder.pixel_std = computed.std;
        }
    }
    mc.validate();
    return mc;
}

TrainConfig train_config(const Common& c, const json& cfg) {
    TrainConfig tc;
    if (cfg.contains("train")) tc = train_config_from_json(cfg["train"], tc);
    if (c.seed) tc.seed = *c.seed;
    return tc;
}

void require_ok(const data::DatasetIndex& idx) {
    for (const auto& w : idx.warnings) std::cerr << "warning: " << w << '\n';
    if (idx.ok()) return;
    std::string msg = "dataset validation failed:";
    for (const auto& e : idx.errors) msg += "\n  " + e;
    throw ConfigError(msg);
}

void log_line(const std::string& msg) { std::cerr << msg << '\n'; }

image::Image overlay(const image::Image& frame, const SaliencyMap& map, const std::optional<GroundTruthMap>& gt) {
    auto heat = [&](std::vector<double> v, std::int64_t h, std::int64_t w) {
        v = resize_map(v, h, w, frame.height, frame.width);
        const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
        const double range = *hi > *lo ? *hi - *lo : 1.0;
        const double base = *lo;
        for (double& x : v) x = (x - base) / range;
        auto color = image::colorize(v, frame.height, frame.width);
        for (std::size_t i = 0; i < color.data.size(); ++i) {
            color.data[i] = 0.5 * color.data[i] + 0.5 * frame.data[i];
        }
        return color;
    };
    std::vector<image::Image> panels{frame, heat(map.data, map.height, map.width)};
    if (gt) panels.push_back(heat(gt->data, gt->height, gt->width));
    image::Image out{frame.height, frame.width * static_cast<std::int64_t>(panels.size()), 3, {}};
    out.data.resize(static_cast<std::size_t>(out.height * out.width * 3));
    for (std::size_t p = 0; p < panels.size(); ++p) {
        for (std::int64_t y = 0; y < frame.height; ++y) {
            std::copy_n(panels[p].data.begin() + y * frame.width * 3, frame.width * 3,
                        out.data.begin() + (y * out.width + static_cast<std::int64_t>(p) * frame.width) * 3);
        }
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Video saliency prediction: synthetic data, training, inference, evaluation and ablations"};
    app.require_subcommand(1);
    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config_path, "JSON config with encoder/decoder/train/data/ablation sections");
        sub->add_option("--seed", common.seed, "Seed for data generation, initialization, sampling and scoring");
    };

    auto* synth = app.add_subcommand("synth", "Generate a synthetic moving-blob dataset");
    data::SynthSpec spec;
    std::string synth_out;
    add_common(synth);
    synth->add_option("--out", synth_out, "Output dataset root")->required();
    synth->add_option("--videos", spec.videos, "Number of videos")->capture_default_str();
    synth->add_option("--frames", spec.frames, "Frames per video")->capture_default_str();
    synth->add_option("--resolution", spec.resolution, "Frame width and height")->capture_default_str();
    synth->add_option("--fixations", spec.fixations_per_frame, "Fixations sampled per frame")->capture_default_str();

    auto* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint");
    std::string ckpt_out = "checkpoint.sfom", log_path;
    std::optional<int> steps, validate_every, patience;
    std::optional<double> lr;
    bool freeze = false;
    add_common(train_cmd);
    train_cmd->add_option("--data", common.data_root, "Dataset root (default: SALFOM_DATA_ROOT)");
    train_cmd->add_option("--preset", common.preset, "Model preset: toy, desk or large");
    train_cmd->add_option("--out", ckpt_out, "Checkpoint path")->capture_default_str();
    train_cmd->add_option("--steps", steps, "Maximum optimizer steps");
    train_cmd->add_option("--lr", lr, "Learning rate");
    train_cmd->add_option("--validate-every", validate_every, "Steps between validations");
    train_cmd->add_option("--patience", patience, "Validations without improvement before stopping");
    train_cmd->add_flag("--freeze-encoder", freeze, "Train the decoder only");
    train_cmd->add_option("--log", log_path, "Write per-step and validation records as JSON lines");

    auto* predict_cmd = app.add_subcommand("predict", "Write per-frame saliency maps for a split");
    std::string ckpt_in, pred_out, split_name = "val", video_filter;
    bool with_overlay = false;
    add_common(predict_cmd);
    predict_cmd->add_option("--checkpoint", ckpt_in, "Checkpoint to load")->required();
    predict_cmd->add_option("--data", common.data_root, "Dataset root (default: SALFOM_DATA_ROOT)");
    predict_cmd->add_option("--split", split_name, "train, val or test")->capture_default_str();
    predict_cmd->add_option("--video", video_filter, "Only this video");
    predict_cmd->add_option("--out", pred_out, "Output directory")->required();
    predict_cmd->add_flag("--overlay", with_overlay, "Also write side-by-side frame/prediction/ground-truth images");

    auto* eval_cmd = app.add_subcommand("evaluate", "Score predicted maps against ground truth");
    std::string pred_in, report_out = "report", pool_name = "other_videos";
    int n_splits = 100;
    add_common(eval_cmd);
    eval_cmd->add_option("--pred", pred_in, "Prediction directory")->required();
    eval_cmd->add_option("--data", common.data_root, "Dataset root (default: SALFOM_DATA_ROOT)");
    eval_cmd->add_option("--split", split_name, "train, val or test")->capture_default_str();
    eval_cmd->add_option("--pool", pool_name, "Shuffled-AUC negatives: other_videos or other_frames")
        ->check(CLI::IsMember({"other_videos", "other_frames"}))
        ->capture_default_str();
    eval_cmd->add_option("--splits", n_splits, "Shuffled-AUC negative draws")->capture_default_str();
    eval_cmd->add_option("--out", report_out, "Report prefix: writes <prefix>.jsonl and <prefix>.csv")
        ->capture_default_str();

    auto* ablate_cmd = app.add_subcommand("ablate", "Train and compare decoder branch variants");
    std::vector<std::string> branch_sets, variants;
    std::string table_out, work_dir = "ablation_work";
    std::optional<int> eval_frames;
    add_common(ablate_cmd);
    ablate_cmd->add_option("--data", common.data_root, "Dataset root (default: SALFOM_DATA_ROOT)");
    ablate_cmd->add_option("--preset", common.preset, "Model preset: toy, desk or large");
    ablate_cmd->add_option("--branches", branch_sets, "Branch set such as TCFE or TCFE+DFD; repeatable");
    ablate_cmd->add_option("--encoder-variant", variants,
                           "toy-default, reduced-frames or imported-features; repeatable");
    ablate_cmd->add_option("--steps", steps, "Training steps per variant");
    ablate_cmd->add_option("--lr", lr, "Learning rate");
    ablate_cmd->add_option("--eval-frames", eval_frames, "Validation frames scored per video (0 = all)");
    ablate_cmd->add_option("--work-dir", work_dir, "Scratch directory for feature files")->capture_default_str();
    ablate_cmd->add_option("--out", table_out, "Also write the rows as JSON");

    auto* export_cmd = app.add_subcommand("export-features", "Write encoder features for every window of a split");
    std::string feat_out;
    add_common(export_cmd);
    export_cmd->add_option("--checkpoint", ckpt_in, "Checkpoint to load")->required();
    export_cmd->add_option("--data", common.data_root, "Dataset root (default: SALFOM_DATA_ROOT)");
    export_cmd->add_option("--split", split_name, "train, val or test")->capture_default_str();
    export_cmd->add_option("--out", feat_out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        const json cfg = load_config(common);

        if (*synth) {
            if (common.seed) spec.seed = *common.seed;
            data::synth_dataset(spec, synth_out);
            std::cout << "wrote " << spec.videos << " videos x " << spec.frames << " frames to " << synth_out << '\n';
            return 0;
        }

        if (*train_cmd) {
            const auto root = data_root(common, cfg);
            ModelConfig mc = model_config(common, cfg, &root);
            TrainConfig tc = train_config(common, cfg);
            if (steps) tc.max_steps = *steps;
            if (lr) tc.adam.lr = *lr;
            if (validate_every) tc.validate_every = *validate_every;
            if (patience) tc.patience = *patience;
            if (freeze) tc.freeze_encoder = true;
            tc.diagnostics_dir = fs::path(ckpt_out).parent_path().empty() ? fs::path(".") : fs::path(ckpt_out).parent_path();
            tc.validate();
            const auto train_idx = data::index_dataset(root, data::Split::train);
            const auto val_idx = data::index_dataset(root, data::Split::val);
            require_ok(train_idx);
            require_ok(val_idx);
            SaliencyModel model(mc);
            data::FrameStore store(mc.encoder.image_height, mc.encoder.image_width);
            const auto result = train(model, train_idx, &val_idx, tc, store, log_line);
            model.save(ckpt_out);
            if (!log_path.empty()) {
                std::ofstream os(log_path);
                for (const auto& s : result.steps) {
                    os << json{{"step", s.step}, {"loss", s.loss}, {"kl", s.kl}, {"cc", s.cc},
                               {"cc_skipped", s.cc_skipped}}.dump() << '\n';
                }
                for (const auto& v : result.validations) {
                    os << json{{"validation_step", v.step}, {"loss", v.loss}, {"cc", v.cc}}.dump() << '\n';
                }
            }
            std::cout << "trained " << result.steps_run << " steps, best validation at step " << result.best_step
                      << "; checkpoint " << ckpt_out << '\n';
            return 0;
        }

        if (*predict_cmd) {
            const auto root = data_root(common, cfg);
            const auto model = SaliencyModel::load(ckpt_in);
            const auto& enc = model.config().encoder;
            const auto idx = data::index_dataset(root, data::parse_split(split_name));
            require_ok(idx);
            data::FrameStore store(enc.image_height, enc.image_width);
            std::int64_t written = 0;
            for (const auto& video : idx.videos) {
                if (!video_filter.empty() && video.video_id != video_filter) continue;
                const auto maps = sliding_window_predict(model, store, video);
                for (std::int64_t k = 0; k < video.frame_count; ++k) {
                    const auto& m = maps[static_cast<std::size_t>(k)];
                    const auto name = layout::frame_file_name(k);
                    image::write_gray8(fs::path(pred_out) / video.video_id / name, m.height, m.width, to_gray8(m));
                    if (with_overlay) {
                        const auto frame = image::read_rgb(video.frames[static_cast<std::size_t>(k)]);
                        std::optional<GroundTruthMap> gt;
                        if (!video.maps.empty()) gt = store.native_density(video, k);
                        image::write_png(fs::path(pred_out) / video.video_id / "overlay" / name,
                                         overlay(frame, m, gt));
                    }
                    ++written;
                }
            }
            if (written == 0) throw ConfigError("no frames predicted");
            std::cout << "wrote " << written << " maps to " << pred_out << '\n';
            return 0;
        }

        if (*eval_cmd) {
            const auto root = data_root(common, cfg);
            ShuffleSpec shuffle;
            shuffle.pool = pool_name == "other_frames" ? ShufflePool::other_frames : ShufflePool::other_videos;
            shuffle.splits = n_splits;
            const auto report = evaluate_directory(pred_in, root / split_name, shuffle, common.seed.value_or(0));
            std::ofstream jl(report_out + ".jsonl");
            write_jsonl(jl, report);
            std::ofstream csv(report_out + ".csv");
            write_csv(csv, report);
            write_summary(std::cout, report);
            return report.ok() ? 0 : 1;
        }

        if (*ablate_cmd) {
            const auto root = data_root(common, cfg);
            AblationConfig ac;
            ac.model = model_config(common, cfg, &root);
            ac.train = train_config(common, cfg);
            const json ab = cfg.value("ablation", json::object());
            ac.eval_frames_per_video = ab.value("eval_frames_per_video", 0);
            if (steps) ac.train.max_steps = *steps;
            if (lr) ac.train.adam.lr = *lr;
            if (eval_frames) ac.eval_frames_per_video = *eval_frames;
            ac.work_dir = work_dir;
            ac.train.diagnostics_dir = work_dir;
            if (branch_sets.empty() && ab.contains("branches")) branch_sets = ab["branches"].get<std::vector<std::string>>();
            if (variants.empty() && ab.contains("encoder_variants")) {
                variants = ab["encoder_variants"].get<std::vector<std::string>>();
            }
            if (variants.empty()) variants.push_back("toy-default");
            std::vector<AblationSpec> specs;
            for (const auto& v : variants) {
                const auto ev = parse_encoder_variant(v);
                if (branch_sets.empty()) {
                    for (auto s : standard_ablation()) specs.push_back({ev, s.branches});
                } else {
                    for (const auto& b : branch_sets) {
                        const auto bs = BranchSet::parse(b);
                        if (bs.empty()) throw ConfigError("empty branch set '" + b + "'");
                        specs.push_back({ev, bs});
                    }
                }
            }
            const auto rows = run_ablation(specs, root, ac, log_line);
            write_ablation_table(std::cout, rows);
            if (!table_out.empty()) std::ofstream(table_out) << to_json(rows).dump(2) << '\n';
            const bool any_failed = std::any_of(rows.begin(), rows.end(), [](const AblationRow& r) { return !r.ok; });
            return any_failed ? 1 : 0;
        }

        if (*export_cmd) {
            const auto root = data_root(common, cfg);
            const auto model = SaliencyModel::load(ckpt_in);
            const auto idx = data::index_dataset(root, data::parse_split(split_name));
            require_ok(idx);
            data::FrameStore store(model.config().encoder.image_height, model.config().encoder.image_width);
            export_window_features(model, idx, store, feat_out);
            std::cout << "wrote features for " << idx.frame_total() << " windows to " << feat_out << '\n';
            return 0;
        }
    } catch (const salfom::Error& ex) {
        std::cerr << "error: " << ex.what() << '\n';
        return 1;
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << '\n';
        return 1;
    }
    return 0;
}
