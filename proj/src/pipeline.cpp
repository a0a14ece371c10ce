#include "salfom/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <random>
#include <sstream>

#include "salfom/error.hpp"
#include "salfom/layout.hpp"
#include "salfom/losses.hpp"
#include "salfom/ops.hpp"

namespace salfom {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
    if (!(adam.lr >= 0.0) || !std::isfinite(adam.lr)) throw ConfigError("train.lr must be finite and >= 0");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (max_steps < 0) throw ConfigError("train.max_steps must be >= 0");
    if (validate_every < 1) throw ConfigError("train.validate_every must be >= 1");
    if (patience < 1) throw ConfigError("train.patience must be >= 1");
    if (val_max_samples < 1) throw ConfigError("train.val_max_samples must be >= 1");
    if (log_every < 0) throw ConfigError("train.log_every must be >= 0");
}

nlohmann::json to_json(const TrainConfig& cfg) {
    nlohmann::json j = {{"lr", cfg.adam.lr},
                        {"beta1", cfg.adam.beta1},
                        {"beta2", cfg.adam.beta2},
                        {"adam_eps", cfg.adam.eps},
                        {"batch_size", cfg.batch_size},
                        {"max_steps", cfg.max_steps},
                        {"validate_every", cfg.validate_every},
                        {"patience", cfg.patience},
                        {"seed", cfg.seed},
                        {"val_max_samples", cfg.val_max_samples},
                        {"freeze_encoder", cfg.freeze_encoder},
                        {"early_stop", cfg.early_stop == EarlyStopMetric::val_loss ? "val_loss" : "val_cc"},
                        {"log_every", cfg.log_every}};
    if (cfg.feature_dir) j["feature_dir"] = cfg.feature_dir->string();
    return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base) {
    TrainConfig c = std::move(base);
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "lr") c.adam.lr = value.get<double>();
            else if (key == "beta1") c.adam.beta1 = value.get<double>();
            else if (key == "beta2") c.adam.beta2 = value.get<double>();
            else if (key == "adam_eps") c.adam.eps = value.get<double>();
            else if (key == "batch_size") c.batch_size = value.get<int>();
            else if (key == "max_steps") c.max_steps = value.get<int>();
            else if (key == "validate_every") c.validate_every = value.get<int>();
            else if (key == "patience") c.patience = value.get<int>();
            else if (key == "seed") c.seed = value.get<std::uint64_t>();
            else if (key == "val_max_samples") c.val_max_samples = value.get<int>();
            else if (key == "freeze_encoder") c.freeze_encoder = value.get<bool>();
            else if (key == "log_every") c.log_every = value.get<int>();
            else if (key == "feature_dir") c.feature_dir = value.get<std::string>();
            else if (key == "early_stop") {
                const auto s = value.get<std::string>();
                if (s == "val_loss") c.early_stop = EarlyStopMetric::val_loss;
                else if (s == "val_cc") c.early_stop = EarlyStopMetric::val_cc;
                else throw ConfigError("train.early_stop must be val_loss or val_cc, got '" + s + "'");
            } else {
                throw ConfigError("unknown train key '" + key + "'");
            }
        }
    } catch (const nlohmann::json::exception& ex) {
        throw ConfigError(std::string("bad train config: ") + ex.what());
    }
    c.validate();
    return c;
}

std::vector<SampleRef> all_windows(const data::DatasetIndex& index) {
    std::vector<SampleRef> out;
    for (std::size_t v = 0; v < index.videos.size(); ++v) {
        for (std::int64_t f = 0; f < index.videos[v].frame_count; ++f) out.push_back({v, f});
    }
    return out;
}

fs::path feature_path(const fs::path& dir, const std::string& video, std::int64_t frame) {
    auto name = layout::frame_file_name(frame);
    name.replace(name.size() - 4, 4, ".sfeat");
    return dir / video / name;
}

namespace {

struct Summary {
    double min = 0.0, max = 0.0;
    std::int64_t non_finite = 0;
};

Summary summarize(std::span<const double> v) {
    Summary s;
    bool first = true;
    for (double x : v) {
        if (!std::isfinite(x)) {
            ++s.non_finite;
            continue;
        }
        if (first) s.min = s.max = x;
        s.min = std::min(s.min, x);
        s.max = std::max(s.max, x);
        first = false;
    }
    return s;
}

class Runner {
public:
    Runner(SaliencyModel& model, const TrainConfig& cfg, data::FrameStore& store)
        : model_(model), cfg_(cfg), store_(store) {}

    Tensor predict(const data::VideoEntry& video, std::int64_t frame) const {
        if (cfg_.feature_dir) {
            const auto vol = import_features(feature_path(*cfg_.feature_dir, video.video_id, frame),
                                             model_.config().encoder);
            return model_.forward_features(vol.to_tensor());
        }
        const auto idx = data::window_indices(frame, model_.config().encoder.window_frames, video.frame_count);
        return model_.forward(store_.clip(video, idx).to_tensor());
    }

private:
    SaliencyModel& model_;
    const TrainConfig& cfg_;
    data::FrameStore& store_;
};

[[noreturn]] void dump_and_throw(const TrainConfig& cfg, int step, const data::VideoEntry& video,
                                 std::int64_t frame, const Tensor& pred, const GroundTruthMap& target,
                                 const losses::LossTerms& terms, SaliencyModel& model) {
    const auto ps = summarize(pred.data());
    const auto ts = summarize(target.data);
    nlohmann::json bad_params = nlohmann::json::array();
    for (const auto& [name, t] : model.named_parameters()) {
        if (summarize(t.data()).non_finite > 0) bad_params.push_back(name);
    }
    nlohmann::json dump = {
        {"step", step},
        {"video", video.video_id},
        {"frame", frame},
        {"window", data::window_indices(frame, model.config().encoder.window_frames, video.frame_count)},
        {"kl", std::isfinite(terms.kl) ? nlohmann::json(terms.kl) : nlohmann::json(std::to_string(terms.kl))},
        {"cc", std::isfinite(terms.cc) ? nlohmann::json(terms.cc) : nlohmann::json(std::to_string(terms.cc))},
        {"prediction", {{"min", ps.min}, {"max", ps.max}, {"non_finite", ps.non_finite}}},
        {"target", {{"min", ts.min}, {"max", ts.max}, {"non_finite", ts.non_finite}}},
        {"non_finite_parameters", bad_params},
        {"train_config", to_json(cfg)},
    };
    fs::create_directories(cfg.diagnostics_dir);
    const auto path = cfg.diagnostics_dir / ("nonfinite_step_" + std::to_string(step) + ".json");
    std::ofstream(path) << dump.dump(2) << '\n';
    throw NumericError("non-finite loss at step " + std::to_string(step) + " on " + video.video_id + " frame " +
                       std::to_string(frame) + "; diagnostics in " + path.string());
}

}  // namespace

TrainResult train(SaliencyModel& model, const data::DatasetIndex& train_set, const data::DatasetIndex* val_set,
                  const TrainConfig& cfg, data::FrameStore& store, const LogFn& log) {
    cfg.validate();
    const auto say = [&](const std::string& msg) {
        if (log) log(msg);
    };
    if (train_set.videos.empty()) throw PreconditionError("training split has no videos");
    const auto& enc = model.config().encoder;
    if (store.height() != enc.image_height || store.width() != enc.image_width) {
        throw ConfigError("frame store resolution does not match the model input size");
    }
    const data::DatasetIndex* val = val_set;
    if (val == nullptr || val->videos.empty()) {
        say("warning: no validation videos, validating on the training split");
        val = &train_set;
    }

    const bool frozen = cfg.freeze_encoder || cfg.feature_dir.has_value();
    auto params = model.named_parameters();
    std::vector<Tensor> trainable;
    std::vector<Tensor> frozen_params;
    for (auto& [name, t] : params) {
        if (frozen && name.rfind("encoder.", 0) == 0) {
            t.set_requires_grad(false);
            frozen_params.push_back(t);
        } else {
            trainable.push_back(t);
        }
    }
    Adam opt(trainable, cfg.adam);

    const auto samples = all_windows(train_set);
    auto val_all = all_windows(*val);
    std::vector<SampleRef> val_samples;
    const auto n_val = std::min<std::size_t>(val_all.size(), static_cast<std::size_t>(cfg.val_max_samples));
    for (std::size_t k = 0; k < n_val; ++k) val_samples.push_back(val_all[k * val_all.size() / n_val]);

    Runner runner(model, cfg, store);
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order;
    std::size_t cursor = 0;
    auto next_sample = [&]() -> const SampleRef& {
        if (cursor == order.size()) {
            order.resize(samples.size());
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            std::shuffle(order.begin(), order.end(), rng);
            cursor = 0;
        }
        return samples[order[cursor++]];
    };

    std::vector<std::vector<double>> best;
    double best_value = 0.0;
    int bad_rounds = 0;
    TrainResult result;

    auto validate = [&](int step) {
        NoGradGuard no_grad;
        double loss = 0.0, cc = 0.0;
        for (const auto& s : val_samples) {
            const auto& video = val->videos[s.video];
            const Tensor pred = runner.predict(video, s.frame);
            const auto& target = store.density(video, s.frame);
            loss += losses::total_loss(pred, target.data, losses::CcMode::guard).total.item();
            SaliencyMap m{pred.dim(0), pred.dim(1), {pred.data().begin(), pred.data().end()}, false};
            cc += cc_metric(m, target).value;
        }
        const double n = static_cast<double>(val_samples.size());
        ValidationRecord rec{step, loss / n, cc / n};
        result.validations.push_back(rec);
        const double value = cfg.early_stop == EarlyStopMetric::val_loss ? rec.loss : -rec.cc;
        const bool improved = best.empty() || value < best_value;
        say("validation step " + std::to_string(step) + " loss " + std::to_string(rec.loss) + " cc " +
            std::to_string(rec.cc) + (improved ? " (best)" : ""));
        if (improved) {
            best_value = value;
            result.best_step = step;
            bad_rounds = 0;
            best.clear();
            for (const auto& [name, t] : params) best.emplace_back(t.data().begin(), t.data().end());
        } else {
            ++bad_rounds;
        }
        return bad_rounds >= cfg.patience;
    };

    bool cc_warned = false;
    for (int step = 1; step <= cfg.max_steps; ++step) {
        opt.zero_grad();
        StepRecord rec{step, 0.0, 0.0, 0.0, false};
        for (int b = 0; b < cfg.batch_size; ++b) {
            const auto& s = next_sample();
            const auto& video = train_set.videos[s.video];
            const Tensor pred = runner.predict(video, s.frame);
            const auto& target = store.density(video, s.frame);
            if (summarize(pred.data()).non_finite > 0) {
                losses::LossTerms nan_terms;
                nan_terms.kl = nan_terms.cc = std::numeric_limits<double>::quiet_NaN();
                dump_and_throw(cfg, step, video, s.frame, pred, target, nan_terms, model);
            }
            auto terms = losses::total_loss(pred, target.data, losses::CcMode::guard);
            const double total = terms.total.item();
            if (!std::isfinite(total)) dump_and_throw(cfg, step, video, s.frame, pred, target, terms, model);
            if (terms.cc_skipped && !cc_warned) {
                say("warning: constant ground truth for " + video.video_id + " frame " + std::to_string(s.frame) +
                    ", CC term skipped");
                cc_warned = true;
            }
            ops::scale(terms.total, 1.0 / cfg.batch_size).backward();
            rec.loss += total / cfg.batch_size;
            rec.kl += terms.kl / cfg.batch_size;
            rec.cc += terms.cc / cfg.batch_size;
            rec.cc_skipped = rec.cc_skipped || terms.cc_skipped;
        }
        opt.step();
        result.steps.push_back(rec);
        result.steps_run = step;
        if (cfg.log_every > 0 && step % cfg.log_every == 0) {
            say("step " + std::to_string(step) + " loss " + std::to_string(rec.loss) + " kl " +
                std::to_string(rec.kl) + " cc " + std::to_string(rec.cc));
        }
        if (step % cfg.validate_every == 0 || step == cfg.max_steps) {
            if (validate(step)) {
                result.stopped_early = true;
                say("early stop at step " + std::to_string(step) + ", best step " +
                    std::to_string(result.best_step));
                break;
            }
        }
    }
    if (!best.empty()) {
        for (std::size_t k = 0; k < params.size(); ++k) {
            std::copy(best[k].begin(), best[k].end(), params[k].second.mutable_data().begin());
        }
    }
    for (auto& t : frozen_params) t.set_requires_grad(true);
    return result;
}

void export_window_features(const SaliencyModel& model, const data::DatasetIndex& index, data::FrameStore& store,
                            const fs::path& dir) {
    const auto t = model.config().encoder.window_frames;
    for (const auto& video : index.videos) {
        fs::create_directories(dir / video.video_id);
        for (std::int64_t f = 0; f < video.frame_count; ++f) {
            const auto clip = store.clip(video, data::window_indices(f, t, video.frame_count));
            export_features(model.encoder().encode(clip), feature_path(dir, video.video_id, f));
        }
    }
}

std::vector<SaliencyMap> sliding_window_predict(const SaliencyModel& model, std::int64_t frame_count,
                                                const ClipFetcher& fetch) {
    if (frame_count < 1) throw PreconditionError("sliding-window prediction needs at least one frame");
    const auto t = model.config().encoder.window_frames;
    std::vector<SaliencyMap> maps;
    maps.reserve(static_cast<std::size_t>(frame_count));
    for (std::int64_t k = 0; k < frame_count; ++k) {
        maps.push_back(model.predict(fetch(data::window_indices(k, t, frame_count))));
    }
    return maps;
}

std::vector<SaliencyMap> sliding_window_predict(const SaliencyModel& model, data::FrameStore& store,
                                                const data::VideoEntry& video) {
    return sliding_window_predict(model, video.frame_count,
                                  [&](const std::vector<std::int64_t>& idx) { return store.clip(video, idx); });
}

std::vector<SaliencyMap> sliding_window_predict_features(const SaliencyModel& model, const fs::path& feature_dir,
                                                         const data::VideoEntry& video) {
    if (video.frame_count < 1) throw PreconditionError("sliding-window prediction needs at least one frame");
    std::vector<SaliencyMap> maps;
    for (std::int64_t k = 0; k < video.frame_count; ++k) {
        maps.push_back(model.predict_features(
            import_features(feature_path(feature_dir, video.video_id, k), model.config().encoder)));
    }
    return maps;
}

std::vector<std::uint8_t> to_gray8(const SaliencyMap& map) {
    const auto [lo, hi] = std::minmax_element(map.data.begin(), map.data.end());
    std::vector<std::uint8_t> out(map.data.size(), 0);
    if (lo == map.data.end() || !(*hi > *lo)) return out;
    const double range = *hi - *lo;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = static_cast<std::uint8_t>(std::lround(255.0 * (map.data[i] - *lo) / range));
    }
    return out;
}

const char* to_string(EncoderVariant v) {
    switch (v) {
        case EncoderVariant::toy_default: return "toy-default";
        case EncoderVariant::reduced_frames: return "reduced-frames";
        case EncoderVariant::imported_features: return "imported-features";
    }
    return "toy-default";
}

EncoderVariant parse_encoder_variant(const std::string& name) {
    if (name == "toy-default" || name == "default") return EncoderVariant::toy_default;
    if (name == "reduced-frames") return EncoderVariant::reduced_frames;
    if (name == "imported-features") return EncoderVariant::imported_features;
    throw ConfigError("unknown encoder variant '" + name +
                      "' (expected toy-default, reduced-frames or imported-features)");
}

std::string AblationSpec::label() const {
    if (branches.empty()) throw ConfigError("ablation spec needs a non-empty branch set");
    if (encoder == EncoderVariant::toy_default) return branches.label();
    return std::string(to_string(encoder)) + ":" + branches.label();
}

std::vector<AblationSpec> standard_ablation() {
    const BranchSet t = BranchSet().with(Branch::tcfe);
    const BranchSet d = BranchSet().with(Branch::dfd);
    const BranchSet s = BranchSet().with(Branch::sfd);
    std::vector<AblationSpec> out;
    for (BranchSet b : {BranchSet::all(), t, d, s, t.with(Branch::dfd), t.with(Branch::sfd), d.with(Branch::sfd)}) {
        out.push_back({EncoderVariant::toy_default, b});
    }
    return out;
}

std::vector<AblationRow> run_ablation(const std::vector<AblationSpec>& specs, const fs::path& data_root,
                                      const AblationConfig& cfg, const LogFn& log) {
    const auto say = [&](const std::string& msg) {
        if (log) log(msg);
    };
    std::vector<AblationRow> rows;
    if (specs.empty()) return rows;

    const auto train_idx = data::index_dataset(data_root, data::Split::train);
    const auto val_idx = data::index_dataset(data_root, data::Split::val);
    for (const auto* idx : {&train_idx, &val_idx}) {
        if (!idx->ok()) {
            std::string msg = "dataset problems:";
            for (const auto& e : idx->errors) msg += "\n  " + e;
            throw ConfigError(msg);
        }
    }
    const data::DatasetIndex& eval_idx = val_idx.videos.empty() ? train_idx : val_idx;
    if (val_idx.videos.empty()) say("warning: no validation split, scoring on the training split");

    data::FrameStore store(cfg.model.encoder.image_height, cfg.model.encoder.image_width);
    for (const auto& spec : specs) {
        AblationRow row;
        row.spec = spec;
        try {
            row.label = spec.label();
            ModelConfig mc = cfg.model;
            if (spec.encoder == EncoderVariant::reduced_frames) {
                mc = mc.with_window_frames(std::max(1, mc.encoder.window_frames / 2));
            }
            mc.branches = spec.branches;
            SaliencyModel model(mc);
            row.parameters = model.parameter_count();
            TrainConfig tc = cfg.train;
            if (spec.encoder == EncoderVariant::imported_features) {
                std::string dir_name = "features_" + row.label;
                std::replace_if(dir_name.begin(), dir_name.end(), [](char c) { return c == ':' || c == '+'; }, '_');
                const auto dir = cfg.work_dir / dir_name;
                export_window_features(model, train_idx, store, dir);
                export_window_features(model, eval_idx, store, dir);
                tc.feature_dir = dir;
                tc.freeze_encoder = true;
            }
            say("ablation: training " + row.label);
            const auto result = train(model, train_idx, &val_idx, tc, store, log);
            row.steps = result.steps_run;

            MetricsReport report;
            const auto t = mc.encoder.window_frames;
            for (const auto& video : eval_idx.videos) {
                const auto n = video.frame_count;
                const auto m = cfg.eval_frames_per_video > 0 ? std::min<std::int64_t>(cfg.eval_frames_per_video, n) : n;
                for (std::int64_t k = 0; k < m; ++k) {
                    const auto frame = m == n ? k : (k * n) / m;
                    SaliencyMap pred =
                        tc.feature_dir
                            ? model.predict_features(import_features(
                                  feature_path(*tc.feature_dir, video.video_id, frame), mc.encoder))
                            : model.predict(store.clip(video, data::window_indices(frame, t, n)));
                    const auto density = store.native_density(video, frame);
                    const auto fx = store.fixations(video, frame);
                    pred.data = resize_map(pred.data, pred.height, pred.width, density.height, density.width);
                    pred.height = density.height;
                    pred.width = density.width;
                    FrameRecord rec;
                    rec.video = video.video_id;
                    rec.frame = frame;
                    rec.metrics.cc = cc_metric(pred, density).value;
                    rec.metrics.nss = nss(pred, fx).value;
                    rec.metrics.sim = sim(pred, density);
                    rec.metrics.auc_j = auc_judd(pred, fx);
                    report.frames.push_back(rec);
                }
            }
            aggregate(report);
            row.metrics = report.dataset;
            row.frames_scored = static_cast<std::int64_t>(report.frames.size());
            row.ok = row.frames_scored > 0;
            if (!row.ok) row.error = "no frames scored";
        } catch (const std::exception& ex) {
            row.ok = false;
            row.error = ex.what();
            if (row.label.empty()) row.label = "(invalid)";
            say("ablation: " + row.label + " failed: " + row.error);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_ablation_table(std::ostream& os, const std::vector<AblationRow>& rows) {
    char line[256];
    std::snprintf(line, sizeof line, "| %-36s | %8s | %8s | %8s | %8s |\n", "Variant", "CC", "NSS", "SIM", "AUC-J");
    os << line;
    os << "|" << std::string(38, '-') << "|" << std::string(10, '-') << "|" << std::string(10, '-') << "|"
       << std::string(10, '-') << "|" << std::string(10, '-') << "|\n";
    for (const auto& r : rows) {
        if (r.ok) {
            std::snprintf(line, sizeof line, "| %-36s | %8.4f | %8.4f | %8.4f | %8.4f |\n", r.label.c_str(),
                          r.metrics.cc, r.metrics.nss, r.metrics.sim, r.metrics.auc_j);
        } else {
            std::snprintf(line, sizeof line, "| %-36s | %8s | %8s | %8s | %8s |\n", r.label.c_str(), "failed",
                          "failed", "failed", "failed");
        }
        os << line;
    }
    for (const auto& r : rows) {
        if (!r.ok) os << r.label << ": " << r.error << '\n';
    }
}

nlohmann::json to_json(const std::vector<AblationRow>& rows) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : rows) {
        nlohmann::json j = {{"label", r.label},
                            {"encoder_variant", to_string(r.spec.encoder)},
                            {"branches", r.spec.branches.label()},
                            {"ok", r.ok},
                            {"steps", r.steps},
                            {"parameters", r.parameters},
                            {"frames_scored", r.frames_scored}};
        if (r.ok) {
            j["cc"] = r.metrics.cc;
            j["nss"] = r.metrics.nss;
            j["sim"] = r.metrics.sim;
            j["auc_j"] = r.metrics.auc_j;
        } else {
            j["error"] = r.error;
        }
        out.push_back(std::move(j));
    }
    return out;
}

}  // namespace salfom
