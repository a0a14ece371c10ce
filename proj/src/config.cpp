#include "salfom/config.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "salfom/error.hpp"

namespace salfom {

namespace {

std::string list_str(const std::vector<int>& v) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
    os << ']';
    return os.str();
}

void require(bool cond, const std::string& message) {
    if (!cond) throw ConfigError(message);
}

bool non_increasing(const std::vector<int>& v) {
    return std::adjacent_find(v.begin(), v.end(), std::less<>()) == v.end();
}

}  // namespace

void EncoderConfig::validate() const {
    require(patch_size >= 1, "encoder.patch_size must be >= 1");
    require(embed_dim >= 1 && depth >= 0 && mlp_ratio >= 1, "encoder widths must be positive");
    require(heads >= 1 && embed_dim % heads == 0,
            "encoder.embed_dim " + std::to_string(embed_dim) + " not divisible by heads " +
                std::to_string(heads));
    require(window_frames >= 1, "encoder.window_frames must be >= 1");
    require(image_height >= 1 && image_width >= 1, "encoder image size must be positive");
    require(image_height % patch_size == 0 && image_width % patch_size == 0,
            "encoder image size " + std::to_string(image_height) + "x" +
                std::to_string(image_width) + " not divisible by patch size " +
                std::to_string(patch_size));
    for (double s : pixel_std) require(s > 0.0, "encoder.pixel_std entries must be positive");
}

BranchSet BranchSet::parse(const std::string& text) {
    std::string upper;
    for (char ch : text) upper.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(ch))));
    if (upper == "ALL" || upper == "FULL") return all();
    BranchSet set;
    std::string token;
    auto flush = [&] {
        if (token.empty()) return;
        if (token == "TCFE") {
            set = set.with(Branch::tcfe);
        } else if (token == "DFD") {
            set = set.with(Branch::dfd);
        } else if (token == "SFD") {
            set = set.with(Branch::sfd);
        } else {
            throw ConfigError("unknown decoder branch '" + token + "'");
        }
        token.clear();
    };
    for (char ch : upper) {
        if (ch == '+' || ch == ',' || ch == ' ') {
            flush();
        } else {
            token.push_back(ch);
        }
    }
    flush();
    if (set.empty()) throw ConfigError("empty decoder branch set");
    return set;
}

std::string BranchSet::label() const {
    std::string out;
    auto add = [&](Branch b, const char* name) {
        if (!has(b)) return;
        if (!out.empty()) out += '+';
        out += name;
    };
    add(Branch::tcfe, "TCFE");
    add(Branch::dfd, "DFD");
    add(Branch::sfd, "SFD");
    return out.empty() ? "none" : out;
}

void DecoderConfig::validate() const {
    require(num_layers >= 1, "decoder.num_layers must be >= 1");
    const auto n = static_cast<std::size_t>(num_layers);
    require(tcfe_channels.size() == n && dfd_channels.size() == n && sfd_channels.size() == n &&
                dfd_spatial_scale.size() == n && dfd_temporal_schedule.size() == n,
            "decoder: every branch list must have num_layers = " + std::to_string(num_layers) +
                " entries");
    require(non_increasing(tcfe_channels),
            "decoder.tcfe_channels must be non-increasing, got " + list_str(tcfe_channels));
    require(non_increasing(dfd_temporal_schedule),
            "decoder.dfd_temporal_schedule must be non-increasing, got " +
                list_str(dfd_temporal_schedule));
    for (std::size_t i = 0; i < n; ++i) {
        require(tcfe_channels[i] >= 1 && dfd_channels[i] >= 1 && sfd_channels[i] >= 1,
                "decoder channel widths must be positive");
        require(dfd_spatial_scale[i] >= 1, "decoder.dfd_spatial_scale entries must be >= 1");
        require(dfd_temporal_schedule[i] >= 1, "decoder.dfd_temporal_schedule entries must be >= 1");
    }
    require(tcfe_heads >= 1 && tcfe_mlp_ratio >= 1, "decoder TCFE heads/mlp ratio must be positive");
    for (int w : window_size) require(w >= 1, "decoder.window_size entries must be >= 1");
    require(fusion_channels >= 1 && norm_groups >= 1, "decoder fusion/norm widths must be positive");
}

void validate_decoder_for(const DecoderConfig& cfg, std::int64_t t, std::int64_t h, std::int64_t w,
                          std::int64_t c) {
    cfg.validate();
    const std::array<std::int64_t, 3> extent{t, h, w};
    const char* axis[3] = {"temporal", "height", "width"};
    for (int k = 0; k < 3; ++k) {
        require(cfg.window_size[k] <= extent[k],
                std::string("TCFE window ") + axis[k] + " extent " +
                    std::to_string(cfg.window_size[k]) + " exceeds feature extent " +
                    std::to_string(extent[k]));
        require(extent[k] % cfg.window_size[k] == 0,
                std::string("TCFE window ") + axis[k] + " extent " +
                    std::to_string(cfg.window_size[k]) + " does not tile feature extent " +
                    std::to_string(extent[k]));
    }
    require(cfg.dfd_temporal_schedule.front() <= t,
            "decoder.dfd_temporal_schedule starts above the feature length " + std::to_string(t));
    for (int i = 0; i < cfg.num_layers; ++i) {
        const std::int64_t width = i == 0 ? c : cfg.tcfe_channels[i - 1];
        require(width % cfg.tcfe_heads == 0,
                "TCFE layer " + std::to_string(i + 1) + " width " + std::to_string(width) +
                    " not divisible by tcfe_heads " + std::to_string(cfg.tcfe_heads));
    }
}

std::int64_t decoder_extent(const DecoderConfig& cfg, std::int64_t base, int layer) {
    std::int64_t e = base;
    for (int i = 0; i <= layer; ++i) e *= cfg.dfd_spatial_scale[i];
    return e;
}

void ModelConfig::validate() const {
    encoder.validate();
    decoder.validate();
    require(!branches.empty(), "at least one decoder branch must be active");
    validate_decoder_for(decoder, encoder.window_frames, encoder.grid_height(),
                         encoder.grid_width(), encoder.embed_dim);
}

ModelConfig ModelConfig::toy() { return ModelConfig{}; }

ModelConfig ModelConfig::desk() {
    ModelConfig cfg;
    cfg.encoder.patch_size = 8;
    cfg.encoder.image_height = 64;
    cfg.encoder.image_width = 64;
    cfg.decoder.window_size = {2, 4, 4};
    return cfg;
}

ModelConfig ModelConfig::large() {
    ModelConfig cfg;
    cfg.encoder.embed_dim = 1024;
    cfg.encoder.depth = 24;
    cfg.encoder.heads = 16;
    cfg.decoder.tcfe_channels = {512, 256, 128};
    cfg.decoder.tcfe_heads = 8;
    cfg.decoder.dfd_channels = {256, 128, 64};
    cfg.decoder.sfd_channels = {256, 128, 64};
    cfg.decoder.fusion_channels = 64;
    return cfg;
}

ModelConfig ModelConfig::preset(const std::string& name) {
    if (name == "toy") return toy();
    if (name == "desk") return desk();
    if (name == "large") return large();
    throw ConfigError("unknown model preset '" + name + "' (expected toy, desk or large)");
}

ModelConfig ModelConfig::with_window_frames(int frames) const {
    if (frames < 1) throw ConfigError("window_frames must be >= 1");
    ModelConfig cfg = *this;
    const int old = encoder.window_frames;
    cfg.encoder.window_frames = frames;
    for (auto& s : cfg.decoder.dfd_temporal_schedule) {
        s = std::max(1, (s * frames + old - 1) / old);
    }
    int wt = std::min(cfg.decoder.window_size[0], frames);
    while (frames % wt != 0) --wt;
    cfg.decoder.window_size[0] = wt;
    return cfg;
}

const char* to_string(TemporalCollapse c) {
    return c == TemporalCollapse::attention_pool ? "attention_pool" : "mean";
}

nlohmann::json to_json(const ModelConfig& cfg) {
    const auto& e = cfg.encoder;
    const auto& d = cfg.decoder;
    return {
        {"encoder",
         {{"patch_size", e.patch_size},
          {"embed_dim", e.embed_dim},
          {"depth", e.depth},
          {"heads", e.heads},
          {"window_frames", e.window_frames},
          {"mlp_ratio", e.mlp_ratio},
          {"image_height", e.image_height},
          {"image_width", e.image_width},
          {"pixel_mean", e.pixel_mean},
          {"pixel_std", e.pixel_std}}},
        {"decoder",
         {{"num_layers", d.num_layers},
          {"tcfe_channels", d.tcfe_channels},
          {"tcfe_heads", d.tcfe_heads},
          {"tcfe_mlp_ratio", d.tcfe_mlp_ratio},
          {"window_size", d.window_size},
          {"dfd_channels", d.dfd_channels},
          {"dfd_spatial_scale", d.dfd_spatial_scale},
          {"dfd_temporal_schedule", d.dfd_temporal_schedule},
          {"sfd_channels", d.sfd_channels},
          {"fusion_channels", d.fusion_channels},
          {"norm_groups", d.norm_groups},
          {"collapse", to_string(d.collapse)}}},
        {"branches", cfg.branches.label()},
        {"init_seed", cfg.init_seed},
    };
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    try {
        ModelConfig cfg = ModelConfig::preset(j.value("preset", std::string("toy")));
        if (j.contains("encoder")) {
            const auto& e = j.at("encoder");
            auto& o = cfg.encoder;
            o.patch_size = e.value("patch_size", o.patch_size);
            o.embed_dim = e.value("embed_dim", o.embed_dim);
            o.depth = e.value("depth", o.depth);
            o.heads = e.value("heads", o.heads);
            o.window_frames = e.value("window_frames", o.window_frames);
            o.mlp_ratio = e.value("mlp_ratio", o.mlp_ratio);
            o.image_height = e.value("image_height", o.image_height);
            o.image_width = e.value("image_width", o.image_width);
            o.pixel_mean = e.value("pixel_mean", o.pixel_mean);
            o.pixel_std = e.value("pixel_std", o.pixel_std);
        }
        if (j.contains("decoder")) {
            const auto& d = j.at("decoder");
            auto& o = cfg.decoder;
            o.num_layers = d.value("num_layers", o.num_layers);
            o.tcfe_channels = d.value("tcfe_channels", o.tcfe_channels);
            o.tcfe_heads = d.value("tcfe_heads", o.tcfe_heads);
            o.tcfe_mlp_ratio = d.value("tcfe_mlp_ratio", o.tcfe_mlp_ratio);
            o.window_size = d.value("window_size", o.window_size);
            o.dfd_channels = d.value("dfd_channels", o.dfd_channels);
            o.dfd_spatial_scale = d.value("dfd_spatial_scale", o.dfd_spatial_scale);
            o.dfd_temporal_schedule = d.value("dfd_temporal_schedule", o.dfd_temporal_schedule);
            o.sfd_channels = d.value("sfd_channels", o.sfd_channels);
            o.fusion_channels = d.value("fusion_channels", o.fusion_channels);
            o.norm_groups = d.value("norm_groups", o.norm_groups);
            const auto collapse = d.value("collapse", std::string(to_string(o.collapse)));
            if (collapse == "attention_pool") {
                o.collapse = TemporalCollapse::attention_pool;
            } else if (collapse == "mean") {
                o.collapse = TemporalCollapse::mean;
            } else {
                throw ConfigError("decoder.collapse must be attention_pool or mean");
            }
        }
        if (j.contains("branches")) cfg.branches = BranchSet::parse(j.at("branches").get<std::string>());
        cfg.init_seed = j.value("init_seed", cfg.init_seed);
        return cfg;
    } catch (const nlohmann::json::exception& ex) {
        throw ConfigError(std::string("malformed model config: ") + ex.what());
    }
}

}  // namespace salfom
