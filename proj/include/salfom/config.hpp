#pragma once

// Architectural hyperparameters.  ModelConfig is the single source of truth for
// every tensor shape in the model; checkpoints embed it verbatim.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace salfom {

struct EncoderConfig {
    int patch_size = 16;
    int embed_dim = 64;
    int depth = 2;
    int heads = 4;
    int window_frames = 16;
    int mlp_ratio = 4;
    int image_height = 224;
    int image_width = 224;
    // Per-channel RGB standardization applied to [0,1] pixels before patch embedding.
    std::array<double, 3> pixel_mean{0.5, 0.5, 0.5};
    std::array<double, 3> pixel_std{0.25, 0.25, 0.25};

    int grid_height() const { return image_height / patch_size; }
    int grid_width() const { return image_width / patch_size; }
    void validate() const;
};

enum class TemporalCollapse { attention_pool, mean };

enum class Branch : unsigned { tcfe = 1u, dfd = 2u, sfd = 4u };

class BranchSet {
public:
    constexpr BranchSet() = default;
    static constexpr BranchSet all() { return BranchSet(7u); }
    static BranchSet parse(const std::string& text);  // "TCFE+DFD", "tcfe,sfd", "all"

    constexpr bool has(Branch b) const { return (bits_ & static_cast<unsigned>(b)) != 0; }
    constexpr bool empty() const { return bits_ == 0; }
    constexpr BranchSet with(Branch b) const { return BranchSet(bits_ | static_cast<unsigned>(b)); }
    constexpr bool subset_of(BranchSet other) const { return (bits_ & ~other.bits_) == 0; }
    constexpr unsigned bits() const { return bits_; }
    // Canonical "TCFE+DFD+SFD" ordering.
    std::string label() const;

    friend constexpr bool operator==(BranchSet, BranchSet) = default;

private:
    constexpr explicit BranchSet(unsigned bits) : bits_(bits) {}
    unsigned bits_ = 0;
};

struct DecoderConfig {
    int num_layers = 3;
    std::vector<int> tcfe_channels{64, 48, 32};
    int tcfe_heads = 4;
    int tcfe_mlp_ratio = 2;
    std::array<int, 3> window_size{2, 7, 7};  // (t, h, w)
    std::vector<int> dfd_channels{48, 32, 16};
    std::vector<int> dfd_spatial_scale{2, 2, 2};
    std::vector<int> dfd_temporal_schedule{8, 4, 1};
    std::vector<int> sfd_channels{48, 32, 16};
    int fusion_channels = 16;
    int norm_groups = 4;
    TemporalCollapse collapse = TemporalCollapse::attention_pool;

    void validate() const;
};

struct ModelConfig {
    EncoderConfig encoder;
    DecoderConfig decoder;
    BranchSet branches = BranchSet::all();
    std::uint64_t init_seed = 0;

    // Checks internal consistency, including that the decoder can consume a
    // full encoder window (attention windows, temporal schedule, head counts).
    void validate() const;

    // Default toy model: 224x224 input, patch 16, embed 64.
    static ModelConfig toy();
    // Desk-scale model for fast CPU experiments: 64x64 input, patch 8.
    static ModelConfig desk();
    // Encoder widths of the large pretrained backbone; expressible, not trained here.
    static ModelConfig large();
    static ModelConfig preset(const std::string& name);

    // Same model with a shorter input window; temporal schedule and attention
    // window are shrunk to stay valid.
    ModelConfig with_window_frames(int frames) const;
};

// Validates a decoder against a concrete feature extent [t, h, w, c].
void validate_decoder_for(const DecoderConfig& cfg, std::int64_t t, std::int64_t h, std::int64_t w,
                          std::int64_t c);

// Spatial extent of decoder layer i (0-based) given encoder grid size.
std::int64_t decoder_extent(const DecoderConfig& cfg, std::int64_t base, int layer);

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

const char* to_string(TemporalCollapse c);

}  // namespace salfom
