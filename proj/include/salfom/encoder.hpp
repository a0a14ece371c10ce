#pragma once

// Spatio-temporal feature encoder: a small joint space-time ViT trained from
// scratch, standing in for a large pretrained video backbone.  Real backbone
// features can be fed to the decoder instead through import_features().

#include <cstdint>
#include <filesystem>
#include <vector>

#include "salfom/config.hpp"
#include "salfom/nn.hpp"
#include "salfom/tensor.hpp"

namespace salfom {

// Dense [T, H, W, 3] frames with values in [0, 1].
struct VideoClip {
    std::int64_t frames = 0, height = 0, width = 0;
    std::vector<double> pixels;
    std::vector<std::int64_t> frame_indices;  // source-frame ordinal per slot

    // Checks T >= 1, sizes, index count and pixel range.
    void validate() const;
    Tensor to_tensor() const;
};

enum class Provenance { encoded, imported, branch_internal };

// Dense [T, h, w, c] activations stored as 32-bit floats, the interchange
// precision of the feature file format.
struct FeatureVolume {
    std::int64_t t = 0, h = 0, w = 0, c = 0;
    std::vector<float> data;
    Provenance provenance = Provenance::encoded;

    Shape shape() const { return {t, h, w, c}; }
    bool all_finite() const;
    Tensor to_tensor() const;
    static FeatureVolume from_tensor(const Tensor& x, Provenance provenance);
};

class Encoder {
public:
    Encoder() = default;
    Encoder(const EncoderConfig& cfg, nn::Rng& rng);

    const EncoderConfig& config() const { return cfg_; }

    // Standardized, patch-projected tokens with positional tables added; [T, h, w, embed].
    Tensor patch_embed(const Tensor& clip) const;
    // Full joint space-time attention over all T*h*w tokens; [T, h, w, embed].
    Tensor forward(const Tensor& clip) const;

    // Graph-free wrappers returning interchange volumes.
    FeatureVolume patch_embed(const VideoClip& clip) const;
    // Throws NumericError when any activation is non-finite.
    FeatureVolume encode(const VideoClip& clip) const;

    void visit(const std::string& prefix, const nn::ParamVisitor& fn);

private:
    void check_clip(const Shape& shape) const;

    EncoderConfig cfg_;
    nn::Linear patch_proj_;
    Tensor pos_spatial_;   // [h*w, embed]
    Tensor pos_temporal_;  // [window_frames, embed]
    std::vector<nn::TransformerBlock> blocks_;
    nn::LayerNorm norm_;
};

// Feature file: "SFOMFEAT", u32 version, u32 T,h,w,c, u32 dtype, then
// row-major little-endian float32 payload.
void export_features(const FeatureVolume& vol, const std::filesystem::path& path);
// Validates h, w, c against the encoder grid and embed width, and 1 <= T <= window_frames.
FeatureVolume import_features(const std::filesystem::path& path, const EncoderConfig& expected);

}  // namespace salfom
