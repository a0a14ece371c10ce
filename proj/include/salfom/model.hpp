#pragma once

// Encoder plus decoder, parameter registry and checkpoint files.
//
// Checkpoint layout (little-endian):
//   "SFOMCKPT" | u32 version | u64 n | n bytes of config JSON | u32 count |
//   count x (u32 name length | name | tensor block with f64 payload)

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "salfom/config.hpp"
#include "salfom/decoder.hpp"
#include "salfom/encoder.hpp"

namespace salfom {

inline constexpr std::string_view kCheckpointMagic = "SFOMCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

class SaliencyModel {
public:
    // Parameters are drawn from a generator seeded with cfg.init_seed.
    explicit SaliencyModel(const ModelConfig& cfg);

    const ModelConfig& config() const { return cfg_; }
    const Encoder& encoder() const { return encoder_; }
    const Decoder& decoder() const { return decoder_; }

    // clip [T, H, W, 3] in [0, 1] -> map [H, W].
    Tensor forward(const Tensor& clip) const;
    // Decoder only, from encoder features [T, h, w, embed].
    Tensor forward_features(const Tensor& features) const;

    SaliencyMap predict(const VideoClip& clip) const;
    SaliencyMap predict_features(const FeatureVolume& features) const;

    // Every parameter, encoder first, in a fixed order.  Handles share storage
    // with the model.
    std::vector<std::pair<std::string, Tensor>> named_parameters();
    std::vector<std::pair<std::string, Tensor>> decoder_parameters();
    std::int64_t parameter_count();

    void save(const std::filesystem::path& path);
    // Rebuilds the model from the embedded config and checks every stored shape.
    static SaliencyModel load(const std::filesystem::path& path);

private:
    ModelConfig cfg_;
    Encoder encoder_;
    Decoder decoder_;
};

}  // namespace salfom
