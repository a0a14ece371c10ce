#include "salfom/encoder.hpp"

#include <cmath>
#include <fstream>

#include "salfom/error.hpp"
#include "salfom/tensor_io.hpp"

namespace salfom {

void VideoClip::validate() const {
    if (frames < 1) throw PreconditionError("video clip needs at least one frame");
    if (height < 1 || width < 1) throw ShapeError("video clip has an empty frame size");
    if (static_cast<std::int64_t>(pixels.size()) != frames * height * width * 3) {
        throw ShapeError("video clip pixel count does not match [T,H,W,3]");
    }
    if (static_cast<std::int64_t>(frame_indices.size()) != frames) {
        throw ShapeError("video clip needs one source index per frame");
    }
    for (double v : pixels) {
        if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
            throw PreconditionError("video clip pixels must be finite and within [0,1]");
        }
    }
}

Tensor VideoClip::to_tensor() const { return Tensor::from({frames, height, width, 3}, pixels); }

bool FeatureVolume::all_finite() const {
    for (float v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Tensor FeatureVolume::to_tensor() const {
    return Tensor::from(shape(), std::vector<double>(data.begin(), data.end()));
}

FeatureVolume FeatureVolume::from_tensor(const Tensor& x, Provenance provenance) {
    if (x.rank() != 4) throw ShapeError("feature volume needs rank 4, got " + shape_str(x.shape()));
    FeatureVolume vol;
    vol.t = x.dim(0);
    vol.h = x.dim(1);
    vol.w = x.dim(2);
    vol.c = x.dim(3);
    vol.data.assign(x.data().begin(), x.data().end());
    vol.provenance = provenance;
    return vol;
}

Encoder::Encoder(const EncoderConfig& cfg, nn::Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const std::int64_t e = cfg_.embed_dim;
    const std::int64_t patch_width = std::int64_t{cfg_.patch_size} * cfg_.patch_size * 3;
    patch_proj_ = nn::Linear(patch_width, e, rng);
    pos_spatial_ =
        nn::trunc_normal({std::int64_t{cfg_.grid_height()} * cfg_.grid_width(), e}, 0.02, rng);
    pos_temporal_ = nn::trunc_normal({cfg_.window_frames, e}, 0.02, rng);
    for (int i = 0; i < cfg_.depth; ++i) {
        blocks_.emplace_back(e, cfg_.heads, cfg_.mlp_ratio, rng);
    }
    norm_ = nn::LayerNorm(e);
}

void Encoder::check_clip(const Shape& shape) const {
    if (shape.size() != 4 || shape[3] != 3) {
        throw ShapeError("encoder input must be [T,H,W,3], got " + shape_str(shape));
    }
    if (shape[1] % cfg_.patch_size != 0 || shape[2] % cfg_.patch_size != 0) {
        throw ShapeError("frame size " + std::to_string(shape[1]) + "x" + std::to_string(shape[2]) +
                         " not divisible by patch size " + std::to_string(cfg_.patch_size));
    }
    if (shape[1] != cfg_.image_height || shape[2] != cfg_.image_width) {
        throw ShapeError("frame size " + std::to_string(shape[1]) + "x" + std::to_string(shape[2]) +
                         " does not match configured " + std::to_string(cfg_.image_height) + "x" +
                         std::to_string(cfg_.image_width));
    }
    if (shape[0] < 1 || shape[0] > cfg_.window_frames) {
        throw ShapeError("clip length " + std::to_string(shape[0]) + " outside [1, " +
                         std::to_string(cfg_.window_frames) + "]");
    }
}

Tensor Encoder::patch_embed(const Tensor& clip) const {
    check_clip(clip.shape());
    const auto t = clip.dim(0);
    std::array<double, 3> scale{};
    std::array<double, 3> shift{};
    for (int k = 0; k < 3; ++k) {
        scale[k] = 1.0 / cfg_.pixel_std[k];
        shift[k] = -cfg_.pixel_mean[k] / cfg_.pixel_std[k];
    }
    Tensor x = ops::channel_affine(clip, scale, shift);
    x = patch_proj_(ops::patchify(x, cfg_.patch_size));
    x = ops::add_positional(x, pos_spatial_, pos_temporal_, t);
    return ops::reshape(x, {t, cfg_.grid_height(), cfg_.grid_width(), cfg_.embed_dim});
}

Tensor Encoder::forward(const Tensor& clip) const {
    Tensor x = patch_embed(clip);
    const Shape volume = x.shape();
    x = ops::reshape(x, {volume[0] * volume[1] * volume[2], volume[3]});
    const auto layout = ops::full_attention_layout(x.dim(0));
    for (const auto& block : blocks_) x = block(x, layout);
    return ops::reshape(norm_(x), volume);
}

FeatureVolume Encoder::patch_embed(const VideoClip& clip) const {
    clip.validate();
    NoGradGuard no_grad;
    return FeatureVolume::from_tensor(patch_embed(clip.to_tensor()), Provenance::encoded);
}

FeatureVolume Encoder::encode(const VideoClip& clip) const {
    clip.validate();
    NoGradGuard no_grad;
    Tensor out = forward(clip.to_tensor());
    for (double v : out.data()) {
        if (!std::isfinite(v)) throw NumericError("encoder produced a non-finite activation");
    }
    auto vol = FeatureVolume::from_tensor(out, Provenance::encoded);
    if (!vol.all_finite()) throw NumericError("encoder activation overflows float32");
    return vol;
}

void Encoder::visit(const std::string& prefix, const nn::ParamVisitor& fn) {
    patch_proj_.visit(prefix + "patch_proj.", fn);
    fn(prefix + "pos_spatial", pos_spatial_);
    fn(prefix + "pos_temporal", pos_temporal_);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        blocks_[i].visit(prefix + "blocks." + std::to_string(i) + ".", fn);
    }
    norm_.visit(prefix + "norm.", fn);
}

void export_features(const FeatureVolume& vol, const std::filesystem::path& path) {
    if (!vol.all_finite()) throw PreconditionError("refusing to export a non-finite feature volume");
    if (static_cast<std::int64_t>(vol.data.size()) != vol.t * vol.h * vol.w * vol.c) {
        throw ShapeError("feature volume data does not match its dims");
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open feature file for writing: " + path.string());
    const Shape shape = vol.shape();
    io::write_tensor_block(os, io::pad_dims(shape), vol.data);
    os.flush();
    if (!os) throw IoError("failed writing feature file: " + path.string());
}

FeatureVolume import_features(const std::filesystem::path& path, const EncoderConfig& expected) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open feature file: " + path.string());
    io::TensorBlock block;
    try {
        block = io::read_tensor_block(is);
    } catch (const FormatError& ex) {
        throw FormatError(path.string() + ": " + ex.what());
    }
    if (is.peek() != std::char_traits<char>::eof()) {
        throw FormatError(path.string() + ": trailing bytes after feature payload");
    }
    if (block.dtype != io::DType::f32) {
        throw FormatError(path.string() + ": feature files must carry float32 payloads");
    }
    FeatureVolume vol;
    vol.t = block.dims[0];
    vol.h = block.dims[1];
    vol.w = block.dims[2];
    vol.c = block.dims[3];
    if (vol.c != expected.embed_dim || vol.h != expected.grid_height() ||
        vol.w != expected.grid_width() || vol.t < 1 || vol.t > expected.window_frames) {
        throw ShapeError(path.string() + ": feature shape " + shape_str(vol.shape()) +
                         " does not match expected [<=" + std::to_string(expected.window_frames) +
                         "," + std::to_string(expected.grid_height()) + "," +
                         std::to_string(expected.grid_width()) + "," +
                         std::to_string(expected.embed_dim) + "]");
    }
    vol.data.assign(block.values.begin(), block.values.end());
    vol.provenance = Provenance::imported;
    return vol;
}

}  // namespace salfom
