#pragma once

// Three-branch heterogeneous decoder.
//
//   TCFE  theta_i : windowed (shifted on odd layers) space-time attention at the
//                   encoder resolution, then a channel projection.
//   DFD   phi_i   = f_i(phi_{i-1}) + sigma_i(theta_i)       (phi_0 = F, no theta at i = 0)
//                   f_i: last-aligned temporal subsample, bilinear spatial upsample,
//                   3D conv, group norm, GELU.  sigma_i: bias-free 1x1x1 projection
//                   resampled to f_i's output shape.
//   SFD   gamma_i = g_i(gamma_{i-1}) + tau_i(phi_i)         (gamma_{-1} = stem(F))
//                   g_i: bilinear upsample, 2D conv, group norm, GELU.  tau_i: learned
//                   temporal collapse plus bias-free projection.
//   fuse          : collapse theta_N and phi_N in time, resample to gamma_N's grid,
//                   concatenate, 2D conv head, bilinear to H x W, sigmoid.
//
// Layer indices are 0-based throughout this API.  A decoder is built for a branch
// set; cross-branch terms whose source branch is inactive are dropped.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "salfom/config.hpp"
#include "salfom/encoder.hpp"
#include "salfom/maps.hpp"
#include "salfom/nn.hpp"
#include "salfom/ops.hpp"

namespace salfom {

struct BranchFeatures {
    std::vector<FeatureVolume> theta, phi, gamma;
};

struct DecodeResult {
    SaliencyMap map;
    BranchFeatures features;
};

// Window partition for a [t, h, w] token grid.  With `shifted`, windows are
// taken on the grid cyclically rolled by half a window (per axis where the window
// is smaller than the extent) and tokens only attend within their pre-roll region.
ops::AttentionLayout shifted_window_layout(std::int64_t t, std::int64_t h, std::int64_t w,
                                           const std::array<int, 3>& window, bool shifted);

struct TemporalCollapseHead {
    TemporalCollapse mode = TemporalCollapse::attention_pool;
    Tensor query;  // [C], attention pooling only

    TemporalCollapseHead() = default;
    TemporalCollapseHead(TemporalCollapse mode, std::int64_t channels);
    Tensor operator()(const Tensor& x) const;
    void visit(const std::string& prefix, const nn::ParamVisitor& fn);
};

class Decoder {
public:
    struct Outputs {
        Tensor map;  // [H, W], values in (0, 1)
        std::vector<Tensor> theta, phi, gamma;
    };

    Decoder() = default;
    Decoder(const ModelConfig& cfg, nn::Rng& rng);

    BranchSet branches() const { return built_; }
    const DecoderConfig& config() const { return cfg_; }

    Tensor tcfe_layer(const Tensor& input, int layer) const;

    // f_i alone.
    Tensor dfd_transform(const Tensor& prev_phi, int layer) const;
    // sigma_i: resamples theta to `target` = [T, h, w, c] of f_i's output.
    Tensor dfd_resample_theta(const Tensor& theta, int layer, const Shape& target) const;
    // `theta` may be undefined (no TCFE fusion); must be undefined for layer 0.
    Tensor dfd_layer(const Tensor& prev_phi, const Tensor& theta, int layer) const;

    // gamma before the first SFD layer: collapse(F) projected to sfd_channels[0].
    Tensor sfd_stem(const Tensor& features) const;
    Tensor sfd_transform(const Tensor& prev_gamma, int layer) const;
    Tensor sfd_collapse_phi(const Tensor& phi, int layer) const;
    // `phi` may be undefined (DFD inactive).  prev_gamma must have temporal extent 1.
    Tensor sfd_layer(const Tensor& prev_gamma, const Tensor& phi, int layer) const;

    // Undefined inputs are skipped; `active` selects the matching fusion weights.
    Tensor fuse(const Tensor& theta_last, const Tensor& phi_last, const Tensor& gamma_last,
                std::int64_t out_h, std::int64_t out_w, BranchSet active) const;

    Outputs forward(const Tensor& features) const { return forward(features, built_); }
    // `active` must be a non-empty subset of the built branches.
    Outputs forward(const Tensor& features, BranchSet active) const;

    DecodeResult decode(const FeatureVolume& features) const;
    SaliencyMap ablation_decode(const FeatureVolume& features, BranchSet active) const;

    void visit(const std::string& prefix, const nn::ParamVisitor& fn);

private:
    struct TcfeLayer {
        nn::TransformerBlock block;
        nn::Linear out;
    };
    struct DfdLayer {
        int kt = 3;
        nn::Conv3d conv;
        nn::GroupNorm norm;
        nn::Linear theta_proj;  // bias-free; only for layers >= 1 with TCFE built
    };
    struct SfdLayer {
        nn::Conv3d conv;
        nn::GroupNorm norm;
        TemporalCollapseHead collapse;
        nn::Linear phi_proj;  // bias-free; only with DFD built
    };

    std::int64_t fusion_width(Branch b) const;
    void check_layer(int layer) const;

    DecoderConfig cfg_;
    BranchSet built_;
    int patch_size_ = 16;
    std::int64_t embed_dim_ = 0;

    std::vector<TcfeLayer> tcfe_;
    std::vector<DfdLayer> dfd_;
    TemporalCollapseHead sfd_stem_collapse_;
    nn::Linear sfd_stem_proj_;
    std::vector<SfdLayer> sfd_;
    TemporalCollapseHead fuse_theta_collapse_;
    TemporalCollapseHead fuse_phi_collapse_;
    nn::Conv3d fuse_conv_;
    nn::GroupNorm fuse_norm_;
    nn::Conv3d fuse_out_;
};

}  // namespace salfom
