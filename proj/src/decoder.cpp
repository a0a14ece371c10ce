#include "salfom/decoder.hpp"

#include <stdexcept>

#include "salfom/error.hpp"

namespace salfom {

ops::AttentionLayout shifted_window_layout(std::int64_t t, std::int64_t h, std::int64_t w,
                                           const std::array<int, 3>& window, bool shifted) {
    const std::array<std::int64_t, 3> extent{t, h, w};
    std::array<std::int64_t, 3> shift{0, 0, 0};
    std::array<std::int64_t, 3> count{};
    for (int k = 0; k < 3; ++k) {
        if (window[k] < 1 || window[k] > extent[k] || extent[k] % window[k] != 0) {
            throw ConfigError("attention window " + std::to_string(window[k]) +
                              " does not tile extent " + std::to_string(extent[k]));
        }
        count[k] = extent[k] / window[k];
        if (shifted && window[k] < extent[k]) shift[k] = window[k] / 2;
    }
    const bool masked = shift[0] || shift[1] || shift[2];

    auto region = [&](int k, std::int64_t p) -> std::int32_t {
        if (shift[k] == 0) return 0;
        if (p < extent[k] - window[k]) return 0;
        if (p < extent[k] - shift[k]) return 1;
        return 2;
    };

    ops::AttentionLayout layout;
    layout.windows.resize(static_cast<std::size_t>(count[0] * count[1] * count[2]));
    if (masked) layout.labels.resize(static_cast<std::size_t>(t * h * w));
    for (std::int64_t ft = 0; ft < t; ++ft) {
        for (std::int64_t y = 0; y < h; ++y) {
            for (std::int64_t x = 0; x < w; ++x) {
                const std::array<std::int64_t, 3> p{ft, y, x};
                std::array<std::int64_t, 3> r{};
                for (int k = 0; k < 3; ++k) r[k] = (p[k] - shift[k] + extent[k]) % extent[k];
                const auto win = ((r[0] / window[0]) * count[1] + r[1] / window[1]) * count[2] +
                                 r[2] / window[2];
                const auto token = static_cast<std::int32_t>((ft * h + y) * w + x);
                layout.windows[static_cast<std::size_t>(win)].push_back(token);
                if (masked) layout.labels[token] = (region(0, r[0]) * 3 + region(1, r[1])) * 3 + region(2, r[2]);
            }
        }
    }
    return layout;
}

TemporalCollapseHead::TemporalCollapseHead(TemporalCollapse mode_, std::int64_t channels) : mode(mode_) {
    if (mode == TemporalCollapse::attention_pool) query = nn::zeros_param({channels});
}

Tensor TemporalCollapseHead::operator()(const Tensor& x) const {
    if (mode == TemporalCollapse::mean) return ops::temporal_mean(x);
    return ops::temporal_attention_pool(x, query);
}

void TemporalCollapseHead::visit(const std::string& prefix, const nn::ParamVisitor& fn) {
    if (query.defined()) fn(prefix + "query", query);
}

Decoder::Decoder(const ModelConfig& model, nn::Rng& rng)
    : cfg_(model.decoder),
      built_(model.branches),
      patch_size_(model.encoder.patch_size),
      embed_dim_(model.encoder.embed_dim) {
    cfg_.validate();
    if (built_.empty()) throw ConfigError("decoder needs at least one active branch");
    const int n = cfg_.num_layers;
    const bool tcfe = built_.has(Branch::tcfe);
    const bool dfd = built_.has(Branch::dfd);
    const bool sfd = built_.has(Branch::sfd);

    if (tcfe) {
        for (int i = 0; i < n; ++i) {
            const std::int64_t in = i == 0 ? embed_dim_ : cfg_.tcfe_channels[i - 1];
            TcfeLayer layer;
            layer.block = nn::TransformerBlock(in, cfg_.tcfe_heads, cfg_.tcfe_mlp_ratio, rng);
            layer.out = nn::Linear(in, cfg_.tcfe_channels[i], rng);
            tcfe_.push_back(std::move(layer));
        }
    }
    if (dfd) {
        for (int i = 0; i < n; ++i) {
            const std::int64_t in = i == 0 ? embed_dim_ : cfg_.dfd_channels[i - 1];
            DfdLayer layer;
            layer.kt = cfg_.dfd_temporal_schedule[i] > 1 ? 3 : 1;
            layer.conv = nn::Conv3d(in, cfg_.dfd_channels[i], layer.kt, 3, 3, rng);
            layer.norm = nn::GroupNorm(cfg_.dfd_channels[i], cfg_.norm_groups);
            if (tcfe && i > 0) {
                layer.theta_proj = nn::Linear(cfg_.tcfe_channels[i], cfg_.dfd_channels[i], rng, false);
            }
            dfd_.push_back(std::move(layer));
        }
    }
    if (sfd) {
        sfd_stem_collapse_ = TemporalCollapseHead(cfg_.collapse, embed_dim_);
        sfd_stem_proj_ = nn::Linear(embed_dim_, cfg_.sfd_channels[0], rng);
        for (int i = 0; i < n; ++i) {
            const std::int64_t in = i == 0 ? cfg_.sfd_channels[0] : cfg_.sfd_channels[i - 1];
            SfdLayer layer;
            layer.conv = nn::Conv3d(in, cfg_.sfd_channels[i], 1, 3, 3, rng);
            layer.norm = nn::GroupNorm(cfg_.sfd_channels[i], cfg_.norm_groups);
            if (dfd) {
                layer.collapse = TemporalCollapseHead(cfg_.collapse, cfg_.dfd_channels[i]);
                layer.phi_proj = nn::Linear(cfg_.dfd_channels[i], cfg_.sfd_channels[i], rng, false);
            }
            sfd_.push_back(std::move(layer));
        }
    }
    if (tcfe) fuse_theta_collapse_ = TemporalCollapseHead(cfg_.collapse, cfg_.tcfe_channels.back());
    if (dfd) fuse_phi_collapse_ = TemporalCollapseHead(cfg_.collapse, cfg_.dfd_channels.back());
    std::int64_t fuse_in = 0;
    for (Branch b : {Branch::tcfe, Branch::dfd, Branch::sfd}) {
        if (built_.has(b)) fuse_in += fusion_width(b);
    }
    fuse_conv_ = nn::Conv3d(fuse_in, cfg_.fusion_channels, 1, 3, 3, rng);
    fuse_norm_ = nn::GroupNorm(cfg_.fusion_channels, cfg_.norm_groups);
    fuse_out_ = nn::Conv3d(cfg_.fusion_channels, 1, 1, 1, 1, rng);
}

std::int64_t Decoder::fusion_width(Branch b) const {
    switch (b) {
        case Branch::tcfe: return cfg_.tcfe_channels.back();
        case Branch::dfd: return cfg_.dfd_channels.back();
        case Branch::sfd: return cfg_.sfd_channels.back();
    }
    return 0;
}

void Decoder::check_layer(int layer) const {
    if (layer < 0 || layer >= cfg_.num_layers) {
        throw PreconditionError("decoder layer index " + std::to_string(layer) + " out of range");
    }
}

Tensor Decoder::tcfe_layer(const Tensor& input, int layer) const {
    check_layer(layer);
    if (!built_.has(Branch::tcfe)) throw ConfigError("TCFE branch is not part of this decoder");
    if (input.rank() != 4) throw ShapeError("TCFE input must be [T,h,w,c]");
    const auto t = input.dim(0), h = input.dim(1), w = input.dim(2), c = input.dim(3);
    const auto layout = shifted_window_layout(t, h, w, cfg_.window_size, layer % 2 == 1);
    const auto& l = tcfe_[static_cast<std::size_t>(layer)];
    Tensor x = l.block(ops::reshape(input, {t * h * w, c}), layout);
    x = l.out(x);
    return ops::reshape(x, {t, h, w, cfg_.tcfe_channels[layer]});
}

Tensor Decoder::dfd_transform(const Tensor& prev_phi, int layer) const {
    check_layer(layer);
    if (!built_.has(Branch::dfd)) throw ConfigError("DFD branch is not part of this decoder");
    if (prev_phi.rank() != 4) throw ShapeError("DFD input must be [T,h,w,c]");
    const auto& l = dfd_[static_cast<std::size_t>(layer)];
    const std::int64_t t_out = cfg_.dfd_temporal_schedule[layer];
    if (t_out > prev_phi.dim(0)) {
        throw ShapeError("DFD layer " + std::to_string(layer) + " cannot grow time from " +
                         std::to_string(prev_phi.dim(0)) + " to " + std::to_string(t_out));
    }
    const auto scale = cfg_.dfd_spatial_scale[layer];
    const auto idx = ops::last_aligned_indices(prev_phi.dim(0), t_out);
    Tensor x = ops::select_frames(prev_phi, idx);
    x = ops::resize_bilinear(x, prev_phi.dim(1) * scale, prev_phi.dim(2) * scale);
    return ops::gelu(l.norm(l.conv(x)));
}

Tensor Decoder::dfd_resample_theta(const Tensor& theta, int layer, const Shape& target) const {
    check_layer(layer);
    const auto& l = dfd_[static_cast<std::size_t>(layer)];
    if (!l.theta_proj.weight.defined()) {
        throw PreconditionError("DFD layer " + std::to_string(layer) + " has no TCFE fusion path");
    }
    Tensor x = l.theta_proj(theta);
    x = ops::select_frames(x, ops::last_aligned_indices(x.dim(0), target[0]));
    return ops::resize_bilinear(x, target[1], target[2]);
}

Tensor Decoder::dfd_layer(const Tensor& prev_phi, const Tensor& theta, int layer) const {
    Tensor f = dfd_transform(prev_phi, layer);
    if (!theta.defined()) return f;
    if (layer == 0) throw PreconditionError("the first DFD layer takes no TCFE features");
    Tensor s = dfd_resample_theta(theta, layer, f.shape());
    if (s.shape() != f.shape()) {
        throw std::logic_error("DFD fusion shape mismatch: " + shape_str(s.shape()) + " vs " +
                               shape_str(f.shape()));
    }
    return ops::add(f, s);
}

Tensor Decoder::sfd_stem(const Tensor& features) const {
    if (!built_.has(Branch::sfd)) throw ConfigError("SFD branch is not part of this decoder");
    return sfd_stem_proj_(sfd_stem_collapse_(features));
}

Tensor Decoder::sfd_transform(const Tensor& prev_gamma, int layer) const {
    check_layer(layer);
    if (!built_.has(Branch::sfd)) throw ConfigError("SFD branch is not part of this decoder");
    if (prev_gamma.rank() != 4 || prev_gamma.dim(0) != 1) {
        throw PreconditionError("SFD input must have temporal extent 1, got " +
                                shape_str(prev_gamma.shape()));
    }
    const auto& l = sfd_[static_cast<std::size_t>(layer)];
    const auto scale = cfg_.dfd_spatial_scale[layer];
    Tensor x = ops::resize_bilinear(prev_gamma, prev_gamma.dim(1) * scale, prev_gamma.dim(2) * scale);
    return ops::gelu(l.norm(l.conv(x)));
}

Tensor Decoder::sfd_collapse_phi(const Tensor& phi, int layer) const {
    check_layer(layer);
    const auto& l = sfd_[static_cast<std::size_t>(layer)];
    if (!l.phi_proj.weight.defined()) {
        throw PreconditionError("SFD layer " + std::to_string(layer) + " has no DFD fusion path");
    }
    return l.phi_proj(l.collapse(phi));
}

Tensor Decoder::sfd_layer(const Tensor& prev_gamma, const Tensor& phi, int layer) const {
    Tensor g = sfd_transform(prev_gamma, layer);
    if (!phi.defined()) return g;
    Tensor tau = sfd_collapse_phi(phi, layer);
    if (tau.shape() != g.shape()) {
        throw ShapeError("SFD fusion shape mismatch: " + shape_str(tau.shape()) + " vs " +
                         shape_str(g.shape()));
    }
    return ops::add(g, tau);
}

Tensor Decoder::fuse(const Tensor& theta_last, const Tensor& phi_last, const Tensor& gamma_last,
                     std::int64_t out_h, std::int64_t out_w, BranchSet active) const {
    std::vector<Tensor> parts;
    std::int64_t fh = 0, fw = 0;
    if (gamma_last.defined()) {
        fh = gamma_last.dim(1);
        fw = gamma_last.dim(2);
    } else if (phi_last.defined()) {
        fh = phi_last.dim(1);
        fw = phi_last.dim(2);
    } else if (theta_last.defined()) {
        fh = decoder_extent(cfg_, theta_last.dim(1), cfg_.num_layers - 1);
        fw = decoder_extent(cfg_, theta_last.dim(2), cfg_.num_layers - 1);
    } else {
        throw ConfigError("fusion needs at least one branch output");
    }
    if (active.has(Branch::tcfe) != theta_last.defined() || active.has(Branch::dfd) != phi_last.defined() ||
        active.has(Branch::sfd) != gamma_last.defined()) {
        throw PreconditionError("fusion inputs do not match the active branch set");
    }
    if (theta_last.defined()) {
        parts.push_back(ops::resize_bilinear(fuse_theta_collapse_(theta_last), fh, fw));
    }
    if (phi_last.defined()) {
        parts.push_back(ops::resize_bilinear(fuse_phi_collapse_(phi_last), fh, fw));
    }
    if (gamma_last.defined()) parts.push_back(gamma_last);
    Tensor x = parts.size() == 1 ? parts[0] : ops::concat_last(parts);

    Tensor weight = fuse_conv_.weight;
    if (active != built_) {
        // Keep only the input-channel rows that belong to active branches.
        std::vector<std::int64_t> channels;
        std::int64_t offset = 0;
        for (Branch b : {Branch::tcfe, Branch::dfd, Branch::sfd}) {
            if (!built_.has(b)) continue;
            const auto width = fusion_width(b);
            if (active.has(b)) {
                for (std::int64_t k = 0; k < width; ++k) channels.push_back(offset + k);
            }
            offset += width;
        }
        std::vector<std::int64_t> rows;
        for (int tap = 0; tap < 9; ++tap) {
            for (auto ch : channels) rows.push_back(tap * offset + ch);
        }
        weight = ops::select_frames(weight, rows);
    }
    x = ops::conv3d(x, weight, fuse_conv_.bias, 1, 3, 3);
    x = ops::gelu(fuse_norm_(x));
    x = fuse_out_(x);
    x = ops::resize_bilinear(x, out_h, out_w);
    return ops::reshape(ops::sigmoid(x), {out_h, out_w});
}

Decoder::Outputs Decoder::forward(const Tensor& features, BranchSet active) const {
    if (active.empty()) throw ConfigError("ablation needs a non-empty branch set");
    if (!active.subset_of(built_)) {
        throw ConfigError("branches " + active.label() + " are not all built into this decoder (" +
                          built_.label() + ")");
    }
    if (features.rank() != 4) throw ShapeError("decoder input must be [T,h,w,c]");
    if (features.dim(3) != embed_dim_) {
        throw ShapeError("decoder expects " + std::to_string(embed_dim_) + " feature channels, got " +
                         shape_str(features.shape()));
    }
    validate_decoder_for(cfg_, features.dim(0), features.dim(1), features.dim(2), features.dim(3));

    const int n = cfg_.num_layers;
    Outputs out;
    if (active.has(Branch::tcfe)) {
        Tensor x = features;
        for (int i = 0; i < n; ++i) {
            x = tcfe_layer(x, i);
            out.theta.push_back(x);
        }
    }
    if (active.has(Branch::dfd)) {
        Tensor x = features;
        for (int i = 0; i < n; ++i) {
            const Tensor theta = (i > 0 && active.has(Branch::tcfe)) ? out.theta[i] : Tensor();
            x = dfd_layer(x, theta, i);
            out.phi.push_back(x);
        }
    }
    if (active.has(Branch::sfd)) {
        Tensor x = sfd_stem(features);
        for (int i = 0; i < n; ++i) {
            const Tensor phi = active.has(Branch::dfd) ? out.phi[i] : Tensor();
            x = sfd_layer(x, phi, i);
            out.gamma.push_back(x);
        }
    }
    const auto H = features.dim(1) * patch_size_;
    const auto W = features.dim(2) * patch_size_;
    out.map = fuse(out.theta.empty() ? Tensor() : out.theta.back(),
                   out.phi.empty() ? Tensor() : out.phi.back(),
                   out.gamma.empty() ? Tensor() : out.gamma.back(), H, W, active);
    return out;
}

namespace {

SaliencyMap to_map(const Tensor& map) {
    SaliencyMap s;
    s.height = map.dim(0);
    s.width = map.dim(1);
    s.data.assign(map.data().begin(), map.data().end());
    return s;
}

}  // namespace

DecodeResult Decoder::decode(const FeatureVolume& features) const {
    NoGradGuard no_grad;
    const auto out = forward(features.to_tensor());
    DecodeResult result;
    result.map = to_map(out.map);
    for (const auto& t : out.theta) {
        result.features.theta.push_back(FeatureVolume::from_tensor(t, Provenance::branch_internal));
    }
    for (const auto& t : out.phi) {
        result.features.phi.push_back(FeatureVolume::from_tensor(t, Provenance::branch_internal));
    }
    for (const auto& t : out.gamma) {
        result.features.gamma.push_back(FeatureVolume::from_tensor(t, Provenance::branch_internal));
    }
    return result;
}

SaliencyMap Decoder::ablation_decode(const FeatureVolume& features, BranchSet active) const {
    NoGradGuard no_grad;
    return to_map(forward(features.to_tensor(), active).map);
}

void Decoder::visit(const std::string& prefix, const nn::ParamVisitor& fn) {
    for (std::size_t i = 0; i < tcfe_.size(); ++i) {
        const auto p = prefix + "tcfe." + std::to_string(i) + ".";
        tcfe_[i].block.visit(p + "block.", fn);
        tcfe_[i].out.visit(p + "out.", fn);
    }
    for (std::size_t i = 0; i < dfd_.size(); ++i) {
        const auto p = prefix + "dfd." + std::to_string(i) + ".";
        dfd_[i].conv.visit(p + "conv.", fn);
        dfd_[i].norm.visit(p + "norm.", fn);
        if (dfd_[i].theta_proj.weight.defined()) dfd_[i].theta_proj.visit(p + "theta_proj.", fn);
    }
    if (built_.has(Branch::sfd)) {
        sfd_stem_collapse_.visit(prefix + "sfd.stem.collapse.", fn);
        sfd_stem_proj_.visit(prefix + "sfd.stem.proj.", fn);
    }
    for (std::size_t i = 0; i < sfd_.size(); ++i) {
        const auto p = prefix + "sfd." + std::to_string(i) + ".";
        sfd_[i].conv.visit(p + "conv.", fn);
        sfd_[i].norm.visit(p + "norm.", fn);
        sfd_[i].collapse.visit(p + "collapse.", fn);
        if (sfd_[i].phi_proj.weight.defined()) sfd_[i].phi_proj.visit(p + "phi_proj.", fn);
    }
    fuse_theta_collapse_.visit(prefix + "fuse.theta_collapse.", fn);
    fuse_phi_collapse_.visit(prefix + "fuse.phi_collapse.", fn);
    fuse_conv_.visit(prefix + "fuse.conv.", fn);
    fuse_norm_.visit(prefix + "fuse.norm.", fn);
    fuse_out_.visit(prefix + "fuse.out.", fn);
}

}  // namespace salfom
