#include "salfom/nn.hpp"

#include <numeric>

namespace salfom::nn {

Tensor trunc_normal(Shape shape, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> v(static_cast<std::size_t>(numel_of(shape)));
    for (auto& x : v) {
        double z = dist(rng);
        while (z < -2.0 || z > 2.0) z = dist(rng);
        x = z * stddev;
    }
    return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor zeros_param(Shape shape) { return Tensor::zeros(std::move(shape), true); }
Tensor ones_param(Shape shape) { return Tensor::full(std::move(shape), 1.0, true); }

Linear::Linear(std::int64_t in, std::int64_t out, Rng& rng, bool with_bias)
    : weight(trunc_normal({in, out}, 0.02, rng)) {
    if (with_bias) bias = zeros_param({out});
}

void Linear::visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + "weight", weight);
    if (bias.defined()) fn(prefix + "bias", bias);
}

LayerNorm::LayerNorm(std::int64_t width) : gamma(ones_param({width})), beta(zeros_param({width})) {}

void LayerNorm::visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + "gamma", gamma);
    fn(prefix + "beta", beta);
}

GroupNorm::GroupNorm(std::int64_t channels, int max_groups)
    : groups(static_cast<int>(std::gcd(channels, static_cast<std::int64_t>(max_groups)))),
      gamma(ones_param({channels})),
      beta(zeros_param({channels})) {}

void GroupNorm::visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + "gamma", gamma);
    fn(prefix + "beta", beta);
}

Conv3d::Conv3d(std::int64_t in, std::int64_t out, int kt_, int kh_, int kw_, Rng& rng)
    : kt(kt_),
      kh(kh_),
      kw(kw_),
      weight(trunc_normal({static_cast<std::int64_t>(kt_) * kh_ * kw_ * in, out}, 0.02, rng)),
      bias(zeros_param({out})) {}

void Conv3d::visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + "weight", weight);
    fn(prefix + "bias", bias);
}

TransformerBlock::TransformerBlock(std::int64_t width, int heads_, int mlp_ratio, Rng& rng)
    : heads(heads_),
      norm1(width),
      qkv(width, 3 * width, rng),
      proj(width, width, rng),
      norm2(width),
      fc1(width, width * mlp_ratio, rng),
      fc2(width * mlp_ratio, width, rng) {}

Tensor TransformerBlock::operator()(const Tensor& tokens, const ops::AttentionLayout& layout) const {
    Tensor attended = proj(ops::attention(qkv(norm1(tokens)), heads, layout));
    Tensor x = ops::add(tokens, attended);
    return ops::add(x, fc2(ops::gelu(fc1(norm2(x)))));
}

void TransformerBlock::visit(const std::string& prefix, const ParamVisitor& fn) {
    norm1.visit(prefix + "norm1.", fn);
    qkv.visit(prefix + "qkv.", fn);
    proj.visit(prefix + "proj.", fn);
    norm2.visit(prefix + "norm2.", fn);
    fc1.visit(prefix + "fc1.", fn);
    fc2.visit(prefix + "fc2.", fn);
}

}  // namespace salfom::nn
