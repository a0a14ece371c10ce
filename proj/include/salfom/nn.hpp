#pragma once

// Parameterized building blocks shared by the encoder and decoder.

#include <cstdint>
#include <functional>
#include <random>
#include <string>

#include "salfom/ops.hpp"
#include "salfom/tensor.hpp"

namespace salfom::nn {

using Rng = std::mt19937_64;
using ParamVisitor = std::function<void(const std::string& name, Tensor& param)>;

// Truncated at two standard deviations.
Tensor trunc_normal(Shape shape, double stddev, Rng& rng);
Tensor zeros_param(Shape shape);
Tensor ones_param(Shape shape);

struct Linear {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out], undefined when built without bias

    Linear() = default;
    Linear(std::int64_t in, std::int64_t out, Rng& rng, bool with_bias = true);
    Tensor operator()(const Tensor& x) const { return ops::linear(x, weight, bias); }
    void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct LayerNorm {
    Tensor gamma, beta;

    LayerNorm() = default;
    explicit LayerNorm(std::int64_t width);
    Tensor operator()(const Tensor& x) const { return ops::layer_norm(x, gamma, beta); }
    void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct GroupNorm {
    int groups = 1;
    Tensor gamma, beta;

    GroupNorm() = default;
    // Uses gcd(channels, max_groups) groups.
    GroupNorm(std::int64_t channels, int max_groups);
    Tensor operator()(const Tensor& x) const { return ops::group_norm(x, groups, gamma, beta); }
    void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct Conv3d {
    int kt = 1, kh = 1, kw = 1;
    Tensor weight;  // [kt*kh*kw*in, out]
    Tensor bias;

    Conv3d() = default;
    Conv3d(std::int64_t in, std::int64_t out, int kt, int kh, int kw, Rng& rng);
    Tensor operator()(const Tensor& x) const { return ops::conv3d(x, weight, bias, kt, kh, kw); }
    void visit(const std::string& prefix, const ParamVisitor& fn);
};

// Pre-norm transformer block: x + MHA(LN(x)), then x + MLP(LN(x)).
struct TransformerBlock {
    int heads = 1;
    LayerNorm norm1;
    Linear qkv;
    Linear proj;
    LayerNorm norm2;
    Linear fc1;
    Linear fc2;

    TransformerBlock() = default;
    TransformerBlock(std::int64_t width, int heads, int mlp_ratio, Rng& rng);
    Tensor operator()(const Tensor& tokens, const ops::AttentionLayout& layout) const;
    void visit(const std::string& prefix, const ParamVisitor& fn);
};

}  // namespace salfom::nn
