#pragma once

// Training objective: KL divergence plus negated correlation coefficient.
//
// Tensor-level functions take the prediction as a differentiable tensor of any
// shape and the target as a flat array of the same size.  Map-level functions
// are the plain numeric versions used by tests, metrics and evaluation.

#include <span>
#include <vector>

#include "salfom/maps.hpp"
#include "salfom/tensor.hpp"

namespace salfom {

inline constexpr double kLossEpsilon = 1e-7;

// x / sum(x).  Throws DegenerateInputError on an all-zero or negative input.
std::vector<double> normalize_to_distribution(std::span<const double> values);
SaliencyMap normalize_to_distribution(const SaliencyMap& map);
GroundTruthMap normalize_to_distribution(const GroundTruthMap& map);

// Population standard deviation at or below this (relative to the mean) counts as zero.
bool has_zero_variance(std::span<const double> values);

namespace losses {

// sum P log(P / Q) with P, Q the epsilon-smoothed distributions of G and S.
Tensor kl_loss(const Tensor& s, std::span<const double> g);

enum class CcMode {
    strict,  // zero variance throws DegenerateVarianceError
    guard,   // epsilon is added to the denominator
};

// -cov(S, G) / (sigma_S sigma_G), population statistics.
Tensor cc_loss(const Tensor& s, std::span<const double> g, CcMode mode = CcMode::strict);

struct LossTerms {
    Tensor total;
    double kl = 0.0;
    double cc = 0.0;
    bool cc_skipped = false;  // target had zero variance in guard mode
};

// Strict mode evaluates both terms as defined.  Guard mode drops the CC term
// when G is constant and uses the guarded denominator otherwise.
LossTerms total_loss(const Tensor& s, std::span<const double> g, CcMode mode = CcMode::strict);

}  // namespace losses

double kl_loss(const SaliencyMap& s, const GroundTruthMap& g);
double cc_loss(const SaliencyMap& s, const GroundTruthMap& g);
double total_loss(const SaliencyMap& s, const GroundTruthMap& g);

}  // namespace salfom
