#include "salfom/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "salfom/error.hpp"
#include "salfom/ops.hpp"

namespace salfom {

namespace {

double checked_sum(std::span<const double> values, const char* what) {
    if (values.empty()) throw DegenerateInputError(std::string(what) + " is empty");
    double total = 0.0;
    for (double v : values) {
        if (!std::isfinite(v) || v < 0.0) {
            throw DegenerateInputError(std::string(what) + " has a negative or non-finite entry");
        }
        total += v;
    }
    if (!(total > 0.0)) throw DegenerateInputError(std::string(what) + " is all zero");
    return total;
}

struct Moments {
    double mean = 0.0;
    double var = 0.0;
};

Moments moments(std::span<const double> v) {
    Moments m;
    for (double x : v) m.mean += x;
    m.mean /= static_cast<double>(v.size());
    for (double x : v) m.var += (x - m.mean) * (x - m.mean);
    m.var /= static_cast<double>(v.size());
    return m;
}

void check_sizes(const Tensor& s, std::span<const double> g, const char* what) {
    if (static_cast<std::size_t>(s.numel()) != g.size()) {
        throw ShapeError(std::string(what) + ": prediction has " + std::to_string(s.numel()) +
                         " entries, target has " + std::to_string(g.size()));
    }
}

}  // namespace

std::vector<double> normalize_to_distribution(std::span<const double> values) {
    const double total = checked_sum(values, "map");
    std::vector<double> out(values.begin(), values.end());
    for (double& v : out) v /= total;
    return out;
}

SaliencyMap normalize_to_distribution(const SaliencyMap& map) {
    SaliencyMap out = map;
    out.data = normalize_to_distribution(map.data);
    out.normalized = true;
    return out;
}

GroundTruthMap normalize_to_distribution(const GroundTruthMap& map) {
    GroundTruthMap out = map;
    out.data = normalize_to_distribution(map.data);
    return out;
}

bool has_zero_variance(std::span<const double> values) {
    const auto m = moments(values);
    return std::sqrt(m.var) <= 1e-12 * std::max(1.0, std::abs(m.mean));
}

namespace losses {

Tensor kl_loss(const Tensor& s, std::span<const double> g) {
    check_sizes(s, g, "kl_loss");
    const double zs = checked_sum(s.data(), "prediction");
    const double zg = checked_sum(g, "ground truth");
    const auto n = static_cast<std::size_t>(s.numel());
    const double eps = kLossEpsilon;
    const double denom = 1.0 + static_cast<double>(n) * eps;

    auto sd = s.data();
    std::vector<double> p(n), sbar(n);
    double kl = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sbar[i] = sd[i] / zs;
        p[i] = (g[i] / zg + eps) / denom;
        const double q = (sbar[i] + eps) / denom;
        kl += p[i] * (std::log(p[i]) - std::log(q));
    }
    return make_result({}, {kl}, {s}, [s, p = std::move(p), sbar = std::move(sbar), zs](Node& self) {
        const std::size_t n = p.size();
        std::vector<double> a(n);
        double inner = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = -p[i] / (sbar[i] + kLossEpsilon);
            inner += a[i] * sbar[i];
        }
        auto& gs = s.node().ensure_grad();
        const double up = self.grad[0];
        for (std::size_t j = 0; j < n; ++j) gs[j] += up * (a[j] - inner) / zs;
    });
}

Tensor cc_loss(const Tensor& s, std::span<const double> g, CcMode mode) {
    check_sizes(s, g, "cc_loss");
    if (g.empty()) throw DegenerateInputError("cc_loss on an empty map");
    auto sd = s.data();
    for (double v : sd) {
        if (!std::isfinite(v)) throw NumericError("cc_loss: non-finite prediction");
    }
    if (mode == CcMode::strict) {
        if (has_zero_variance(sd)) throw DegenerateVarianceError("cc_loss: prediction has zero variance");
        if (has_zero_variance(g)) throw DegenerateVarianceError("cc_loss: ground truth has zero variance");
    }
    const auto ms = moments(sd);
    const auto mg = moments(g);
    const auto n = static_cast<double>(g.size());
    std::vector<double> sc(g.size()), gc(g.size());
    double cov = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        sc[i] = sd[i] - ms.mean;
        gc[i] = g[i] - mg.mean;
        cov += sc[i] * gc[i];
    }
    cov /= n;
    const double sigma_s = std::sqrt(ms.var);
    const double sigma_g = std::sqrt(mg.var);
    const double d = sigma_s * sigma_g + (mode == CcMode::guard ? kLossEpsilon : 0.0);
    const double loss = -cov / d;

    return make_result({}, {loss}, {s},
                       [s, sc = std::move(sc), gc = std::move(gc), cov, sigma_s, sigma_g, d](Node& self) {
                           const double n = static_cast<double>(sc.size());
                           auto& gs = s.node().ensure_grad();
                           const double up = self.grad[0];
                           const double ratio = sigma_s > 0.0 ? sigma_g / (n * sigma_s) : 0.0;
                           for (std::size_t j = 0; j < sc.size(); ++j) {
                               const double dd = ratio * sc[j];
                               gs[j] += up * (-(gc[j] / n) / d + cov * dd / (d * d));
                           }
                       });
}

LossTerms total_loss(const Tensor& s, std::span<const double> g, CcMode mode) {
    LossTerms terms;
    Tensor kl = kl_loss(s, g);
    terms.kl = kl.item();
    if (mode == CcMode::guard && has_zero_variance(g)) {
        terms.cc_skipped = true;
        terms.total = kl;
        return terms;
    }
    Tensor cc = cc_loss(s, g, mode);
    terms.cc = cc.item();
    terms.total = ops::add(kl, cc);
    return terms;
}

}  // namespace losses

namespace {

Tensor as_tensor(const SaliencyMap& s, const GroundTruthMap& g) {
    if (s.height != g.height || s.width != g.width) {
        throw ShapeError("prediction is " + std::to_string(s.height) + "x" + std::to_string(s.width) +
                         ", ground truth is " + std::to_string(g.height) + "x" + std::to_string(g.width));
    }
    return Tensor::from({s.height, s.width}, s.data);
}

}  // namespace

double kl_loss(const SaliencyMap& s, const GroundTruthMap& g) {
    NoGradGuard no_grad;
    return losses::kl_loss(as_tensor(s, g), g.data).item();
}

double cc_loss(const SaliencyMap& s, const GroundTruthMap& g) {
    NoGradGuard no_grad;
    return losses::cc_loss(as_tensor(s, g), g.data).item();
}

double total_loss(const SaliencyMap& s, const GroundTruthMap& g) {
    return kl_loss(s, g) + cc_loss(s, g);
}

}  // namespace salfom
