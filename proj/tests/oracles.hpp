#pragma once

// Independent reference computations shared by the unit and acceptance tests.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "salfom/losses.hpp"

namespace oracle {

// ROC points at every fixated-value threshold, counted pixel by pixel, sorted
// by false-positive rate and integrated with the trapezoid rule.
inline double brute_auc(const std::vector<double>& s, const std::vector<std::uint8_t>& fx) {
    std::vector<double> thresholds;
    double npos = 0, nneg = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (fx[i]) {
            thresholds.push_back(s[i]);
            ++npos;
        } else {
            ++nneg;
        }
    }
    std::vector<std::pair<double, double>> pts{{0.0, 0.0}, {1.0, 1.0}};
    for (double t : thresholds) {
        double tp = 0, fp = 0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i] >= t) (fx[i] ? tp : fp) += 1;
        }
        pts.emplace_back(fp / nneg, tp / npos);
    }
    std::sort(pts.begin(), pts.end());
    double area = 0;
    for (std::size_t i = 1; i < pts.size(); ++i) {
        area += (pts[i].first - pts[i - 1].first) * 0.5 * (pts[i].second + pts[i - 1].second);
    }
    return area;
}

inline double pairwise_auc(const std::vector<double>& pos, const std::vector<double>& neg) {
    double wins = 0;
    for (double p : pos) {
        for (double n : neg) wins += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
    }
    return wins / static_cast<double>(pos.size() * neg.size());
}

// Direct evaluation of the smoothed divergence.
inline double naive_kl(const std::vector<double>& s, const std::vector<double>& g) {
    const double n = static_cast<double>(s.size());
    double ss = 0, gs = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        ss += s[i];
        gs += g[i];
    }
    double kl = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double p = (g[i] / gs + salfom::kLossEpsilon) / (1 + n * salfom::kLossEpsilon);
        const double q = (s[i] / ss + salfom::kLossEpsilon) / (1 + n * salfom::kLossEpsilon);
        kl += p * std::log(p / q);
    }
    return kl;
}

inline double naive_pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i] / n;
        mb += b[i] / n;
    }
    double cov = 0, va = 0, vb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        cov += (a[i] - ma) * (b[i] - mb);
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
    }
    return cov / std::sqrt(va * vb);
}

// Roll the grid back by the shift, slice it into windows, and only allow pairs
// that were also within one window extent of each other before rolling.
inline std::vector<std::vector<bool>> roll_slice_oracle(std::array<std::int64_t, 3> e, std::array<int, 3> win,
                                                 bool shifted) {
    const std::int64_t n = e[0] * e[1] * e[2];
    std::array<std::int64_t, 3> s{};
    for (int k = 0; k < 3; ++k) s[k] = (shifted && win[k] < e[k]) ? win[k] / 2 : 0;
    auto coords = [&](std::int64_t i) {
        return std::array<std::int64_t, 3>{i / (e[1] * e[2]), (i / e[2]) % e[1], i % e[2]};
    };
    std::vector<std::vector<bool>> m(n, std::vector<bool>(n, false));
    for (std::int64_t a = 0; a < n; ++a) {
        for (std::int64_t b = 0; b < n; ++b) {
            const auto pa = coords(a), pb = coords(b);
            bool ok = true;
            for (int k = 0; k < 3; ++k) {
                const auto ra = ((pa[k] - s[k]) % e[k] + e[k]) % e[k];
                const auto rb = ((pb[k] - s[k]) % e[k] + e[k]) % e[k];
                ok = ok && ra / win[k] == rb / win[k] && std::abs(pa[k] - pb[k]) < win[k];
            }
            m[a][b] = ok;
        }
    }
    return m;
}

}  // namespace oracle
