#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <unistd.h>
#include <random>
#include <string>
#include <vector>

#include "salfom/tensor.hpp"

namespace testutil {

inline std::vector<double> uniform(std::size_t n, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

inline salfom::Tensor random_tensor(salfom::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                                    bool requires_grad = true) {
    const auto n = static_cast<std::size_t>(salfom::numel_of(shape));
    return salfom::Tensor::from(std::move(shape), uniform(n, rng, lo, hi), requires_grad);
}

inline std::vector<double> vec(const salfom::Tensor& t) { return {t.data().begin(), t.data().end()}; }

struct GradReport {
    double worst = 0.0;  // largest |a - n| / (tol * max(|a|,|n|) + floor); <= 1 passes
    std::size_t checked = 0;
};

// Central differences of a scalar function against the analytic gradient of
// `x`.  At most `max_checks` coordinates are probed (evenly spaced).
inline GradReport grad_check(const std::function<salfom::Tensor()>& f, salfom::Tensor& x, double tol,
                             double floor = 1e-9, double step = 1e-6, std::size_t max_checks = 64) {
    x.zero_grad();
    f().backward();
    const auto analytic = x.grad();
    GradReport rep;
    const auto n = static_cast<std::size_t>(x.numel());
    const std::size_t stride = std::max<std::size_t>(1, n / max_checks);
    auto data = x.mutable_data();
    for (std::size_t i = 0; i < n; i += stride) {
        const double orig = data[i];
        double fp, fm;
        {
            salfom::NoGradGuard ng;
            data[i] = orig + step;
            fp = f().item();
            data[i] = orig - step;
            fm = f().item();
            data[i] = orig;
        }
        const double num = (fp - fm) / (2 * step);
        const double a = analytic[i];
        const double denom = tol * std::max(std::abs(a), std::abs(num)) + floor;
        rep.worst = std::max(rep.worst, std::abs(a - num) / denom);
        ++rep.checked;
    }
    return rep;
}

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("salfom_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

}  // namespace testutil
