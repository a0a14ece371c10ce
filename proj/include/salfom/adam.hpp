#pragma once

#include <vector>

#include "salfom/tensor.hpp"

namespace salfom {

struct AdamConfig {
    double lr = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam without weight decay.  Parameters without a gradient are left alone.
class Adam {
public:
    Adam(std::vector<Tensor> params, AdamConfig cfg);

    void step();
    void zero_grad();
    long long steps() const { return t_; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    AdamConfig cfg_;
    long long t_ = 0;
};

}  // namespace salfom
