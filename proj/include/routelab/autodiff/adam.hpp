#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "routelab/autodiff/tape.hpp"

namespace routelab::ad {

struct AdamConfig {
    double lr = 3e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction. The parameter list is fixed at construction;
// step() updates every parameter from its accumulated grad, then zeroes it.
class Adam {
public:
    Adam(std::vector<Parameter*> params, AdamConfig config = {});

    void step();
    void zero_grad();

    std::uint64_t step_count() const { return step_; }
    const AdamConfig& config() const { return config_; }
    std::span<Parameter* const> params() const { return params_; }

private:
    std::vector<Parameter*> params_;
    std::vector<Tensor> first_moment_;
    std::vector<Tensor> second_moment_;
    AdamConfig config_;
    std::uint64_t step_ = 0;
};

} // namespace routelab::ad
