#pragma once

#include <optional>
#include <string>
#include <vector>

#include "routelab/autodiff/rng.hpp"
#include "routelab/autodiff/tape.hpp"

namespace routelab::ad {

// y = x W (+ b). W is stored [in, out]; weights start as N(0, 1/in), bias at 0.
struct Linear {
    Linear() = default;
    Linear(const std::string& name, std::size_t in, std::size_t out, bool with_bias, Rng& rng);

    Var operator()(Tape& tape, const Var& x);
    void collect(std::vector<Parameter*>& out);

    std::size_t in_features() const { return weight.value.rows(); }
    std::size_t out_features() const { return weight.value.cols(); }

    Parameter weight;
    std::optional<Parameter> bias;
};

Tensor gaussian_tensor(Shape shape, double stddev, Rng& rng);

} // namespace routelab::ad
