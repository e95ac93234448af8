#pragma once

#include <functional>
#include <string>
#include <vector>

#include "routelab/autodiff/tape.hpp"

namespace routelab::ad {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    std::size_t checked = 0;
};

// Compares tape gradients against central finite differences of the loss.
// `build_loss` must be a pure function of the parameter values.
GradCheckResult check_gradients(const std::vector<Parameter*>& params,
                                const std::function<Var(Tape&)>& build_loss,
                                double step = 1e-5);

} // namespace routelab::ad
