#pragma once

#include <vector>

#include "routelab/routing/router.hpp"
#include "routelab/tasks/tasks.hpp"

namespace routelab::models {

// Router over a pool of fixed (non-learned) expert oracles: the prediction is
// the gate-weighted sum of expert outputs, trained against the observed target.
struct RegressionForward {
    ad::Var gate;        // [B, N]
    ad::Var prediction;  // [B, 1]
    ad::Var loss;        // MSE(prediction, observed)
};

RegressionForward regression_forward(ad::Tape& tape, routing::Router& router,
                                     const tasks::Batch& batch);

// Per-expert batch MSE of expert output against the observed target; the
// mse-mode precision signal.
std::vector<double> expert_mse_signal(const tasks::Batch& batch);

} // namespace routelab::models
