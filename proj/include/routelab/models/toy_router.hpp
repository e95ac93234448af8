#pragma once

#include <optional>
#include <vector>

#include "routelab/routing/router.hpp"
#include "routelab/tasks/tasks.hpp"

namespace routelab::models {

using ad::Parameter;
using ad::Tape;
using ad::Tensor;
using ad::Var;
using routing::GateConfig;
using routing::Router;

// What the affinity map reads when no β memory or predictor is configured:
// the current input, the next input (oracle bound), or the running mean of
// the inputs so far.
enum class Readout { current, oracle_next, running_mean };

const char* to_string(Readout r);

class ToyRouter {
public:
    ToyRouter(GateConfig gate, Readout readout, std::size_t d_model, std::size_t n_experts,
              ad::Rng& init);

    Router& router() { return router_; }
    const Router& router() const { return router_; }
    Readout readout() const { return readout_; }
    std::vector<Parameter*> parameters() { return router_.parameters(); }

    // Correctness-mode precision update from a batch's routing labels. No-op
    // without a tracker.
    void update_precision(const tasks::Batch& batch);

private:
    Router router_;
    Readout readout_;
};

struct ToyForward {
    Var logits;                    // [T*B, N], time-major
    Var routing_loss;              // cross-entropy over labelled (t, b)
    std::optional<Var> pred_loss;  // MSE(x_hat_{t+1}, x_{t+1}) over t < T-1
    Var loss;
    std::vector<Tensor> states;    // router state after each step (β variants)
};

ToyForward toy_forward(Tape& tape, ToyRouter& model, const tasks::Batch& batch);

} // namespace routelab::models
