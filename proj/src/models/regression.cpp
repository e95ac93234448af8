#include "routelab/models/regression.hpp"

#include <stdexcept>

namespace routelab::models {

RegressionForward regression_forward(ad::Tape& tape, routing::Router& router,
                                     const tasks::Batch& batch)
{
    if (batch.kind != tasks::TaskKind::precision_regression) {
        throw std::invalid_argument("regression_forward: expected a precision_regression batch");
    }
    if (router.config().use_beta || router.config().use_ant) {
        throw std::invalid_argument("regression_forward: the regression router is stateless");
    }
    const std::size_t B = batch.batch;
    RegressionForward out;
    ad::Var x = tape.constant(batch.inputs);
    routing::RouterState s;
    s.state = x;
    out.gate = router.gate(tape, x, s);
    out.prediction = ad::row_sum(ad::mul(out.gate, tape.constant(batch.expert_outputs)));
    out.loss = ad::mse_loss(out.prediction, tape.constant(ad::Tensor(ad::Shape{B, 1}, batch.observed)));
    return out;
}

std::vector<double> expert_mse_signal(const tasks::Batch& batch)
{
    const std::size_t B = batch.batch, N = batch.expert_outputs.cols();
    if (B == 0) throw std::invalid_argument("expert_mse_signal: empty batch");
    std::vector<double> mse(N, 0.0);
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t i = 0; i < N; ++i) {
            const double e = batch.expert_outputs.at(b, i) - batch.observed[b];
            mse[i] += e * e;
        }
    }
    for (double& m : mse) m /= static_cast<double>(B);
    return mse;
}

} // namespace routelab::models
