#include "routelab/models/toy_router.hpp"

#include <stdexcept>

namespace routelab::models {

namespace {

// Rows of x shifted up by one step; the last step repeats itself (it carries
// no label, so its value never matters).
Tensor next_step_inputs(const Tensor& x, std::size_t T, std::size_t B)
{
    Tensor out(x.shape());
    const std::size_t d = x.cols();
    for (std::size_t t = 0; t < T; ++t) {
        const std::size_t src = t + 1 < T ? t + 1 : t;
        std::copy_n(x.data().data() + src * B * d, B * d, out.data().data() + t * B * d);
    }
    return out;
}

Tensor running_mean_inputs(const Tensor& x, std::size_t T, std::size_t B)
{
    Tensor out(x.shape());
    const std::size_t n = B * x.cols();
    std::vector<double> acc(n, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
        const double* src = x.data().data() + t * n;
        double* dst = out.data().data() + t * n;
        for (std::size_t i = 0; i < n; ++i) {
            acc[i] += src[i];
            dst[i] = acc[i] / static_cast<double>(t + 1);
        }
    }
    return out;
}

Tensor rows_of(const Tensor& x, std::size_t begin, std::size_t count)
{
    const std::size_t d = x.cols();
    std::vector<double> v(x.data().begin() + begin * d, x.data().begin() + (begin + count) * d);
    return Tensor(ad::Shape{count, d}, std::move(v));
}

} // namespace

const char* to_string(Readout r)
{
    switch (r) {
    case Readout::current: return "current";
    case Readout::oracle_next: return "oracle_next";
    case Readout::running_mean: return "running_mean";
    }
    return "?";
}

ToyRouter::ToyRouter(GateConfig gate, Readout readout, std::size_t d_model, std::size_t n_experts,
                     ad::Rng& init)
  : router_(gate, d_model, n_experts, init), readout_(readout)
{
    if (readout != Readout::current && (gate.use_beta || gate.use_ant)) {
        throw std::invalid_argument("ToyRouter: the " + std::string(to_string(readout)) +
                                    " readout replaces the gate input and cannot be combined "
                                    "with beta or ant");
    }
}

void ToyRouter::update_precision(const tasks::Batch& batch)
{
    if (!router_.tracker) return;
    router_.tracker->update(routing::correctness_signal(batch.routing_labels, router_.n_experts()));
}

ToyForward toy_forward(Tape& tape, ToyRouter& model, const tasks::Batch& batch)
{
    Router& r = model.router();
    const GateConfig& cfg = r.config();
    const std::size_t T = batch.steps, B = batch.batch;
    if (batch.inputs.rows() != T * B || batch.inputs.cols() != r.d_model()) {
        throw std::invalid_argument("toy_forward: batch inputs " + ad::shape_str(batch.inputs.shape()) +
                                    " do not match T*B x d_model");
    }

    ToyForward out;
    Var x = tape.constant(batch.inputs);
    routing::RouterState all;

    if (model.readout() == Readout::oracle_next) {
        Var next = tape.constant(next_step_inputs(batch.inputs, T, B));
        all.state = next;
        out.logits = r.logits(tape, next, all);
    } else if (model.readout() == Readout::running_mean) {
        Var m = tape.constant(running_mean_inputs(batch.inputs, T, B));
        all.state = m;
        out.logits = r.logits(tape, m, all);
    } else {
        if (cfg.use_beta) {
            routing::RouterState s = r.begin_sequence(tape, B);
            std::vector<Var> states;
            states.reserve(T);
            for (std::size_t t = 0; t < T; ++t) {
                r.step(tape, s, tape.constant(rows_of(batch.inputs, t * B, B)));
                states.push_back(s.state);
                out.states.push_back(s.state.value());
            }
            all.state = ad::concat_rows(states);
        } else {
            all.state = x;
        }
        std::optional<Var> x_hat;
        if (cfg.use_ant) {
            x_hat = r.predict_next(tape, x, all);
            if (T > 1) {
                out.pred_loss = ad::mse_loss(ad::slice_rows(*x_hat, 0, (T - 1) * B),
                                             ad::slice_rows(x, B, (T - 1) * B));
            }
        }
        out.logits = r.logits(tape, x, all, x_hat);
    }

    out.routing_loss = ad::cross_entropy(out.logits, batch.routing_labels);
    out.loss = routing::combined_loss(out.routing_loss, out.pred_loss, cfg.lambda_pred);
    return out;
}

} // namespace routelab::models
