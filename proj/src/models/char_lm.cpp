#include "routelab/models/char_lm.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace routelab::models {

ExpertFFN::ExpertFFN(const std::string& name, std::size_t d_model, std::size_t hidden, ad::Rng& rng)
  : in(name + ".in", d_model, hidden, true, rng), out(name + ".out", hidden, d_model, true, rng)
{ }

ad::Var ExpertFFN::operator()(ad::Tape& tape, const ad::Var& x)
{
    return out(tape, ad::gelu(in(tape, x)));
}

void ExpertFFN::collect(std::vector<ad::Parameter*>& params)
{
    in.collect(params);
    out.collect(params);
}

CharMoELM::CharMoELM(routing::GateConfig gate, LMConfig config, ad::Rng& init)
  : embedding("embedding", ad::gaussian_tensor({config.vocab, config.d_model}, 1.0, init)),
    router(gate, config.d_model, config.n_experts, init),
    config_(config)
{
    for (std::size_t i = 0; i < config.n_experts; ++i) {
        experts.emplace_back("expert" + std::to_string(i), config.d_model, config.hidden, init);
    }
    head = ad::Linear("head", config.d_model, config.vocab, true, init);
}

std::vector<ad::Parameter*> CharMoELM::parameters()
{
    std::vector<ad::Parameter*> out{&embedding};
    for (ad::Parameter* p : router.parameters()) out.push_back(p);
    for (ExpertFFN& e : experts) e.collect(out);
    head.collect(out);
    return out;
}

LMForward lm_forward(ad::Tape& tape, CharMoELM& model, const tasks::Batch& batch,
                     bool upweight_transition, const ad::Tensor* forced_gate)
{
    const LMConfig& cfg = model.config();
    const std::size_t T = batch.steps, B = batch.batch;
    if (batch.kind != tasks::TaskKind::char_lm || batch.tokens.size() != T * B || T < 2) {
        throw std::invalid_argument("lm_forward: expected a char_lm batch with at least 2 steps");
    }
    for (int tok : batch.tokens) {
        if (tok < 0 || static_cast<std::size_t>(tok) >= cfg.vocab) {
            throw std::out_of_range("lm_forward: token " + std::to_string(tok) + " outside vocabulary of " +
                                    std::to_string(cfg.vocab));
        }
    }
    const std::size_t S = T - 1;
    LMForward out;
    out.steps = S;
    out.batch = B;

    ad::Var table = tape.param(model.embedding);
    const std::span<const int> tokens(batch.tokens);
    ad::Var x = ad::gather_rows(table, tokens.first(S * B));  // e_0 .. e_{S-1}

    routing::Router& r = model.router;
    const routing::GateConfig& gcfg = r.config();
    routing::RouterState all;
    if (gcfg.use_beta) {
        routing::RouterState s = r.begin_sequence(tape, B);
        std::vector<ad::Var> states;
        states.reserve(S);
        for (std::size_t t = 0; t < S; ++t) {
            r.step(tape, s, ad::slice_rows(x, t * B, B));
            states.push_back(s.state);
        }
        all.state = ad::concat_rows(states);
    } else {
        all.state = x;
    }

    std::optional<ad::Var> x_hat;
    if (gcfg.use_ant) {
        x_hat = r.predict_next(tape, x, all);
        ad::Var next = ad::detach(ad::gather_rows(table, tokens.subspan(B, S * B)));
        out.pred_loss = ad::mse_loss(*x_hat, next);
    }

    if (forced_gate) {
        if (forced_gate->rows() != S * B || forced_gate->cols() != cfg.n_experts) {
            throw std::invalid_argument("lm_forward: forced gate has shape " +
                                        ad::shape_str(forced_gate->shape()));
        }
        out.gates = tape.constant(*forced_gate);
    } else {
        out.gates = r.gate(tape, x, all, x_hat);
    }

    ad::Var mix;
    for (std::size_t i = 0; i < model.experts.size(); ++i) {
        ad::Var term = ad::mul(ad::slice_cols(out.gates, i, 1), model.experts[i](tape, x));
        mix = mix.valid() ? ad::add(mix, term) : term;
    }
    out.logits = model.head(tape, mix);

    out.targets.assign(batch.tokens.begin() + static_cast<std::ptrdiff_t>(B), batch.tokens.end());
    std::vector<double> weights(S * B, 1.0);
    if (upweight_transition && cfg.transition_step < S) {
        for (std::size_t b = 0; b < B; ++b) weights[cfg.transition_step * B + b] = cfg.transition_weight;
    }
    out.ce = ad::cross_entropy(out.logits, out.targets, weights);
    out.loss = routing::combined_loss(out.ce, out.pred_loss, gcfg.lambda_pred);
    return out;
}

int identify_domain_expert(const ad::Tensor& gates, std::size_t batch, std::size_t from,
                           std::size_t to)
{
    const std::size_t N = gates.cols();
    if (N < 2 || from > to || (to + 1) * batch > gates.rows()) {
        throw std::invalid_argument("identify_domain_expert: window [" + std::to_string(from) + ", " +
                                    std::to_string(to) + "] does not fit gate trace " +
                                    ad::shape_str(gates.shape()));
    }
    std::vector<double> mean(N, 0.0);
    for (std::size_t r = from * batch; r < (to + 1) * batch; ++r) {
        for (std::size_t i = 0; i < N; ++i) mean[i] += gates.at(r, i);
    }
    const double n = static_cast<double>((to - from + 1) * batch);
    std::size_t best = 0;
    for (std::size_t i = 1; i < N; ++i) {
        if (mean[i] > mean[best]) best = i;
    }
    for (std::size_t i = 0; i < N; ++i) {
        if (i != best && std::abs(mean[i] - mean[best]) / n <= 1e-6) {
            throw std::runtime_error("identify_domain_expert: experts " + std::to_string(best) + " and " +
                                     std::to_string(i) +
                                     " have the same mean gate weight (degenerate specialisation)");
        }
    }
    return static_cast<int>(best);
}

} // namespace routelab::models
