#pragma once

#include <optional>
#include <span>
#include <vector>

#include "routelab/autodiff/linear.hpp"
#include "routelab/autodiff/rng.hpp"
#include "routelab/autodiff/tape.hpp"
#include "routelab/routing/gate_config.hpp"

namespace routelab::routing {

using ad::Parameter;
using ad::Tape;
using ad::Tensor;
using ad::Var;

// Learnable decay. beta = sigmoid(beta_raw), so it stays in (0, 1) for any raw value.
struct BetaMemory {
    BetaMemory() = default;
    BetaMemory(std::size_t size, double init, bool trainable);

    Var beta(Tape& tape);
    std::vector<double> values() const;
    std::size_t size() const { return beta_raw.value.size(); }

    Parameter beta_raw;
    bool trainable = true;
};

// Per-sequence accumulated state: h [B, d_model] for the per-dimension memory,
// the membrane potential U [B, n_experts] for the per-expert variant.
struct RouterState {
    Var state;
    std::size_t steps = 0;
};

// Per-expert running error variance; pi_i = 1 / (var_i + eps0). Lives entirely
// outside the tape.
class PrecisionTracker {
public:
    PrecisionTracker(std::size_t n_experts, PrecisionMode mode, double alpha, double eps0,
                     double init_var);

    void update(std::span<const double> per_expert_signal);
    // Overwrites the running variance (restoring state, tests).
    void set_variance(std::vector<double> var);

    std::vector<double> pi() const;
    Tensor pi_row() const;
    std::span<const double> variance() const { return var_; }
    PrecisionMode mode() const { return mode_; }
    double alpha() const { return alpha_; }
    double eps0() const { return eps0_; }

private:
    std::vector<double> var_;
    PrecisionMode mode_;
    double alpha_;
    double eps0_;
};

// Correctness-mode signal: for each expert, the mean over labelled entries of
// (1 - [expert is the target])^2. Labels of -1 are skipped.
std::vector<double> correctness_signal(std::span<const int> labels, std::size_t n_experts);

// Two-layer next-input predictor f(x_t, h_t) = L2(gelu(L1([x_t, h_t]))). The
// routing correction map W_pred exists only for the additive integration.
struct Predictor {
    Predictor() = default;
    Predictor(std::size_t d_model, std::size_t n_experts, bool with_correction, ad::Rng& rng);

    Var operator()(Tape& tape, const Var& x_t, const Var& h_t);
    void collect(std::vector<Parameter*>& out);

    ad::Linear hidden;
    ad::Linear out;
    std::optional<ad::Linear> correction;
};

// The composed routing gate.
class Router {
public:
    Router(GateConfig config, std::size_t d_model, std::size_t n_experts, ad::Rng& init);

    Router(const Router&) = delete;
    Router& operator=(const Router&) = delete;

    RouterState begin_sequence(Tape& tape, std::size_t batch) const;

    // Advances the memory by one input: h <- beta * h + x_t, or for the
    // membrane variant U <- beta * U + W x_t - relu(U - theta).
    void step(Tape& tape, RouterState& state, const Var& x_t);

    // x_hat_{t+1} = f(x_t, h_t); without beta memory the state slot is zero.
    Var predict_next(Tape& tape, const Var& x_t, const RouterState& state);

    // Pre-softmax gate logits for step t. `x_hat` is required when use_ant.
    Var logits(Tape& tape, const Var& x_t, const RouterState& state,
               const std::optional<Var>& x_hat = std::nullopt);
    Var gate(Tape& tape, const Var& x_t, const RouterState& state,
             const std::optional<Var>& x_hat = std::nullopt);

    // W x (+ b): the plain affinity map, also used for oracle routing.
    Var affinity(Tape& tape, const Var& input);
    Var apply_precision(Tape& tape, const Var& logits) const;

    std::vector<Parameter*> parameters();

    const GateConfig& config() const { return config_; }
    std::size_t d_model() const { return d_model_; }
    std::size_t n_experts() const { return n_experts_; }

    ad::Linear affinity_map;
    std::optional<BetaMemory> memory;
    std::optional<PrecisionTracker> tracker;
    std::optional<Predictor> predictor;

private:
    GateConfig config_;
    std::size_t d_model_;
    std::size_t n_experts_;
};

// L = L_routing + lambda * L_pred; an unset prediction loss contributes nothing.
Var combined_loss(const Var& routing_loss, const std::optional<Var>& pred_loss, double lambda_pred);

struct Coverage {
    int k = 1;             // smallest integer expert count
    double threshold = 0;  // log(delta) / log(1 - p), unrounded
};

// Experts needed so that independent top-K inclusion of the correct expert has
// probability >= 1 - delta.
Coverage coverage_k(double p_correct, double delta);

} // namespace routelab::routing
