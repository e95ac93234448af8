#include "routelab/routing/router.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace routelab::routing {

// --- BetaMemory ------------------------------------------------------------------

BetaMemory::BetaMemory(std::size_t size, double init, bool trainable_)
  : beta_raw("beta_raw", Tensor(ad::Shape{1, size}, std::log(init / (1.0 - init)))),
    trainable(trainable_)
{ }

Var BetaMemory::beta(Tape& tape)
{
    Var raw = trainable ? tape.param(beta_raw) : tape.constant(beta_raw.value);
    return ad::sigmoid(raw);
}

std::vector<double> BetaMemory::values() const
{
    std::vector<double> out;
    for (double r : beta_raw.value.data()) out.push_back(ad::sigmoid_value(r));
    return out;
}

// --- PrecisionTracker --------------------------------------------------------------

PrecisionTracker::PrecisionTracker(std::size_t n_experts, PrecisionMode mode, double alpha,
                                   double eps0, double init_var)
  : var_(n_experts, init_var), mode_(mode), alpha_(alpha), eps0_(eps0)
{ }

void PrecisionTracker::update(std::span<const double> signal)
{
    if (signal.size() != var_.size()) {
        throw std::invalid_argument("PrecisionTracker::update: expected " +
                                    std::to_string(var_.size()) + " signals, got " +
                                    std::to_string(signal.size()));
    }
    for (std::size_t i = 0; i < signal.size(); ++i) {
        if (!(signal[i] >= 0.0) || !std::isfinite(signal[i])) {
            throw std::invalid_argument("PrecisionTracker::update: signal for expert " +
                                        std::to_string(i) + " is negative or non-finite");
        }
    }
    for (std::size_t i = 0; i < var_.size(); ++i) {
        var_[i] = alpha_ * var_[i] + (1.0 - alpha_) * signal[i];
    }
}

void PrecisionTracker::set_variance(std::vector<double> var)
{
    if (var.size() != var_.size()) throw std::invalid_argument("PrecisionTracker::set_variance: size mismatch");
    for (double v : var) {
        if (!(v >= 0.0) || !std::isfinite(v)) {
            throw std::invalid_argument("PrecisionTracker::set_variance: negative or non-finite entry");
        }
    }
    var_ = std::move(var);
}

std::vector<double> PrecisionTracker::pi() const
{
    std::vector<double> out;
    out.reserve(var_.size());
    for (double v : var_) out.push_back(1.0 / (v + eps0_));
    return out;
}

Tensor PrecisionTracker::pi_row() const { return Tensor::row(pi()); }

std::vector<double> correctness_signal(std::span<const int> labels, std::size_t n_experts)
{
    std::vector<double> miss(n_experts, 0.0);
    std::size_t n = 0;
    for (int y : labels) {
        if (y < 0) continue;
        if (static_cast<std::size_t>(y) >= n_experts) {
            throw std::out_of_range("correctness_signal: label " + std::to_string(y) +
                                    " out of range");
        }
        ++n;
        for (std::size_t i = 0; i < n_experts; ++i) {
            if (static_cast<std::size_t>(y) != i) miss[i] += 1.0;
        }
    }
    if (n == 0) throw std::invalid_argument("correctness_signal: no labelled entries");
    for (double& m : miss) m /= static_cast<double>(n);
    return miss;
}

// --- Predictor -------------------------------------------------------------------

Predictor::Predictor(std::size_t d_model, std::size_t n_experts, bool with_correction, ad::Rng& rng)
  : hidden("predictor.hidden", 2 * d_model, 4 * d_model, true, rng),
    out("predictor.out", 4 * d_model, d_model, true, rng)
{
    if (with_correction) correction.emplace("predictor.w_pred", d_model, n_experts, false, rng);
}

Var Predictor::operator()(Tape& tape, const Var& x_t, const Var& h_t)
{
    const Var parts[] = {x_t, h_t};
    return out(tape, ad::gelu(hidden(tape, ad::concat(parts))));
}

void Predictor::collect(std::vector<Parameter*>& params)
{
    hidden.collect(params);
    out.collect(params);
    if (correction) correction->collect(params);
}

// --- Router ----------------------------------------------------------------------

Router::Router(GateConfig config, std::size_t d_model, std::size_t n_experts, ad::Rng& init)
  : affinity_map("router.w", d_model, n_experts, true, init),
    config_(config),
    d_model_(d_model),
    n_experts_(n_experts)
{
    config_.validate();
    if (config_.use_beta) {
        const std::size_t size =
            config_.beta_variant == BetaVariant::per_dimension ? d_model : n_experts;
        memory.emplace(size, config_.beta_init, config_.learn_beta);
    }
    if (config_.use_pi) {
        tracker.emplace(n_experts, config_.pi_mode, config_.pi_alpha, config_.pi_eps0,
                        config_.pi_init_var);
    }
    if (config_.use_ant) {
        predictor.emplace(d_model, n_experts,
                          config_.predictor_integration == PredictorIntegration::additive, init);
    }
}

RouterState Router::begin_sequence(Tape& tape, std::size_t batch) const
{
    const bool membrane = config_.use_beta &&
                          config_.beta_variant == BetaVariant::per_expert_membrane_cap;
    RouterState s;
    s.state = tape.constant(Tensor(ad::Shape{batch, membrane ? n_experts_ : d_model_}));
    return s;
}

void Router::step(Tape& tape, RouterState& s, const Var& x_t)
{
    if (x_t.cols() != d_model_ || (s.state.valid() && x_t.rows() != s.state.rows())) {
        throw std::invalid_argument("Router::step: input " + ad::shape_str(x_t.shape()) +
                                    " does not match state " + ad::shape_str(s.state.shape()) +
                                    " with d_model " + std::to_string(d_model_));
    }
    ++s.steps;
    if (!config_.use_beta) {
        s.state = x_t;
        return;
    }
    Var beta = memory->beta(tape);
    if (config_.beta_variant == BetaVariant::per_dimension) {
        s.state = ad::add(ad::mul(beta, s.state), x_t);
        return;
    }
    Var theta = tape.constant(Tensor::scalar(config_.membrane_theta));
    Var cap = ad::relu(ad::sub(s.state, theta));
    s.state = ad::sub(ad::add(ad::mul(beta, s.state), affinity(tape, x_t)), cap);
}

Var Router::predict_next(Tape& tape, const Var& x_t, const RouterState& s)
{
    if (!predictor) throw std::logic_error("Router::predict_next: router has no predictor");
    if (config_.use_beta) return (*predictor)(tape, x_t, s.state);
    Var zeros = tape.constant(Tensor(x_t.shape()));
    return (*predictor)(tape, x_t, zeros);
}

Var Router::affinity(Tape& tape, const Var& input) { return affinity_map(tape, input); }

Var Router::apply_precision(Tape& tape, const Var& z) const
{
    if (!config_.use_pi) return z;
    if (!tracker) throw std::logic_error("Router: use_pi without a precision tracker");
    return ad::mul(z, tape.constant(tracker->pi_row()));
}

Var Router::logits(Tape& tape, const Var& x_t, const RouterState& s, const std::optional<Var>& x_hat)
{
    if (config_.use_ant && (!predictor || !x_hat)) {
        throw std::logic_error("Router::logits: anticipatory gate requires a predictor and x_hat");
    }
    const bool membrane = config_.use_beta &&
                          config_.beta_variant == BetaVariant::per_expert_membrane_cap;
    Var z;
    if (membrane) {
        z = s.state;
    } else if (config_.use_ant && config_.predictor_integration == PredictorIntegration::direct) {
        z = affinity(tape, *x_hat);
    } else {
        z = affinity(tape, config_.use_beta ? s.state : x_t);
        if (config_.use_ant) {
            if (!predictor->correction) throw std::logic_error("Router::logits: additive gate without W_pred");
            z = ad::add(z, (*predictor->correction)(tape, *x_hat));
        }
    }
    return apply_precision(tape, z);
}

Var Router::gate(Tape& tape, const Var& x_t, const RouterState& s, const std::optional<Var>& x_hat)
{
    return ad::softmax(logits(tape, x_t, s, x_hat));
}

std::vector<Parameter*> Router::parameters()
{
    std::vector<Parameter*> out;
    affinity_map.collect(out);
    if (memory && memory->trainable) out.push_back(&memory->beta_raw);
    if (predictor) predictor->collect(out);
    return out;
}

// --- free functions ----------------------------------------------------------------

Var combined_loss(const Var& routing_loss, const std::optional<Var>& pred_loss, double lambda_pred)
{
    if (lambda_pred < 0.0) throw std::invalid_argument("combined_loss: lambda must be >= 0");
    if (!pred_loss) return routing_loss;
    return ad::add(routing_loss, ad::scale(*pred_loss, lambda_pred));
}

Coverage coverage_k(double p_correct, double delta)
{
    if (!(delta > 0.0 && delta < 1.0)) {
        throw std::invalid_argument("coverage_k: delta must lie in (0, 1)");
    }
    if (!(p_correct > 0.0)) {
        throw std::domain_error("coverage_k: coverage unachievable with p_correct <= 0");
    }
    if (p_correct >= 1.0) return Coverage{1, 0.0};
    const double threshold = std::log(delta) / std::log1p(-p_correct);
    if (p_correct >= 1.0 - delta) return Coverage{1, threshold};
    return Coverage{std::max(1, static_cast<int>(std::ceil(threshold))), threshold};
}

} // namespace routelab::routing
