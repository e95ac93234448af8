#include "routelab/routing/gate_config.hpp"

#include <stdexcept>

namespace routelab::routing {

void GateConfig::validate() const
{
    if (!(beta_init > 0.0 && beta_init < 1.0)) {
        throw std::invalid_argument("GateConfig: beta_init must lie in (0, 1)");
    }
    if (!(pi_alpha > 0.0 && pi_alpha < 1.0)) {
        throw std::invalid_argument("GateConfig: pi_alpha must lie in (0, 1)");
    }
    if (!(pi_eps0 > 0.0)) throw std::invalid_argument("GateConfig: pi_eps0 must be positive");
    if (!(pi_init_var > 0.0)) throw std::invalid_argument("GateConfig: pi_init_var must be positive");
    if (!(lambda_pred >= 0.0)) throw std::invalid_argument("GateConfig: lambda_pred must be >= 0");
    if (use_ant && use_beta && beta_variant == BetaVariant::per_expert_membrane_cap) {
        throw std::invalid_argument(
            "GateConfig: the predictor reads a d_model-sized state; per-expert membrane state is "
            "not supported with use_ant");
    }
}

std::string GateConfig::label() const
{
    std::string s;
    auto append = [&s](const char* part) {
        if (!s.empty()) s += '+';
        s += part;
    };
    if (use_beta) append("beta");
    if (use_pi) append("pi");
    if (use_ant) append("ant");
    return s.empty() ? "none" : s;
}

const char* to_string(BetaVariant v)
{
    return v == BetaVariant::per_dimension ? "per_dimension" : "per_expert_membrane_cap";
}

const char* to_string(PredictorIntegration v)
{
    return v == PredictorIntegration::additive ? "additive" : "direct";
}

const char* to_string(PrecisionMode v) { return v == PrecisionMode::mse ? "mse" : "correctness"; }

} // namespace routelab::routing
