#pragma once

#include <string>

namespace routelab::routing {

enum class BetaVariant { per_dimension, per_expert_membrane_cap };
enum class PredictorIntegration { additive, direct };
enum class PrecisionMode { mse, correctness };

// Which routing mechanisms a gate uses, plus their hyperparameters.
struct GateConfig {
    bool use_beta = false;
    bool use_pi = false;
    bool use_ant = false;

    BetaVariant beta_variant = BetaVariant::per_dimension;
    PredictorIntegration predictor_integration = PredictorIntegration::direct;

    double beta_init = 0.9;
    bool learn_beta = true;

    PrecisionMode pi_mode = PrecisionMode::mse;
    double pi_alpha = 0.95;
    double pi_eps0 = 1e-4;
    double pi_init_var = 0.5;

    double lambda_pred = 0.5;

    // Soft membrane cap, per_expert_membrane_cap only.
    double membrane_theta = 1.0;

    void validate() const;
    std::string label() const;
};

const char* to_string(BetaVariant v);
const char* to_string(PredictorIntegration v);
const char* to_string(PrecisionMode v);

} // namespace routelab::routing
