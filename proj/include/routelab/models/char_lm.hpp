#pragma once

#include <optional>
#include <vector>

#include "routelab/autodiff/linear.hpp"
#include "routelab/routing/router.hpp"
#include "routelab/tasks/tasks.hpp"

namespace routelab::models {

struct LMConfig {
    std::size_t vocab = 26;
    std::size_t d_model = 64;
    std::size_t n_experts = 2;
    std::size_t hidden = 256;
    std::size_t transition_step = 31;  // input is the last domain-A char
    double transition_weight = 5.0;
};

// d_model -> hidden -> d_model, GELU.
struct ExpertFFN {
    ExpertFFN() = default;
    ExpertFFN(const std::string& name, std::size_t d_model, std::size_t hidden, ad::Rng& rng);

    ad::Var operator()(ad::Tape& tape, const ad::Var& x);
    void collect(std::vector<ad::Parameter*>& out);

    ad::Linear in;
    ad::Linear out;
};

// Embedding -> routed soft mixture of expert FFNs -> output head. The router
// reads the embedding sequence; the experts see the current embedding only.
class CharMoELM {
public:
    CharMoELM(routing::GateConfig gate, LMConfig config, ad::Rng& init);

    CharMoELM(const CharMoELM&) = delete;
    CharMoELM& operator=(const CharMoELM&) = delete;

    std::vector<ad::Parameter*> parameters();
    const LMConfig& config() const { return config_; }

    ad::Parameter embedding;  // [vocab, d_model], N(0, 1)
    routing::Router router;
    std::vector<ExpertFFN> experts;
    ad::Linear head;

private:
    LMConfig config_;
};

struct LMForward {
    ad::Var logits;                 // [S*B, vocab], S = T-1 predicted positions, time-major
    ad::Var gates;                  // [S*B, n_experts]
    ad::Var ce;                     // weighted next-char cross-entropy
    std::optional<ad::Var> pred_loss;
    ad::Var loss;
    std::vector<int> targets;       // [S*B]
    std::size_t steps = 0;          // S
    std::size_t batch = 0;
};

// Teacher-forced next-char prediction at positions 0..T-2. With
// `upweight_transition`, the transition position's loss counts
// transition_weight times. `forced_gate` ([S*B, N]) bypasses the router.
LMForward lm_forward(ad::Tape& tape, CharMoELM& model, const tasks::Batch& batch,
                     bool upweight_transition = true, const ad::Tensor* forced_gate = nullptr);

// Expert with the higher mean gate weight over positions [from, to] of a
// [S*B, N] time-major gate trace. Throws when the top two are within 1e-6.
int identify_domain_expert(const ad::Tensor& gates, std::size_t batch, std::size_t from,
                           std::size_t to);

} // namespace routelab::models
