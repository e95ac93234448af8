#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "routelab/autodiff/rng.hpp"
#include "routelab/autodiff/tensor.hpp"

namespace routelab::tasks {

using ad::Rng;
using ad::Tensor;

enum class TaskKind { early_signal, domain_switch, precision_regression, anticipation, char_lm };

const char* to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& name);

// Toy tasks use two active domains and four experts: domain d is routed to
// expert 2d, experts 1 and 3 are decoys that are never a target. Domain d's
// clean pattern is 1.0 on the d-th half of the input, 0 elsewhere.
struct TaskSpec {
    TaskKind kind = TaskKind::anticipation;
    std::size_t d_model = 16;
    std::size_t n_experts = 4;
    std::size_t seq_len = 12;
    std::size_t switch_step = 6;
    double noise_sigma = 0.8;
    std::size_t batch_size = 512;

    // precision_regression
    bool shifting = false;
    std::size_t shift_step = 500;
    std::vector<double> expert_sigma{0.1, 0.5, 1.5, 0.5};
    double target_sigma = 0.25;

    // char_lm
    std::size_t vocab_size = 26;
    double p_step1 = 0.7;
    double p_step2 = 0.15;

    void validate() const;

    static TaskSpec early_signal();
    static TaskSpec domain_switch();
    static TaskSpec precision_regression(bool shifting);
    static TaskSpec anticipation();
    static TaskSpec char_lm();
};

inline constexpr std::size_t kDomains = 2;
inline constexpr std::size_t kSignalTokens = 3;  // early_signal: tokens 0..2 carry the domain
inline constexpr std::size_t kLetters = 13;      // per-domain alphabet of char_lm

inline int expert_for_domain(int domain) { return 2 * domain; }

// Per-step arrays are time-major: element (t, b) lives at index t * batch + b,
// so rows [t*B, (t+1)*B) of `inputs` are step t for the whole batch.
struct Batch {
    TaskKind kind = TaskKind::anticipation;
    std::size_t batch = 0;
    std::size_t steps = 0;

    Tensor inputs;                    // [T*B, d_model] (toy) or [B, d_model] (precision)
    std::vector<int> tokens;          // char_lm: [T*B]
    std::vector<int> domains;         // [T*B]; precision: [B]
    std::vector<int> routing_labels;  // [T*B], -1 where undefined

    // precision_regression
    std::vector<double> targets;      // clean target, [B]
    std::vector<double> observed;     // target + observation noise, [B]
    Tensor expert_outputs;            // [B, n_experts]

    std::size_t index(std::size_t t, std::size_t b) const { return t * batch + b; }
};

Tensor clean_pattern(int domain, std::size_t d_model);

// Regression target: mean of the domain's half of x.
double precision_target(std::span<const double> x, int domain);

Batch gen_early_signal(const TaskSpec& spec, Rng& rng);
Batch gen_domain_switch(const TaskSpec& spec, Rng& rng);
Batch gen_precision_regression(const TaskSpec& spec, Rng& rng, std::int64_t step);
Batch gen_anticipation(const TaskSpec& spec, Rng& rng);
Batch gen_char_lm(const TaskSpec& spec, Rng& rng);

// Dispatches on spec.kind; `step` is only read by the precision task.
Batch generate(const TaskSpec& spec, Rng& rng, std::int64_t step = 0);

// Expert noise level at a given training step (the shifting schedule swaps
// experts 0 and 2 from shift_step on).
std::vector<double> expert_noise_at(const TaskSpec& spec, std::int64_t step);

// Distribution of (next - prev) mod 13 within a domain.
std::vector<double> char_transition_probs(const TaskSpec& spec);

// One CSV row per (sequence, step); see docs/formats.md.
void dump_csv(const Batch& batch, std::ostream& out);

} // namespace routelab::tasks
