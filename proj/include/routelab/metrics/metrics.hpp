#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "routelab/autodiff/rng.hpp"
#include "routelab/autodiff/tensor.hpp"

namespace routelab::metrics {

using ad::Tensor;

// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> row);

// Fraction of sequences whose gate argmax at `step` equals the label.
// gates: [T*B, N] time-major; labels: [T*B]. Every label at `step` must be set.
double acc_at(std::size_t step, const Tensor& gates, std::span<const int> labels, std::size_t batch);

// Accuracy over every labelled (t, b); unlabelled entries (-1) are skipped.
double accuracy(const Tensor& gates, std::span<const int> labels);

// Mean cross-entropy in bits over rows where `select` is true (all rows when
// `select` is empty).
double bpc(const Tensor& logits, std::span<const int> targets, std::span<const bool> select = {});

// Per-row cross-entropy in nats.
std::vector<double> cross_entropy_rows(const Tensor& logits, std::span<const int> targets);

// Frequency with which K independent draws from each row's gate include the
// row's label (Monte-Carlo check of the coverage formula).
double simulate_topk_coverage(const Tensor& gates, std::span<const int> labels, int k, ad::Rng& rng,
                              int draws_per_row = 1);

struct Aggregate {
    std::size_t n = 0;
    double mean = 0.0;
    double std = 0.0;  // sample std (ddof = 1); NaN for n == 1
};

Aggregate aggregate(std::span<const double> values);

// Per-seed values of one metric for one condition.
using SeedValues = std::map<std::uint64_t, double>;

// condition[s] - baseline[s] for every seed; seed sets must match exactly.
SeedValues paired_deltas(const SeedValues& condition, const SeedValues& baseline);

// Per seed: Δ(both) − Δ(a) − Δ(b), with Δ taken against `base`.
SeedValues interaction(const SeedValues& both, const SeedValues& a, const SeedValues& b,
                       const SeedValues& base);

std::vector<double> values_of(const SeedValues& v);

struct PiRow {
    std::size_t step = 0;
    std::vector<double> pi;
    bool first_above_third = false;  // Π0 > Π2
};

struct PiTimeline {
    std::vector<PiRow> rows;
    std::optional<std::size_t> crossover;  // first step where Π0 > Π2 stops holding
};

// 490, 500, 510, 520, 550, 600
std::span<const std::size_t> default_pi_grid();

// trace[s] is the Π vector after the update at step s.
PiTimeline pi_timeline(const std::vector<std::vector<double>>& trace,
                       std::span<const std::size_t> grid = default_pi_grid());

// Metrics and curves of one (condition, seed) run.
struct RunResult {
    std::string condition;
    std::uint64_t seed = 0;
    std::map<std::string, double> metrics;
    std::map<std::string, std::vector<double>> curves;  // per epoch / step
    double wallclock_s = 0.0;  // kept apart from metrics, which are bitwise reproducible

    double at(const std::string& metric) const;
};

// Metric names shared by the harness, reports and checks.
namespace name {
inline constexpr const char* acc_all = "acc_all";
inline constexpr const char* acc_transition = "acc_transition";
inline constexpr const char* acc_final = "acc_final";
inline constexpr const char* eval_acc_all = "eval_acc_all";
inline constexpr const char* eval_acc_transition = "eval_acc_transition";
inline constexpr const char* early_loss = "early_loss";
inline constexpr const char* final_loss = "final_loss";
inline constexpr const char* pi_crossover_step = "pi_crossover_step";
inline constexpr const char* bpc_all = "bpc_all";
inline constexpr const char* bpc_transition = "bpc_transition";
inline constexpr const char* p_b_transition = "p_b_transition";
inline constexpr const char* p_b_mid = "p_b_mid";
inline constexpr const char* k99 = "k99";
inline constexpr const char* k99_ceil = "k99_ceil";
inline constexpr const char* b_expert = "b_expert";
inline constexpr const char* beta_mean = "beta_mean";
inline constexpr const char* final_train_loss = "final_train_loss";
} // namespace name

} // namespace routelab::metrics
