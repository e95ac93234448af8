#pragma once

#include <string>
#include <vector>

#include "routelab/harness/report.hpp"
#include "routelab/harness/store.hpp"

namespace routelab::harness {

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

// Acceptance thresholds. Means are over seeds unless a check says per seed.
namespace tol {
inline constexpr double last_token_a_lo = 0.40, last_token_a_hi = 0.60;
inline constexpr double mean_pool_b_lo = 0.45, mean_pool_b_hi = 0.55;
inline constexpr double lif_learned_a_min = 0.90;
inline constexpr double lif_learned_b_min = 0.97;
inline constexpr double beta_split = 0.90;  // Task A mean beta above, Task B below

inline constexpr double shifting_precision_max = 0.10;
inline constexpr double shifting_ratio_min = 1.5;

inline constexpr std::size_t crossover_lo = 505, crossover_hi = 560;
inline constexpr double pi_ratio_at_600_min = 5.0;

inline constexpr double stateless_max = 0.05;
inline constexpr double beta_only_lo = 0.15, beta_only_hi = 0.45;
inline constexpr double beta_ant_min = 0.65;
inline constexpr double oracle_min = 0.98;
inline constexpr double interaction_min = 0.30;

inline constexpr double coverage_lo = 765.0, coverage_hi = 766.0;
inline constexpr int coverage_k_at_748 = 4;

inline constexpr double lm_standard_bpc_max = 2.0;
inline constexpr double lm_trans_gain_min = 1.5;  // bits, every seed
inline constexpr double lm_beta_mid_min = 0.95;
inline constexpr double lm_ant_trans_min = 0.75;
inline constexpr double lm_ant_trans_std_max = 0.10;
inline constexpr double lm_ant_k_max = 3.5;

inline constexpr double saturation_ref_t4 = 2.21, saturation_ref_t5 = 2.56;
inline constexpr double saturation_band = 0.5;
} // namespace tol

CheckResult check_table1(const ResultTable& t);
CheckResult check_table2(const ResultTable& t);
CheckResult check_table3(const ResultTable& t);
// Works on the ablation store and, for the rows it has, on the table4 store.
CheckResult check_ablation(const ResultTable& t);
CheckResult check_table4(const ResultTable& t);
CheckResult check_coverage_math();
CheckResult check_lm(const ResultTable& t);
// `condition` is "beta+ant" in the ablation, "stateful_ant" in table4.
CheckResult check_saturation(const ResultTable& t, const std::string& condition);

// Every check that applies to the experiment held by `store`.
std::vector<CheckResult> check_experiment(const ResultStore& store);

} // namespace routelab::harness
