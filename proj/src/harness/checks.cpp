#include "routelab/harness/checks.hpp"

#include <cmath>
#include <cstdarg>
#include <cstdio>

#include "routelab/routing/router.hpp"

namespace routelab::harness {

namespace {

namespace mn = metrics::name;

// Accumulates sub-conditions of one criterion into a single result.
class Verdict {
public:
    explicit Verdict(std::string name) { r_.name = std::move(name); r_.pass = true; }

    void expect(bool ok, const char* fmt, ...) __attribute__((format(printf, 3, 4)))
    {
        char buf[256];
        va_list ap;
        va_start(ap, fmt);
        std::vsnprintf(buf, sizeof buf, fmt, ap);
        va_end(ap);
        if (!r_.detail.empty()) r_.detail += "; ";
        r_.detail += buf;
        if (!ok) {
            r_.detail += " [miss]";
            r_.pass = false;
        }
    }

    CheckResult done() { return r_; }

private:
    CheckResult r_;
};

double mean_of(const ResultTable& t, const std::string& c, const std::string& m) { return t.aggregate(c, m).mean; }

} // namespace

CheckResult check_table1(const ResultTable& t)
{
    Verdict v("table1 beta-routing");
    const double a_last = mean_of(t, "A/last_token", mn::acc_final);
    const double b_pool = mean_of(t, "B/mean_pool", mn::acc_final);
    const double a_lif = mean_of(t, "A/lif_learned", mn::acc_final);
    const double b_lif = mean_of(t, "B/lif_learned", mn::acc_final);
    const double a_beta = mean_of(t, "A/lif_learned", mn::beta_mean);
    const double b_beta = mean_of(t, "B/lif_learned", mn::beta_mean);
    v.expect(a_last >= tol::last_token_a_lo && a_last <= tol::last_token_a_hi, "A last-token %.3f in [%.2f, %.2f]",
             a_last, tol::last_token_a_lo, tol::last_token_a_hi);
    v.expect(b_pool >= tol::mean_pool_b_lo && b_pool <= tol::mean_pool_b_hi, "B mean-pool %.3f in [%.2f, %.2f]", b_pool,
             tol::mean_pool_b_lo, tol::mean_pool_b_hi);
    v.expect(a_lif >= tol::lif_learned_a_min, "A learned %.3f >= %.2f", a_lif, tol::lif_learned_a_min);
    v.expect(b_lif >= tol::lif_learned_b_min, "B learned %.3f >= %.2f", b_lif, tol::lif_learned_b_min);
    v.expect(a_beta > tol::beta_split, "A mean beta %.3f > %.2f", a_beta, tol::beta_split);
    v.expect(b_beta < tol::beta_split, "B mean beta %.3f < %.2f", b_beta, tol::beta_split);
    return v.done();
}

CheckResult check_table2(const ResultTable& t)
{
    Verdict v("table2 precision gating");
    const double sp = mean_of(t, "shifting/precision", mn::final_loss);
    const double sa = mean_of(t, "shifting/affinity", mn::final_loss);
    const double stp = mean_of(t, "static/precision", mn::final_loss);
    const double sta = mean_of(t, "static/affinity", mn::final_loss);
    v.expect(sp <= tol::shifting_precision_max, "shifting precision final %.4f <= %.2f", sp, tol::shifting_precision_max);
    v.expect(sa >= tol::shifting_ratio_min * sp, "shifting affinity %.4f >= %.1fx precision (%.2fx)", sa,
             tol::shifting_ratio_min, sa / sp);
    v.expect(stp <= sta, "static precision %.4f <= affinity %.4f", stp, sta);
    return v.done();
}

CheckResult check_table3(const ResultTable& t)
{
    Verdict v("table3 Pi dynamics");
    const std::string c = "shifting/precision";
    const auto& p0_490 = t.values(c, "pi_0@490");
    const auto& p2_490 = t.values(c, "pi_2@490");
    const auto& p0_600 = t.values(c, "pi_0@600");
    const auto& p2_600 = t.values(c, "pi_2@600");
    const auto& cross = t.values(c, mn::pi_crossover_step);
    bool before = true, window = true, ratio = true;
    double min_ratio = INFINITY, lo = INFINITY, hi = -INFINITY;
    for (const auto& [seed, x] : cross) {
        before = before && p0_490.at(seed) > p2_490.at(seed);
        window = window && x >= static_cast<double>(tol::crossover_lo) && x <= static_cast<double>(tol::crossover_hi);
        lo = std::min(lo, x);
        hi = std::max(hi, x);
        const double r = p2_600.at(seed) / p0_600.at(seed);
        min_ratio = std::min(min_ratio, r);
        ratio = ratio && r >= tol::pi_ratio_at_600_min;
    }
    v.expect(before, "Pi0 > Pi2 at step 490 on every seed");
    v.expect(window, "first crossover %.0f..%.0f within [%zu, %zu]", lo, hi, tol::crossover_lo, tol::crossover_hi);
    v.expect(ratio, "Pi2/Pi0 at 600 >= %.0f (min %.1f)", tol::pi_ratio_at_600_min, min_ratio);
    return v.done();
}

CheckResult check_ablation(const ResultTable& t)
{
    Verdict v("ablation acc@transition");
    for (const char* c : {"baseline", "ant", "pi", "pi+ant"}) {
        const double m = mean_of(t, c, mn::acc_transition);
        v.expect(m <= tol::stateless_max, "%s %.3f <= %.2f", c, m, tol::stateless_max);
    }
    const double b = mean_of(t, "beta", mn::acc_transition);
    v.expect(b >= tol::beta_only_lo && b <= tol::beta_only_hi, "beta %.3f in [%.2f, %.2f]", b, tol::beta_only_lo,
             tol::beta_only_hi);
    const double ba = mean_of(t, "beta+ant", mn::acc_transition);
    v.expect(ba >= tol::beta_ant_min, "beta+ant %.3f >= %.2f", ba, tol::beta_ant_min);
    const double o = mean_of(t, "oracle", mn::acc_transition);
    v.expect(o >= tol::oracle_min, "oracle %.3f >= %.2f", o, tol::oracle_min);
    const auto inter =
        metrics::interaction(t.values("beta+ant", mn::acc_transition), t.values("beta", mn::acc_transition),
                             t.values("ant", mn::acc_transition), t.values("baseline", mn::acc_transition));
    const double im = metrics::aggregate(metrics::values_of(inter)).mean;
    v.expect(im >= tol::interaction_min, "interaction %+.3f >= %+.2f", im, tol::interaction_min);
    return v.done();
}

CheckResult check_table4(const ResultTable& t)
{
    Verdict v("table4 acc@transition");
    for (const char* c : {"baseline", "stateless_ant"}) {
        const double m = mean_of(t, c, mn::acc_transition);
        v.expect(m <= tol::stateless_max, "%s %.3f <= %.2f", c, m, tol::stateless_max);
    }
    const double s = mean_of(t, "stateful_ant", mn::acc_transition);
    v.expect(s >= tol::beta_ant_min, "stateful_ant %.3f >= %.2f", s, tol::beta_ant_min);
    const double o = mean_of(t, "oracle", mn::acc_transition);
    v.expect(o >= tol::oracle_min, "oracle %.3f >= %.2f", o, tol::oracle_min);
    return v.done();
}

CheckResult check_coverage_math()
{
    Verdict v("coverage math");
    const routing::Coverage low = routing::coverage_k(0.006, 0.01);
    const routing::Coverage high = routing::coverage_k(0.748, 0.01);
    v.expect(low.threshold >= tol::coverage_lo && low.threshold <= tol::coverage_hi, "K(0.006) = %.3f in [%.0f, %.0f]",
             low.threshold, tol::coverage_lo, tol::coverage_hi);
    v.expect(high.k == tol::coverage_k_at_748, "K(0.748) = %d (unrounded %.3f)", high.k, high.threshold);
    return v.done();
}

CheckResult check_lm(const ResultTable& t)
{
    Verdict v("lm table6");
    const double std_bpc = mean_of(t, "standard", mn::bpc_all);
    v.expect(std_bpc <= tol::lm_standard_bpc_max, "standard BPC(all) %.3f <= %.1f", std_bpc, tol::lm_standard_bpc_max);
    const auto d = metrics::paired_deltas(t.values("beta", mn::bpc_transition), t.values("standard", mn::bpc_transition));
    double worst = -INFINITY;
    for (const auto& [seed, x] : d) worst = std::max(worst, x);
    v.expect(worst <= -tol::lm_trans_gain_min, "beta BPC(trans) gain >= %.1f bits on every seed (smallest %.2f)",
             tol::lm_trans_gain_min, -worst);
    const double mid = mean_of(t, "beta", mn::p_b_mid);
    v.expect(mid >= tol::lm_beta_mid_min, "beta p_B@mid %.3f >= %.2f", mid, tol::lm_beta_mid_min);
    const metrics::Aggregate pt = t.aggregate("beta+ant", mn::p_b_transition);
    v.expect(pt.mean >= tol::lm_ant_trans_min, "beta+ant p_B@trans %.3f >= %.2f", pt.mean, tol::lm_ant_trans_min);
    const bool spread_ok = pt.n > 1 ? pt.std <= tol::lm_ant_trans_std_max : true;
    v.expect(spread_ok, "its std %.3f <= %.2f", pt.std, tol::lm_ant_trans_std_max);
    const double k_ant = mean_of(t, "beta+ant", mn::k99);
    const double k_std = mean_of(t, "standard", mn::k99);
    v.expect(k_ant <= tol::lm_ant_k_max, "beta+ant K %.2f <= %.1f", k_ant, tol::lm_ant_k_max);
    v.expect(k_ant < k_std, "beta+ant K %.2f < standard K %.2f", k_ant, k_std);
    return v.done();
}

CheckResult check_saturation(const ResultTable& t, const std::string& condition)
{
    Verdict v("saturation signature");
    const auto& h4 = t.values(condition, "h_block_mean@4");
    const auto& h5 = t.values(condition, "h_block_mean@5");
    bool grows = true, near = true;
    for (const auto& [seed, a] : h4) {
        const double b = h5.at(seed);
        grows = grows && b > a;
        near = near && std::abs(a - tol::saturation_ref_t4) <= tol::saturation_band &&
               std::abs(b - tol::saturation_ref_t5) <= tol::saturation_band;
    }
    const double m4 = mean_of(t, condition, "h_block_mean@4");
    const double m5 = mean_of(t, condition, "h_block_mean@5");
    v.expect(grows, "h@5 > h@4 on every seed (means %.2f vs %.2f)", m5, m4);
    v.expect(near, "every seed within %.1f of %.2f / %.2f", tol::saturation_band, tol::saturation_ref_t4,
             tol::saturation_ref_t5);
    return v.done();
}

std::vector<CheckResult> check_experiment(const ResultStore& store)
{
    const ResultTable t = ResultTable::load(store);
    switch (store.experiment()) {
    case Experiment::table1: return {check_table1(t)};
    case Experiment::table2: return {check_table2(t)};
    case Experiment::table3: return {check_table3(t)};
    case Experiment::table4: return {check_table4(t), check_saturation(t, "stateful_ant")};
    case Experiment::ablation: return {check_ablation(t), check_saturation(t, "beta+ant")};
    case Experiment::lm: return {check_lm(t), check_coverage_math()};
    }
    throw std::logic_error("check_experiment: unhandled experiment");
}

} // namespace routelab::harness
