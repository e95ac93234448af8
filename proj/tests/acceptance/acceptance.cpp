// Runs (or reuses) every experiment and prints one PASS/FAIL line per criterion.
// Stored runs whose config hash matches are not recomputed, so a populated
// results directory makes this quick; an empty one costs several hours.
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "routelab/harness/checks.hpp"
#include "routelab/harness/runner.hpp"
#include "routelab/harness/selftest.hpp"

using namespace routelab::harness;

namespace {

std::filesystem::path results_root()
{
    if (const char* env = std::getenv("ROUTE_LAB_OUT")) return env;
    return ROUTE_LAB_RESULTS;
}

ResultTable ensure(Experiment e)
{
    ExperimentConfig cfg = ExperimentConfig::defaults(e);
    cfg.out = results_root();
    const RunSummary s = run_experiment(cfg, &std::cerr);
    std::cerr << to_string(e) << ": " << s.executed << " run, " << s.skipped << " reused\n";
    return ResultTable::load(ResultStore(cfg.out, e));
}

CheckResult combine(const std::string& name, const std::vector<CheckResult>& parts)
{
    CheckResult out{name, true, ""};
    for (const CheckResult& p : parts) {
        out.pass = out.pass && p.pass;
        out.detail += (out.detail.empty() ? "" : " | ") + p.name + ": " + p.detail;
    }
    return out;
}

} // namespace

int main()
{
    const std::vector<std::pair<int, std::function<CheckResult()>>> criteria = {
        {1, [] { return check_table1(ensure(Experiment::table1)); }},
        {2, [] { return check_table2(ensure(Experiment::table2)); }},
        {3, [] { return check_table3(ensure(Experiment::table3)); }},
        {4, [] {
             return combine("ablation", {check_ablation(ensure(Experiment::ablation)),
                                         check_table4(ensure(Experiment::table4))});
         }},
        {5, [] { return check_coverage_math(); }},
        {6, [] { return check_lm(ensure(Experiment::lm)); }},
        {7, [] { return combine("selftest", selftest()); }},
        {8, [] {
             return combine("saturation", {check_saturation(ensure(Experiment::table4), "stateful_ant"),
                                           check_saturation(ensure(Experiment::ablation), "beta+ant")});
         }},
    };

    int failed = 0;
    for (const auto& [id, run] : criteria) {
        CheckResult r;
        try {
            r = run();
        } catch (const std::exception& e) {
            r = {"error", false, e.what()};
        }
        failed += !r.pass;
        std::printf("%s %d %s: %s\n", r.pass ? "PASS" : "FAIL", id, r.name.c_str(), r.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
