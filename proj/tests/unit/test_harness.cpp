#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "routelab/harness/checks.hpp"
#include "routelab/harness/report.hpp"
#include "routelab/harness/runner.hpp"
#include "routelab/harness/selftest.hpp"
#include "routelab/harness/training.hpp"

using namespace routelab;
using namespace routelab::harness;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name)
{
    const fs::path p = fs::temp_directory_path() / ("routelab_test_" + name);
    fs::remove_all(p);
    return p;
}

ExperimentConfig quick_table2(const fs::path& out)
{
    ExperimentConfig c = ExperimentConfig::defaults(Experiment::table2);
    c.epochs = 120;
    c.seeds = {0, 1};
    c.out = out;
    return c;
}

std::vector<MetricRow> fake_rows(const std::vector<std::string>& conds, std::vector<std::uint64_t> seeds,
                                 const std::string& metric, double base)
{
    std::vector<MetricRow> rows;
    for (std::size_t c = 0; c < conds.size(); ++c) {
        for (std::uint64_t s : seeds) {
            rows.push_back({"table4", conds[c], s, "h", metric, base + 0.1 * double(c) + 0.001 * double(s)});
        }
    }
    return rows;
}

} // namespace

TEST_CASE("config: defaults per experiment")
{
    CHECK(ExperimentConfig::defaults(Experiment::table1).epochs == 500);
    CHECK(ExperimentConfig::defaults(Experiment::table2).epochs == 1000);
    CHECK(ExperimentConfig::defaults(Experiment::ablation).epochs == 800);
    const ExperimentConfig lm = ExperimentConfig::defaults(Experiment::lm);
    CHECK(lm.epochs == 1500);
    CHECK(lm.batch_size == 256);
    for (Experiment e : all_experiments()) CHECK(ExperimentConfig::defaults(e).lr == 3e-3);
}

TEST_CASE("config: condition lists have the expected shapes")
{
    CHECK(conditions(ExperimentConfig::defaults(Experiment::table1)).size() == 8);
    CHECK(conditions(ExperimentConfig::defaults(Experiment::table2)).size() == 4);
    CHECK(conditions(ExperimentConfig::defaults(Experiment::table4)).size() == 4);
    const auto ab = conditions(ExperimentConfig::defaults(Experiment::ablation));
    REQUIRE(ab.size() == 10);
    CHECK(ab.front().name == "baseline");
    CHECK(ab[1].name == "none");
    CHECK(ab.back().name == "oracle");
    CHECK(conditions(ExperimentConfig::defaults(Experiment::lm)).size() == 3);
}

TEST_CASE("config: validation")
{
    ExperimentConfig c = ExperimentConfig::defaults(Experiment::ablation);
    c.seeds.clear();
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c.seeds = {3, 3};
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c.seeds = {0};
    c.epochs = 10;  // shorter than the accuracy window
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    CHECK_THROWS_AS(experiment_from_string("table7"), std::invalid_argument);
    CHECK(experiment_from_string("table5") == Experiment::ablation);
}

TEST_CASE("config: hash is stable, ignores seeds and output, tracks every default")
{
    ExperimentConfig a = ExperimentConfig::defaults(Experiment::table4);
    ExperimentConfig b = a;
    CHECK(a.hash() == b.hash());
    CHECK(a.hash().size() == 16);
    b.seeds = {7};
    b.out = "/elsewhere";
    b.jobs = 4;
    CHECK(a.hash() == b.hash());
    b.lr = 1e-3;
    CHECK(a.hash() != b.hash());
    b = a;
    b.eval_sequences = 100;
    CHECK(a.hash() != b.hash());
}

TEST_CASE("metrics csv: parse(emit(x)) == x, including awkward doubles")
{
    const double nan = std::numeric_limits<double>::quiet_NaN();
    std::vector<MetricRow> rows = {{"lm", "beta+ant", 0, "abc", "k99", 2.4000000000000004},
                                   {"lm", "beta+ant", 18446744073709551615ull, "abc", "tiny", 4.9406564584124654e-324},
                                   {"table1", "A/last_token", 3, "abc", "acc", -0.0},
                                   {"table1", "A/last_token", 3, "abc", "big", 1.7976931348623157e308},
                                   {"table1", "A/last_token", 3, "abc", "inf", INFINITY}};
    const auto back = parse_metrics_csv(emit_metrics_csv(rows));
    CHECK(back == rows);
    CHECK(std::signbit(back[2].value));

    const auto with_nan = parse_metrics_csv(emit_metrics_csv({{"x", "y", 1, "h", "m", nan}}));
    CHECK(std::isnan(with_nan.at(0).value));

    CHECK_THROWS(parse_metrics_csv("wrong,header\n"));
    CHECK_THROWS(parse_metrics_csv(emit_metrics_csv({}) + "a,b,c\n"));
    CHECK_THROWS(emit_metrics_csv({{"x", "has,comma", 0, "h", "m", 1.0}}));
}

TEST_CASE("report: single seed shows n/a; missing runs are listed")
{
    CHECK(format_cell(metrics::Aggregate{1, 0.5, NAN}, 3) == "0.500 ± n/a");
    CHECK(format_cell(metrics::Aggregate{5, 0.741, 0.002}, 3, true) == "+0.741 ± 0.002");

    const std::vector<std::string> conds{"baseline", "stateless_ant", "stateful_ant", "oracle"};
    auto rows = fake_rows(conds, {0}, "acc_all", 0.5);
    const auto more = fake_rows(conds, {0}, "acc_transition", 0.1);
    rows.insert(rows.end(), more.begin(), more.end());
    const ResultTable t = ResultTable::from_rows(rows, "h", conds);
    const Report r = build_report(Experiment::table4, t);
    CHECK(r.text.find("n/a") != std::string::npos);
    CHECK(r.text.find("Stateful anticipatory") != std::string::npos);

    auto partial = fake_rows(conds, {0, 1}, "acc_all", 0.5);
    partial.pop_back();  // oracle seed 1
    try {
        ResultTable::from_rows(partial, "h", conds);
        FAIL("expected MissingRuns");
    } catch (const MissingRuns& e) {
        CHECK(std::string(e.what()).find("oracle seed 1") != std::string::npos);
    }
}

TEST_CASE("report: ablation cells equal recomputation from the raw rows")
{
    const auto conds = [] {
        std::vector<std::string> out;
        for (const auto& c : conditions(ExperimentConfig::defaults(Experiment::ablation))) out.push_back(c.name);
        return out;
    }();
    std::vector<MetricRow> rows;
    for (const char* m : {"acc_all", "acc_transition"}) {
        auto part = fake_rows(conds, {0, 1, 2}, m, 0.05);
        rows.insert(rows.end(), part.begin(), part.end());
    }
    const ResultTable t = ResultTable::from_rows(rows, "h", conds);
    const Report r = build_report(Experiment::ablation, t);
    CAPTURE(r.text);
    // Values are linear in the condition index, so the interaction is zero per seed:
    // c(beta+ant) - c(beta) - c(ant) + c(base) = (0.6 - 0.2 - 0.4 + 0.0) = 0.
    CHECK(r.text.find("interaction") != std::string::npos);
    CHECK(r.text.find("+0.000 ± 0.000") != std::string::npos);
    CHECK(r.csv.find("ablation,beta + Ant,acc@transition,3,") != std::string::npos);
}

TEST_CASE("store and runner: commit, skip, force, reload")
{
    const fs::path dir = fresh_dir("store");
    ExperimentConfig cfg = quick_table2(dir);
    const RunSummary first = run_experiment(cfg);
    CHECK(first.executed == 8);
    CHECK(fs::exists(dir / "table2" / "manifest.json"));
    CHECK(fs::exists(dir / "table2" / "curves" / "static-precision__seed1.csv"));

    const RunSummary again = run_experiment(cfg);
    CHECK(again.executed == 0);
    CHECK(again.skipped == 8);

    cfg.seeds = {1};
    cfg.force = true;
    CHECK(run_experiment(cfg).executed == 4);

    const ResultStore store(dir, Experiment::table2);
    CHECK(store.runs().size() == 8);
    CHECK(store.contains("shifting/precision", 0, cfg.hash()));
    CHECK_FALSE(store.contains("shifting/precision", 0, "0000000000000000"));
    CHECK_FALSE(store.partial());
    CHECK(build_report(store).text.find("Table 2") != std::string::npos);

    // A changed default invalidates the cache for every key.
    cfg.force = false;
    cfg.seeds = {0};
    cfg.lr = 1e-3;
    CHECK(run_experiment(cfg).executed == 4);
    fs::remove_all(dir);
}

TEST_CASE("runner: identical config and seed give bitwise-identical metrics")
{
    const fs::path a = fresh_dir("repro_a"), b = fresh_dir("repro_b");
    ExperimentConfig ca = quick_table2(a), cb = quick_table2(b);
    cb.jobs = 2;  // worker count must not matter
    run_experiment(ca);
    run_experiment(cb);
    CHECK(read_file(a / "table2" / "metrics.csv") == read_file(b / "table2" / "metrics.csv"));
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_CASE("runner: an unwritable output root aborts the run")
{
    const fs::path dir = fresh_dir("blocked");
    fs::create_directories(dir);
    { std::ofstream(dir / "file") << "x"; }
    ExperimentConfig cfg = quick_table2(dir / "file" / "sub");
    cfg.seeds = {0};
    CHECK_THROWS_AS(run_experiment(cfg), StoreError);
    fs::remove_all(dir);
}

TEST_CASE("store: partial marker is written and cleared by the next commit")
{
    const fs::path dir = fresh_dir("partial");
    ResultStore store(dir, Experiment::table2);
    store.mark_partial("disk full");
    CHECK(store.partial());
    ExperimentConfig cfg = quick_table2(dir);
    cfg.seeds = {0};
    metrics::RunResult r;
    r.condition = "static/affinity";
    r.metrics["final_loss"] = 0.1;
    store.commit(cfg, r);
    CHECK_FALSE(store.partial());
    fs::remove_all(dir);
}

TEST_CASE("training: beta stays in (0, 1) and runs are deterministic")
{
    ExperimentConfig cfg = ExperimentConfig::defaults(Experiment::table1);
    cfg.epochs = 60;
    cfg.eval_sequences = 256;
    const Condition c = conditions(cfg)[3];  // A/lif_learned
    const metrics::RunResult a = train_run(cfg, c, 5);
    const metrics::RunResult b = train_run(cfg, c, 5);
    CHECK(a.metrics == b.metrics);
    CHECK(a.curves == b.curves);
    for (int i = 0; i < 4; ++i) {
        const double beta = a.at("beta_" + std::to_string(i));
        CHECK(beta > 0.0);
        CHECK(beta < 1.0);
    }
}

TEST_CASE("selftest passes")
{
    for (const CheckResult& r : selftest()) {
        CAPTURE(r.name);
        CAPTURE(r.detail);
        CHECK(r.pass);
    }
}

TEST_CASE("coverage-math criterion")
{
    CHECK(check_coverage_math().pass);
}

TEST_CASE("dump-tasks writes one block per distinct task")
{
    std::ostringstream out;
    dump_tasks(ExperimentConfig::defaults(Experiment::table2), 2, 0, out);
    const std::string s = out.str();
    CHECK(s.find("# task precision_regression seed 0") != std::string::npos);
    CHECK(s.find("# task precision_regression/shifting seed 0") != std::string::npos);
}
