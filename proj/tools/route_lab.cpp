// route_lab: train, report and check the routing experiments.
#include <cstdio>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "routelab/harness/checks.hpp"
#include "routelab/harness/report.hpp"
#include "routelab/harness/runner.hpp"
#include "routelab/harness/selftest.hpp"
#include "routelab/tasks/tasks.hpp"

namespace rh = routelab::harness;

namespace {

constexpr int kOk = 0;
constexpr int kInvalid = 1;
constexpr int kCheckFailed = 2;

std::vector<std::uint64_t> parse_seeds(const std::string& text)
{
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ',')) {
        std::size_t used = 0;
        unsigned long long v = 0;
        try {
            v = std::stoull(part, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (part.empty() || used != part.size() || part[0] == '-') {
            throw std::invalid_argument("bad seed '" + part + "' in --seeds");
        }
        seeds.push_back(v);
    }
    return seeds;
}

int print_checks(const std::vector<rh::CheckResult>& results)
{
    bool ok = true;
    for (const rh::CheckResult& r : results) {
        std::cout << (r.pass ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
        ok = ok && r.pass;
    }
    return ok ? kOk : kCheckFailed;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Routing-gate experiments: temporal memory, precision gating, anticipatory routing"};
    app.require_subcommand(1);

    std::string exp_name;
    std::string seeds_text;
    std::size_t epochs = 0;
    std::string out_dir = rh::default_out_dir().string();
    bool force = false;
    bool check = false;
    unsigned jobs = 1;

    auto* run = app.add_subcommand("run", "Train every condition x seed of an experiment");
    run->add_option("--exp", exp_name, "table1|table2|table3|table4|ablation|lm")->required();
    run->add_option("--seeds", seeds_text, "Comma-separated seeds (default 0,1,2,3,4)");
    run->add_option("--epochs", epochs, "Override the epoch / step count");
    run->add_option("--out", out_dir, "Results root (default $ROUTE_LAB_OUT or ./results)");
    run->add_option("--jobs", jobs, "Worker threads")->check(CLI::Range(1u, 256u));
    run->add_flag("--force", force, "Re-run keys that are already stored");
    run->add_flag("--check", check, "Evaluate the acceptance thresholds afterwards (exit 2 on a miss)");

    std::string csv_path;
    auto* report = app.add_subcommand("report", "Render the result tables from stored runs");
    report->add_option("--exp", exp_name, "Experiment")->required();
    report->add_option("--out", out_dir, "Results root");
    report->add_option("--csv", csv_path, "Also write the aggregated cells as CSV");
    report->add_flag("--check", check, "Evaluate the acceptance thresholds (exit 2 on a miss)");

    std::size_t n_dump = 4;
    std::uint64_t dump_seed = 0;
    auto* dump = app.add_subcommand("dump-tasks", "Print sample sequences as CSV");
    dump->add_option("--exp", exp_name, "Experiment")->required();
    dump->add_option("--n", n_dump, "Sequences per task")->check(CLI::Range(std::size_t{1}, std::size_t{100000}));
    dump->add_option("--seed", dump_seed, "Seed for the data stream");

    auto* selftest = app.add_subcommand("selftest", "Gradient checks and invariant suite (no training)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kInvalid;
    }

    try {
        if (*selftest) {
            return print_checks(rh::selftest()) == kOk ? kOk : kCheckFailed;
        }
        const rh::Experiment experiment = rh::experiment_from_string(exp_name);
        if (*dump) {
            rh::ExperimentConfig cfg = rh::ExperimentConfig::defaults(experiment);
            rh::dump_tasks(cfg, n_dump, dump_seed, std::cout);
            return kOk;
        }
        if (*run) {
            rh::ExperimentConfig cfg = rh::ExperimentConfig::defaults(experiment);
            if (run->count("--seeds") > 0) cfg.seeds = parse_seeds(seeds_text);
            if (epochs > 0) cfg.epochs = epochs;
            cfg.out = out_dir;
            cfg.force = force;
            cfg.jobs = jobs;
            cfg.validate();
            const rh::RunSummary s = rh::run_experiment(cfg, &std::cerr);
            std::cerr << s.executed << " run(s) executed, " << s.skipped << " skipped\n";
        }
        const rh::ResultStore store(out_dir, experiment);
        const rh::Report rep = rh::build_report(store);
        std::cout << rep.text;
        if (!csv_path.empty()) rh::write_atomic(csv_path, rep.csv);
        if (check) return print_checks(rh::check_experiment(store));
        return kOk;
    } catch (const rh::MissingRuns& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kInvalid;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kInvalid;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kInvalid;
    }
}
