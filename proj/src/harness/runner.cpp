#include "routelab/harness/runner.hpp"

#include <algorithm>
#include <condition_variable>
#include <cstdio>
#include <exception>
#include <mutex>
#include <optional>
#include <ostream>
#include <thread>

#include "routelab/harness/training.hpp"

namespace routelab::harness {

namespace {

struct Job {
    const Condition* condition;
    std::uint64_t seed;
};

struct Slot {
    std::optional<metrics::RunResult> result;
    std::exception_ptr error;
    bool done = false;
};

} // namespace

RunSummary run_experiment(const ExperimentConfig& config, std::ostream* log)
{
    config.validate();
    const std::vector<Condition> conds = conditions(config);
    ResultStore store(config.out, config.experiment);
    const std::string hash = config.hash();

    RunSummary summary;
    std::vector<Job> jobs;
    for (const Condition& c : conds) {
        for (std::uint64_t seed : config.seeds) {
            if (!config.force && store.contains(c.name, seed, hash)) {
                ++summary.skipped;
                continue;
            }
            jobs.push_back({&c, seed});
        }
    }
    if (log && summary.skipped > 0) {
        *log << to_string(config.experiment) << ": " << summary.skipped
             << " run(s) already stored with config " << hash << ", skipping\n";
    }

    std::vector<Slot> slots(jobs.size());
    std::mutex mu;
    std::condition_variable cv;
    std::size_t next = 0;
    bool abort = false;

    auto worker = [&] {
        for (;;) {
            std::size_t i;
            {
                std::lock_guard<std::mutex> lock(mu);
                if (abort || next >= jobs.size()) return;
                i = next++;
            }
            Slot local;
            try {
                local.result = train_run(config, *jobs[i].condition, jobs[i].seed);
            } catch (...) {
                local.error = std::current_exception();
            }
            {
                std::lock_guard<std::mutex> lock(mu);
                slots[i] = std::move(local);
                slots[i].done = true;
            }
            cv.notify_all();
        }
    };

    const unsigned n_workers = std::max(1u, std::min<unsigned>(config.jobs, static_cast<unsigned>(jobs.size())));
    std::vector<std::thread> threads;
    if (!jobs.empty()) {
        for (unsigned w = 0; w < n_workers; ++w) threads.emplace_back(worker);
    }

    std::exception_ptr failure;
    for (std::size_t i = 0; i < jobs.size() && !failure; ++i) {
        Slot slot;
        {
            std::unique_lock<std::mutex> lock(mu);
            cv.wait(lock, [&] { return slots[i].done; });
            slot = std::move(slots[i]);
        }
        try {
            if (slot.error) std::rethrow_exception(slot.error);
            store.commit(config, *slot.result);
            ++summary.executed;
            if (log) {
                char buf[160];
                std::snprintf(buf, sizeof buf, "[%zu/%zu] %s seed %llu  %.1fs\n", i + 1, jobs.size(),
                              jobs[i].condition->name.c_str(), static_cast<unsigned long long>(jobs[i].seed),
                              slot.result->wallclock_s);
                *log << buf << std::flush;
            }
        } catch (const std::exception& e) {
            failure = std::current_exception();
            store.mark_partial(jobs[i].condition->name + " seed " + std::to_string(jobs[i].seed) + ": " + e.what());
        } catch (...) {
            failure = std::current_exception();
            store.mark_partial(jobs[i].condition->name + " seed " + std::to_string(jobs[i].seed) + ": unknown error");
        }
    }
    {
        std::lock_guard<std::mutex> lock(mu);
        abort = true;
    }
    for (std::thread& t : threads) t.join();
    if (failure) std::rethrow_exception(failure);
    return summary;
}

void dump_tasks(const ExperimentConfig& config, std::size_t n, std::uint64_t seed, std::ostream& out)
{
    std::vector<std::string> seen;
    for (const Condition& c : conditions(config)) {
        tasks::TaskSpec spec = c.task;
        const std::string key = std::string(tasks::to_string(spec.kind)) + (spec.shifting ? "/shifting" : "");
        if (std::find(seen.begin(), seen.end(), key) != seen.end()) continue;
        seen.push_back(key);
        spec.batch_size = n;
        ad::Rng rng = data_stream(seed, spec);
        out << "# task " << key << " seed " << seed << '\n';
        tasks::dump_csv(tasks::generate(spec, rng), out);
    }
}

} // namespace routelab::harness
