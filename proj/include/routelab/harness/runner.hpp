#pragma once

#include <cstddef>
#include <iosfwd>

#include "routelab/harness/config.hpp"
#include "routelab/harness/store.hpp"

namespace routelab::harness {

struct RunSummary {
    std::size_t executed = 0;
    std::size_t skipped = 0;  // already stored under the same config hash
};

// Trains every condition x seed not already in the store (all of them with
// config.force). Runs execute on config.jobs workers; results are committed in
// (condition, seed) order regardless of which worker finishes first. On any
// failure the store is marked PARTIAL and the exception propagates.
RunSummary run_experiment(const ExperimentConfig& config, std::ostream* log = nullptr);

// Writes `n` sample sequences of every distinct task the experiment trains on,
// drawn from the same data stream a run with `seed` uses.
void dump_tasks(const ExperimentConfig& config, std::size_t n, std::uint64_t seed, std::ostream& out);

} // namespace routelab::harness
