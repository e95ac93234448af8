#pragma once

#include <cstdint>
#include <functional>

#include "routelab/harness/config.hpp"
#include "routelab/metrics/metrics.hpp"

namespace routelab::harness {

// Called every `every` epochs with (epoch, training loss).
struct Progress {
    std::function<void(std::size_t, double)> callback;
    std::size_t every = 100;
};

// Trains one condition for one seed and evaluates it. Deterministic: the data
// stream depends only on (seed, task), the init stream on (seed, condition).
metrics::RunResult train_run(const ExperimentConfig& config, const Condition& condition,
                             std::uint64_t seed, const Progress& progress = {});

ad::Rng data_stream(std::uint64_t seed, const tasks::TaskSpec& task);
ad::Rng eval_stream(std::uint64_t seed, const tasks::TaskSpec& task);
ad::Rng init_stream(std::uint64_t seed, const std::string& condition);

// Mean of h_t over the first-half (domain-0) coordinates, across the batch.
double block_mean(const ad::Tensor& state);

} // namespace routelab::harness
