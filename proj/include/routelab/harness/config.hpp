#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "routelab/models/char_lm.hpp"
#include "routelab/models/toy_router.hpp"
#include "routelab/routing/gate_config.hpp"
#include "routelab/tasks/tasks.hpp"

namespace routelab::harness {

enum class Experiment { table1, table2, table3, table4, ablation, lm };

const char* to_string(Experiment e);
Experiment experiment_from_string(const std::string& name);
const std::vector<Experiment>& all_experiments();

enum class ModelKind { toy, regression, char_lm };

// One trained configuration within an experiment.
struct Condition {
    std::string name;
    ModelKind model = ModelKind::toy;
    routing::GateConfig gate;
    models::Readout readout = models::Readout::current;
    tasks::TaskSpec task;
    std::size_t transition_step = 0;  // the step acc_transition is measured at

    nlohmann::json to_json() const;
};

struct ExperimentConfig {
    Experiment experiment = Experiment::ablation;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    std::size_t epochs = 800;          // optimiser steps for the precision experiments
    std::size_t batch_size = 512;
    double lr = 3e-3;
    std::size_t window = 50;           // trailing epochs averaged for training accuracy
    std::size_t loss_window = 100;     // leading/trailing steps for early/final loss
    std::size_t eval_sequences = 4096; // held-out sequences scored after training
    models::LMConfig lm;

    // Not part of the hash.
    std::filesystem::path out = "results";
    unsigned jobs = 1;
    bool force = false;

    static ExperimentConfig defaults(Experiment e);

    void validate() const;

    // Everything that influences stored numbers: experiment, training
    // schedule and the full specification of every condition. Seeds are not
    // included; each run is keyed by its own seed.
    nlohmann::json to_json() const;
    std::string hash() const;
};

std::vector<Condition> conditions(const ExperimentConfig& config);

// Default output root: $ROUTE_LAB_OUT if set, else "results".
std::filesystem::path default_out_dir();

} // namespace routelab::harness
