#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "routelab/harness/config.hpp"
#include "routelab/metrics/metrics.hpp"

namespace routelab::harness {

struct StoreError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// One row of metrics.csv.
struct MetricRow {
    std::string experiment;
    std::string condition;
    std::uint64_t seed = 0;
    std::string config_hash;
    std::string metric;
    double value = 0.0;

    bool operator==(const MetricRow&) const = default;
};

std::string emit_metrics_csv(const std::vector<MetricRow>& rows);
// Throws std::invalid_argument on a malformed header or row.
std::vector<MetricRow> parse_metrics_csv(const std::string& text);

struct RunRecord {
    std::string condition;
    std::uint64_t seed = 0;
    std::string config_hash;
    std::map<std::string, double> metrics;
    double wallclock_s = 0.0;
};

// Results of one experiment under <root>/<experiment>/:
//   manifest.json           configs by hash + one record per (condition, seed)
//   metrics.csv             long-format metrics, regenerated on every commit
//   curves/<cond>__seed<k>.csv
// Every file is written to a temporary and renamed into place. A failed write
// leaves a PARTIAL marker that the next successful commit removes.
class ResultStore {
public:
    ResultStore(std::filesystem::path root, Experiment experiment);

    const std::filesystem::path& dir() const { return dir_; }
    Experiment experiment() const { return experiment_; }

    bool contains(const std::string& condition, std::uint64_t seed, const std::string& hash) const;
    // Adds or replaces the (condition, seed) record.
    void commit(const ExperimentConfig& config, const metrics::RunResult& result);

    const std::vector<RunRecord>& runs() const { return runs_; }
    const std::string& latest_hash() const { return latest_hash_; }
    const nlohmann::json& configs() const { return configs_; }

    std::filesystem::path metrics_path() const { return dir_ / "metrics.csv"; }
    std::filesystem::path curve_path(const std::string& condition, std::uint64_t seed) const;

    void mark_partial(const std::string& reason) const;
    bool partial() const;

private:
    void load();
    void write_manifest() const;
    void write_metrics() const;

    std::filesystem::path dir_;
    Experiment experiment_;
    std::vector<RunRecord> runs_;
    nlohmann::json configs_ = nlohmann::json::object();
    std::string latest_hash_;
};

// Writes `text` to `path` via a temporary and rename; throws StoreError.
void write_atomic(const std::filesystem::path& path, const std::string& text);
std::string read_file(const std::filesystem::path& path);

// File-name-safe form of a condition name ("A/last_token" -> "A-last_token").
std::string file_stem(const std::string& condition);

std::string format_double(double v);  // %.17g

} // namespace routelab::harness
