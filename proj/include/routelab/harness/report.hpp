#pragma once

#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "routelab/harness/store.hpp"
#include "routelab/metrics/metrics.hpp"

namespace routelab::harness {

// Raised when a report or check needs runs the store does not have.
struct MissingRuns : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Per-seed metric values of one experiment, read back from metrics.csv and
// restricted to the latest config hash. Every condition of that config must
// be present for every seed seen.
class ResultTable {
public:
    static ResultTable load(const ResultStore& store);
    static ResultTable from_rows(const std::vector<MetricRow>& rows, const std::string& hash,
                                 const std::vector<std::string>& conditions);

    bool has(const std::string& condition, const std::string& metric) const;
    // Throws MissingRuns when absent.
    const metrics::SeedValues& values(const std::string& condition, const std::string& metric) const;
    metrics::Aggregate aggregate(const std::string& condition, const std::string& metric) const;

    const std::vector<std::string>& conditions() const { return conditions_; }
    const std::set<std::uint64_t>& seeds() const { return seeds_; }
    const std::string& hash() const { return hash_; }

private:
    std::string hash_;
    std::vector<std::string> conditions_;
    std::set<std::uint64_t> seeds_;
    std::map<std::pair<std::string, std::string>, metrics::SeedValues> data_;
};

// "0.748 ± 0.002"; the std slot reads "n/a" for a single seed. `sign` forces
// a leading + on non-negative means.
std::string format_cell(const metrics::Aggregate& a, int digits, bool sign = false);

struct Report {
    std::string text;  // rendered table(s) plus derived summary lines
    std::string csv;   // table,row,column,n,mean,std
};

Report build_report(const ResultStore& store);
Report build_report(Experiment experiment, const ResultTable& table);

} // namespace routelab::harness
