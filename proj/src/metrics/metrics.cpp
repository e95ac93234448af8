#include "routelab/metrics/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace routelab::metrics {

std::size_t argmax(std::span<const double> row)
{
    if (row.empty()) throw std::invalid_argument("argmax: empty row");
    std::size_t best = 0;
    for (std::size_t i = 1; i < row.size(); ++i) {
        if (row[i] > row[best]) best = i;
    }
    return best;
}

double acc_at(std::size_t step, const Tensor& gates, std::span<const int> labels, std::size_t batch)
{
    const std::size_t N = gates.cols();
    if (batch == 0 || (step + 1) * batch > gates.rows() || labels.size() != gates.rows()) {
        throw std::invalid_argument("acc_at: step " + std::to_string(step) + " outside gate trace " +
                                    ad::shape_str(gates.shape()));
    }
    std::size_t hits = 0;
    for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t r = step * batch + b;
        if (labels[r] < 0) {
            throw std::invalid_argument("acc_at: no routing label at step " + std::to_string(step));
        }
        hits += argmax(gates.data().subspan(r * N, N)) == static_cast<std::size_t>(labels[r]);
    }
    return static_cast<double>(hits) / static_cast<double>(batch);
}

double accuracy(const Tensor& gates, std::span<const int> labels)
{
    const std::size_t N = gates.cols();
    if (labels.size() != gates.rows()) throw std::invalid_argument("accuracy: label count mismatch");
    std::size_t hits = 0, n = 0;
    for (std::size_t r = 0; r < labels.size(); ++r) {
        if (labels[r] < 0) continue;
        ++n;
        hits += argmax(gates.data().subspan(r * N, N)) == static_cast<std::size_t>(labels[r]);
    }
    if (n == 0) throw std::invalid_argument("accuracy: no labelled entries");
    return static_cast<double>(hits) / static_cast<double>(n);
}

std::vector<double> cross_entropy_rows(const Tensor& logits, std::span<const int> targets)
{
    const std::size_t R = logits.rows(), V = logits.cols();
    if (targets.size() != R) throw std::invalid_argument("cross_entropy_rows: target count mismatch");
    std::vector<double> out(R);
    for (std::size_t r = 0; r < R; ++r) {
        const double* z = logits.data().data() + r * V;
        if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= V) {
            throw std::out_of_range("cross_entropy_rows: target " + std::to_string(targets[r]));
        }
        const double m = *std::max_element(z, z + V);
        double s = 0.0;
        for (std::size_t c = 0; c < V; ++c) s += std::exp(z[c] - m);
        out[r] = m + std::log(s) - z[targets[r]];
    }
    return out;
}

double bpc(const Tensor& logits, std::span<const int> targets, std::span<const bool> select)
{
    if (!select.empty() && select.size() != logits.rows()) {
        throw std::invalid_argument("bpc: selection mask size mismatch");
    }
    for (double z : logits.data()) {
        if (!std::isfinite(z)) throw std::invalid_argument("bpc: non-finite logits");
    }
    const std::vector<double> ce = cross_entropy_rows(logits, targets);
    double total = 0.0;
    std::size_t n = 0;
    for (std::size_t r = 0; r < ce.size(); ++r) {
        if (!select.empty() && !select[r]) continue;
        total += ce[r];
        ++n;
    }
    if (n == 0) throw std::invalid_argument("bpc: empty selection");
    return total / static_cast<double>(n) / std::numbers::ln2;
}

double simulate_topk_coverage(const Tensor& gates, std::span<const int> labels, int k, ad::Rng& rng,
                              int draws_per_row)
{
    if (k < 1) throw std::invalid_argument("simulate_topk_coverage: k must be >= 1");
    const std::size_t N = gates.cols();
    std::size_t hits = 0, n = 0;
    for (std::size_t r = 0; r < gates.rows(); ++r) {
        if (labels[r] < 0) continue;
        const auto row = gates.data().subspan(r * N, N);
        for (int d = 0; d < draws_per_row; ++d) {
            bool found = false;
            for (int j = 0; j < k && !found; ++j) found = rng.categorical(row) == static_cast<std::size_t>(labels[r]);
            hits += found;
            ++n;
        }
    }
    if (n == 0) throw std::invalid_argument("simulate_topk_coverage: no labelled rows");
    return static_cast<double>(hits) / static_cast<double>(n);
}

Aggregate aggregate(std::span<const double> values)
{
    if (values.empty()) throw std::invalid_argument("aggregate: no values");
    Aggregate a;
    a.n = values.size();
    for (double v : values) a.mean += v;
    a.mean /= static_cast<double>(a.n);
    if (a.n == 1) {
        a.std = std::numeric_limits<double>::quiet_NaN();
        return a;
    }
    double ss = 0.0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    a.std = std::sqrt(ss / static_cast<double>(a.n - 1));
    return a;
}

SeedValues paired_deltas(const SeedValues& condition, const SeedValues& baseline)
{
    if (condition.size() != baseline.size() ||
        !std::equal(condition.begin(), condition.end(), baseline.begin(),
                    [](const auto& x, const auto& y) { return x.first == y.first; })) {
        throw std::invalid_argument("paired_deltas: seed sets differ between condition and baseline");
    }
    SeedValues out;
    for (const auto& [seed, v] : condition) out[seed] = v - baseline.at(seed);
    return out;
}

SeedValues interaction(const SeedValues& both, const SeedValues& a, const SeedValues& b,
                       const SeedValues& base)
{
    const SeedValues d_both = paired_deltas(both, base);
    const SeedValues d_a = paired_deltas(a, base);
    const SeedValues d_b = paired_deltas(b, base);
    SeedValues out;
    for (const auto& [seed, v] : d_both) out[seed] = v - d_a.at(seed) - d_b.at(seed);
    return out;
}

std::vector<double> values_of(const SeedValues& v)
{
    std::vector<double> out;
    out.reserve(v.size());
    for (const auto& kv : v) out.push_back(kv.second);
    return out;
}

std::span<const std::size_t> default_pi_grid()
{
    static constexpr std::array<std::size_t, 6> grid = {490, 500, 510, 520, 550, 600};
    return grid;
}

PiTimeline pi_timeline(const std::vector<std::vector<double>>& trace, std::span<const std::size_t> grid)
{
    PiTimeline out;
    auto above = [&](std::size_t s) {
        if (trace[s].size() < 3) throw std::invalid_argument("pi_timeline: need at least 3 experts");
        return trace[s][0] > trace[s][2];
    };
    for (std::size_t s : grid) {
        if (s >= trace.size()) {
            throw std::invalid_argument("pi_timeline: step " + std::to_string(s) + " beyond trace of " +
                                        std::to_string(trace.size()) + " steps");
        }
        out.rows.push_back(PiRow{s, trace[s], above(s)});
    }
    bool seen_above = false;
    for (std::size_t s = 0; s < trace.size(); ++s) {
        const bool a = above(s);
        if (a) {
            seen_above = true;
        } else if (seen_above) {
            out.crossover = s;
            break;
        }
    }
    return out;
}

double RunResult::at(const std::string& metric) const
{
    const auto it = metrics.find(metric);
    if (it == metrics.end()) {
        throw std::out_of_range("run " + condition + " seed " + std::to_string(seed) +
                                " has no metric '" + metric + "'");
    }
    return it->second;
}

} // namespace routelab::metrics
