#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace routelab::ad {

// Deterministic generator. Engine: std::mt19937_64 (fully specified by the
// C++ standard). Uniform doubles use the top 53 bits of each draw; Gaussians
// use the Box-Muller transform, returning the cached second value on every
// other call. See docs/rng.md for the exact algorithm and stream derivation.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    // Independent sub-stream keyed by (seed, stream id).
    static Rng stream(std::uint64_t seed, std::uint64_t stream_id);
    static Rng stream(std::uint64_t seed, std::string_view stream_name);

    std::uint64_t next_u64() { return engine_(); }
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    std::size_t uniform_index(std::size_t n);
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }
    std::size_t categorical(std::span<const double> probs);

private:
    std::mt19937_64 engine_;
    double cached_normal_ = 0.0;
    bool has_cached_ = false;
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view bytes);

} // namespace routelab::ad
