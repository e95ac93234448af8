#include "routelab/autodiff/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace routelab::ad {

std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view bytes)
{
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

Rng::Rng(std::uint64_t seed) : engine_(seed) { }

Rng Rng::stream(std::uint64_t seed, std::uint64_t stream_id)
{
    return Rng(splitmix64(splitmix64(seed) ^ stream_id));
}

Rng Rng::stream(std::uint64_t seed, std::string_view stream_name)
{
    return stream(seed, fnv1a64(stream_name));
}

double Rng::uniform()
{
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::size_t Rng::uniform_index(std::size_t n)
{
    if (n == 0) throw std::invalid_argument("Rng::uniform_index: n must be positive");
    const auto i = static_cast<std::size_t>(uniform() * static_cast<double>(n));
    return i < n ? i : n - 1;
}

double Rng::normal()
{
    if (has_cached_) {
        has_cached_ = false;
        return cached_normal_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    cached_normal_ = r * std::sin(theta);
    has_cached_ = true;
    return r * std::cos(theta);
}

std::size_t Rng::categorical(std::span<const double> probs)
{
    if (probs.empty()) throw std::invalid_argument("Rng::categorical: empty distribution");
    double total = 0.0;
    for (double p : probs) {
        if (!(p >= 0.0)) throw std::invalid_argument("Rng::categorical: negative probability");
        total += p;
    }
    const double u = uniform() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (u < acc) return i;
    }
    return probs.size() - 1;
}

} // namespace routelab::ad
