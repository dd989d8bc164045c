#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace cfan {

/// Pairwise (cascade) summation. Deterministic for a fixed element order and
/// markedly more accurate than a running sum on long inputs.
double pairwise_sum(std::span<const double> values);

/// FNV-1a over raw bytes; used for topology checksums and config hashes.
std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed = 0xcbf29ce484222325ull);
std::uint64_t fnv1a(std::string_view text, std::uint64_t seed = 0xcbf29ce484222325ull);

/// Deterministic random generator. The engine is std::mt19937_64 (fully
/// specified by the standard); uniform and normal draws are hand-rolled so
/// the stream never depends on <random> distribution internals.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    void reseed(std::uint64_t seed) {
        engine_.seed(seed);
        has_cached_normal_ = false;
    }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (second draw cached).
    double normal();

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Uniform integer in [0, n), n > 0; rejection-sampled, unbiased.
    std::uint64_t below(std::uint64_t n);

    /// Fisher-Yates shuffle.
    void shuffle(std::vector<std::size_t>& items);

private:
    std::mt19937_64 engine_;
    double cached_normal_ = 0.0;
    bool has_cached_normal_ = false;
};

}  // namespace cfan
