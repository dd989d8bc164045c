#include "cfan/util.hpp"

#include <algorithm>
#include <cstring>

namespace cfan {

namespace {

double pairwise_sum_range(const double* values, std::size_t count) {
    // Below this size a straight loop is both fast and accurate enough.
    constexpr std::size_t kBlock = 32;
    if (count <= kBlock) {
        double acc = 0.0;
        for (std::size_t i = 0; i < count; ++i) acc += values[i];
        return acc;
    }
    const std::size_t half = count / 2;
    return pairwise_sum_range(values, half) + pairwise_sum_range(values + half, count - half);
}

}  // namespace

double pairwise_sum(std::span<const double> values) {
    return pairwise_sum_range(values.data(), values.size());
}

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    std::uint64_t hash = seed;
    for (std::size_t i = 0; i < size; ++i) {
        hash ^= bytes[i];
        hash *= 0x100000001b3ull;
    }
    return hash;
}

std::uint64_t fnv1a(std::string_view text, std::uint64_t seed) {
    return fnv1a(text.data(), text.size(), seed);
}

double Rng::normal() {
    if (has_cached_normal_) {
        has_cached_normal_ = false;
        return cached_normal_;
    }
    // Box-Muller; u1 is kept away from 0 so the log stays finite.
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * 3.14159265358979323846 * u2;
    cached_normal_ = radius * std::sin(angle);
    has_cached_normal_ = true;
    return radius * std::cos(angle);
}

std::uint64_t Rng::below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t draw = next_u64();
    while (draw >= limit) draw = next_u64();
    return draw % n;
}

void Rng::shuffle(std::vector<std::size_t>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(below(i));
        std::swap(items[i - 1], items[j]);
    }
}

}  // namespace cfan
