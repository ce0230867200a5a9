#include "chiarella/rng.hpp"

#include <cmath>
#include <numbers>

namespace chiarella {

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis) {
    std::uint64_t h = basis;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

GaussianStream::GaussianStream(std::uint64_t seed, std::string_view tag) {
    const std::uint64_t tagged = fnv1a64(tag) ^ seed;
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(tagged), static_cast<std::uint32_t>(tagged >> 32)};
    engine_.seed(seq);
}

double GaussianStream::next() {
    // Box-Muller, pinned here so draws do not depend on library internals.
    if (has_cached_) {
        has_cached_ = false;
        return cached_;
    }
    const double inv = 1.0 / (static_cast<double>(engine_.max()) + 1.0);
    double u1 = (static_cast<double>(engine_()) + 1.0) * inv;  // in (0, 1]
    double u2 = static_cast<double>(engine_()) * inv;          // in [0, 1)
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
}

}  // namespace chiarella
