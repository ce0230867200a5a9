#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace chiarella {

/// Deterministic stream of standard normal variates. Streams created from the
/// same seed but different tags are independent, so disabling one noise source
/// does not shift the draws of another.
class GaussianStream {
public:
    GaussianStream(std::uint64_t seed, std::string_view tag);

    double next();

private:
    std::mt19937_64 engine_;
    bool has_cached_ = false;
    double cached_ = 0.0;
};

/// 64-bit FNV-1a, used for stream tags and content hashing of output trees.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

}  // namespace chiarella
