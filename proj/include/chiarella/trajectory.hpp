#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "chiarella/params.hpp"

namespace chiarella {

/// Time-indexed (p, v, m) path from simulation. Immutable after construction.
struct Trajectory {
    std::vector<double> times;
    std::vector<double> p;
    std::vector<double> v;
    std::vector<double> m;
    ChiarellaParams params;
    std::optional<std::uint64_t> seed;
    double dt = 0.0;

    std::size_t size() const { return times.size(); }
    double delta(std::size_t i) const { return p[i] - v[i]; }
    std::vector<double> mispricing() const;

    /// Columns: t, p, v, m, delta.
    void write_csv(std::ostream& os) const;
    void write_csv(const std::string& path) const;
};

}  // namespace chiarella
