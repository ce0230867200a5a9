#pragma once

#include <cstdint>
#include <optional>

#include "chiarella/drift.hpp"
#include "chiarella/params.hpp"
#include "chiarella/trajectory.hpp"

namespace chiarella {

/// Classical 4th-order one-step integration of the noiseless continuous system
/// under drift g(t) from `drift`. Throws std::runtime_error on non-finite state.
Trajectory integrate_deterministic(const ChiarellaParams& params, const SystemState& init,
                                   double dt, double horizon, const DriftModel& drift);

/// Euler-Maruyama integration of the stochastic system. The trend signal is
/// updated with the same-step price increment, net of drift. Two independent
/// noise streams (tags "N" and "V") derive from one seed.
Trajectory simulate_sde(const ChiarellaParams& params, const SystemState& init, double dt,
                        double horizon, std::uint64_t seed, const DriftModel& drift);

/// Exact iteration of the de-drifted monthly system: the trend signal at t+1
/// uses the return ending at t. Default init is p0 = v0 = 0, m0 = 0.
Trajectory simulate_discrete(const ChiarellaParams& params, int horizon_months,
                             std::uint64_t seed, const SystemState& init = SystemState{});

struct CycleMetrics {
    double amplitude;  // half peak-to-peak of mispricing after the transient
    double period;     // mean spacing of upward zero crossings, in months
};

/// Quantifies periodic behaviour of a deterministic trajectory. Returns
/// nullopt when the post-transient amplitude is below 1e-6 or no full cycle
/// can be observed. Throws when the trajectory is shorter than the transient.
std::optional<CycleMetrics> limit_cycle_metrics(const Trajectory& traj, double transient_fraction);

}  // namespace chiarella
