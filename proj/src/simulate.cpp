#include "chiarella/simulate.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "chiarella/model.hpp"
#include "chiarella/rng.hpp"

namespace chiarella {

namespace {

struct Derivatives {
    double dp, dv, dm;
};

Derivatives vector_field(const ChiarellaParams& params, double p, double v, double m, double g) {
    const double dp = fundamentalist_demand(v - p, params) + trend_demand(m, params) + g;
    const double dv = g;
    const double dm = -params.alpha * m + params.alpha * (dp - g);
    return {dp, dv, dm};
}

[[noreturn]] void fail_nonfinite(const char* where, double t, double p, double v, double m) {
    throw std::runtime_error(std::string(where) + ": non-finite state at t=" + std::to_string(t) +
                             " (p=" + std::to_string(p) + ", v=" + std::to_string(v) +
                             ", m=" + std::to_string(m) + ")");
}

std::size_t step_count(double dt, double horizon, const char* where) {
    if (!(dt > 0.0)) throw std::invalid_argument(std::string(where) + ": dt must be > 0");
    if (!(horizon > 0.0)) throw std::invalid_argument(std::string(where) + ": horizon must be > 0");
    return static_cast<std::size_t>(std::llround(horizon / dt));
}

}  // namespace

Trajectory integrate_deterministic(const ChiarellaParams& params, const SystemState& init,
                                   double dt, double horizon, const DriftModel& drift) {
    params.validate();
    const std::size_t n = step_count(dt, horizon, "integrate_deterministic");

    Trajectory traj;
    traj.params = params;
    traj.dt = dt;
    traj.times.reserve(n + 1);
    traj.p.reserve(n + 1);
    traj.v.reserve(n + 1);
    traj.m.reserve(n + 1);

    double p = init.p, v = init.v, m = init.m;
    double t = init.t;
    traj.times.push_back(t);
    traj.p.push_back(p);
    traj.v.push_back(v);
    traj.m.push_back(m);

    for (std::size_t i = 0; i < n; ++i) {
        const auto k1 = vector_field(params, p, v, m, drift.slope(t));
        const double gh = drift.slope(t + 0.5 * dt);
        const auto k2 = vector_field(params, p + 0.5 * dt * k1.dp, v + 0.5 * dt * k1.dv,
                                     m + 0.5 * dt * k1.dm, gh);
        const auto k3 = vector_field(params, p + 0.5 * dt * k2.dp, v + 0.5 * dt * k2.dv,
                                     m + 0.5 * dt * k2.dm, gh);
        const double g1 = drift.slope(t + dt);
        const auto k4 = vector_field(params, p + dt * k3.dp, v + dt * k3.dv, m + dt * k3.dm, g1);

        p += dt / 6.0 * (k1.dp + 2.0 * k2.dp + 2.0 * k3.dp + k4.dp);
        v += dt / 6.0 * (k1.dv + 2.0 * k2.dv + 2.0 * k3.dv + k4.dv);
        m += dt / 6.0 * (k1.dm + 2.0 * k2.dm + 2.0 * k3.dm + k4.dm);
        t = init.t + static_cast<double>(i + 1) * dt;

        if (!std::isfinite(p) || !std::isfinite(v) || !std::isfinite(m))
            fail_nonfinite("integrate_deterministic", t, p, v, m);

        traj.times.push_back(t);
        traj.p.push_back(p);
        traj.v.push_back(v);
        traj.m.push_back(m);
    }
    return traj;
}

Trajectory simulate_sde(const ChiarellaParams& params, const SystemState& init, double dt,
                        double horizon, std::uint64_t seed, const DriftModel& drift) {
    params.validate();
    const std::size_t n = step_count(dt, horizon, "simulate_sde");
    const double sqrt_dt = std::sqrt(dt);

    GaussianStream noise_n(seed, "N");
    GaussianStream noise_v(seed, "V");

    Trajectory traj;
    traj.params = params;
    traj.dt = dt;
    traj.seed = seed;
    traj.times.reserve(n + 1);
    traj.p.reserve(n + 1);
    traj.v.reserve(n + 1);
    traj.m.reserve(n + 1);

    double p = init.p, v = init.v, m = init.m;
    double t = init.t;
    traj.times.push_back(t);
    traj.p.push_back(p);
    traj.v.push_back(v);
    traj.m.push_back(m);

    for (std::size_t i = 0; i < n; ++i) {
        const double g_dt = drift.slope(t) * dt;
        const double dp = fundamentalist_demand(v - p, params) * dt + trend_demand(m, params) * dt +
                          g_dt + params.sigma_n * sqrt_dt * noise_n.next();
        const double dv = g_dt + params.sigma_v * sqrt_dt * noise_v.next();
        const double dm = -params.alpha * m * dt + params.alpha * (dp - g_dt);

        p += dp;
        v += dv;
        m += dm;
        t = init.t + static_cast<double>(i + 1) * dt;

        if (!std::isfinite(p) || !std::isfinite(v) || !std::isfinite(m))
            fail_nonfinite("simulate_sde", t, p, v, m);

        traj.times.push_back(t);
        traj.p.push_back(p);
        traj.v.push_back(v);
        traj.m.push_back(m);
    }
    return traj;
}

Trajectory simulate_discrete(const ChiarellaParams& params, int horizon_months,
                             std::uint64_t seed, const SystemState& init) {
    params.validate();
    if (horizon_months < 2)
        throw std::invalid_argument("simulate_discrete: horizon must be >= 2 months");

    GaussianStream noise_n(seed, "N");
    GaussianStream noise_v(seed, "V");

    const std::size_t n = static_cast<std::size_t>(horizon_months);
    Trajectory traj;
    traj.params = params;
    traj.dt = 1.0;
    traj.seed = seed;
    traj.times.resize(n + 1);
    traj.p.resize(n + 1);
    traj.v.resize(n + 1);
    traj.m.resize(n + 1);

    double p = init.p, v = init.v, m = init.m;
    double p_prev = init.p;  // first return is zero by convention
    traj.times[0] = 0.0;
    traj.p[0] = p;
    traj.v[0] = v;
    traj.m[0] = m;

    for (std::size_t t = 0; t < n; ++t) {
        const double p_next = p + fundamentalist_demand(v - p, params) + trend_demand(m, params) +
                              params.sigma_n * noise_n.next();
        const double v_next = v + params.sigma_v * noise_v.next();
        const double m_next = (1.0 - params.alpha) * m + params.alpha * (p - p_prev);

        p_prev = p;
        p = p_next;
        v = v_next;
        m = m_next;

        if (!std::isfinite(p) || !std::isfinite(v) || !std::isfinite(m))
            fail_nonfinite("simulate_discrete", static_cast<double>(t + 1), p, v, m);

        traj.times[t + 1] = static_cast<double>(t + 1);
        traj.p[t + 1] = p;
        traj.v[t + 1] = v;
        traj.m[t + 1] = m;
    }
    return traj;
}

std::optional<CycleMetrics> limit_cycle_metrics(const Trajectory& traj, double transient_fraction) {
    if (!(transient_fraction >= 0.0 && transient_fraction < 1.0))
        throw std::invalid_argument("limit_cycle_metrics: transient_fraction must lie in [0, 1)");
    const std::size_t n = traj.size();
    const std::size_t start = static_cast<std::size_t>(transient_fraction * static_cast<double>(n));
    if (n < 3 || start >= n - 2)
        throw std::invalid_argument("limit_cycle_metrics: trajectory shorter than transient");

    double lo = traj.delta(start), hi = lo;
    for (std::size_t i = start; i < n; ++i) {
        const double d = traj.delta(i);
        lo = std::min(lo, d);
        hi = std::max(hi, d);
    }
    const double amplitude = 0.5 * (hi - lo);
    if (amplitude < 1e-6) return std::nullopt;

    // Period from mean spacing of upward zero crossings, with linear
    // interpolation between samples.
    std::vector<double> crossings;
    for (std::size_t i = start + 1; i < n; ++i) {
        const double d0 = traj.delta(i - 1);
        const double d1 = traj.delta(i);
        if (d0 < 0.0 && d1 >= 0.0) {
            const double frac = d0 / (d0 - d1);
            crossings.push_back(traj.times[i - 1] + frac * (traj.times[i] - traj.times[i - 1]));
        }
    }
    if (crossings.size() < 2) return std::nullopt;
    const double period =
        (crossings.back() - crossings.front()) / static_cast<double>(crossings.size() - 1);
    return CycleMetrics{amplitude, period};
}

}  // namespace chiarella
