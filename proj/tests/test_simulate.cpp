#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "chiarella/model.hpp"
#include "chiarella/rng.hpp"
#include "chiarella/simulate.hpp"
#include "chiarella/trend.hpp"

using namespace chiarella;

namespace {

ChiarellaParams figure_spiral() {
    ChiarellaParams p;
    p.kappa = 0.01;
    p.alpha = 1.0 / 7.0;
    p.beta = 0.5;
    p.gamma = 2.0;
    return p;
}

ChiarellaParams figure_cycle() {
    ChiarellaParams p;
    p.kappa = 0.05;
    p.alpha = 1.0 / 7.0;
    p.beta = 0.65;
    p.gamma = 10.0;
    return p;
}

}  // namespace

TEST_CASE("deterministic run stays at the fixed point") {
    ChiarellaParams p = figure_spiral();
    const DriftModel drift = DriftModel::constant_slope(0.003, -1.0, 600.0);
    const SystemState init{5.0, 5.0, 0.0, 0.0};  // delta = 0, m = 0
    const Trajectory traj = integrate_deterministic(p, init, 0.05, 500.0, drift);
    for (std::size_t i = 0; i < traj.size(); ++i) CHECK(std::abs(traj.delta(i)) < 1e-10);
}

TEST_CASE("spiral parameters decay to the fixed point") {
    ChiarellaParams p = figure_spiral();
    const DriftModel drift = DriftModel::constant_slope(0.001, -1.0, 7100.0);
    const SystemState init{26.0, 20.0, 1.0, 0.0};
    const Trajectory traj = integrate_deterministic(p, init, 0.01, 3000.0, drift);
    CHECK(std::abs(traj.delta(traj.size() - 1)) < 1e-3);
    // The residual ring-down drops below the cycle-amplitude cutoff once the
    // transient window is long enough.
    const Trajectory longer = integrate_deterministic(p, init, 0.05, 7000.0, drift);
    CHECK_FALSE(limit_cycle_metrics(longer, 0.5).has_value());
}

TEST_CASE("limit-cycle parameters settle into a periodic orbit") {
    ChiarellaParams p = figure_cycle();
    const DriftModel drift = DriftModel::zero(-1.0, 4100.0);
    const SystemState init{16.0, 12.0, 0.1, 0.0};
    const Trajectory traj = integrate_deterministic(p, init, 0.02, 4000.0, drift);
    const auto metrics = limit_cycle_metrics(traj, 0.5);
    REQUIRE(metrics.has_value());
    CHECK(metrics->amplitude > 0.05);  // peak-to-peak > 0.1
    CHECK(metrics->period > 0.0);
}

TEST_CASE("RK4 endpoint converges at order >= 3.5") {
    ChiarellaParams p = figure_spiral();
    const DriftModel drift = DriftModel::zero(-1.0, 250.0);
    const SystemState init{26.0, 20.0, 1.0, 0.0};
    auto endpoint = [&](double dt) {
        const Trajectory t = integrate_deterministic(p, init, dt, 200.0, drift);
        return Eigen::Vector3d(t.p.back(), t.v.back(), t.m.back());
    };
    const auto e1 = endpoint(0.4);
    const auto e2 = endpoint(0.2);
    const auto e3 = endpoint(0.1);
    const double d12 = (e1 - e2).norm();
    const double d23 = (e2 - e3).norm();
    const double order = std::log2(d12 / d23);
    CHECK(order >= 3.5);
}

TEST_CASE("noiseless SDE run equals an explicit Euler iteration bitwise") {
    ChiarellaParams p = figure_cycle();
    p.sigma_n = 0.0;
    p.sigma_v = 0.0;
    const double dt = 0.05;
    const DriftModel drift = DriftModel::constant_slope(0.002, -1.0, 120.0);
    const SystemState init{16.0, 12.0, 0.1, 0.0};
    const Trajectory traj = simulate_sde(p, init, dt, 100.0, 42, drift);

    // Reference Euler chain replicating the update expression order.
    const double sqrt_dt = std::sqrt(dt);
    GaussianStream noise_n(42, "N");
    GaussianStream noise_v(42, "V");
    double pp = init.p, vv = init.v, mm = init.m;
    CHECK(traj.p[0] == pp);
    for (std::size_t i = 1; i < traj.size(); ++i) {
        const double t = static_cast<double>(i - 1) * dt;
        const double g_dt = drift.slope(t) * dt;
        const double dp = fundamentalist_demand(vv - pp, p) * dt + trend_demand(mm, p) * dt +
                          g_dt + p.sigma_n * sqrt_dt * noise_n.next();
        const double dv = g_dt + p.sigma_v * sqrt_dt * noise_v.next();
        const double dm = -p.alpha * mm * dt + p.alpha * (dp - g_dt);
        pp += dp;
        vv += dv;
        mm += dm;
        CHECK(traj.p[i] == pp);
        CHECK(traj.v[i] == vv);
        CHECK(traj.m[i] == mm);
    }
}

TEST_CASE("same seed reproduces the trajectory exactly") {
    ChiarellaParams p = figure_cycle();
    p.sigma_n = 0.3;
    p.sigma_v = 0.1;
    const DriftModel drift = DriftModel::zero(-1.0, 60.0);
    const Trajectory a = simulate_sde(p, SystemState{}, 0.01, 50.0, 2024, drift);
    const Trajectory b = simulate_sde(p, SystemState{}, 0.01, 50.0, 2024, drift);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a.p[i] == b.p[i]);
        CHECK(a.v[i] == b.v[i]);
        CHECK(a.m[i] == b.m[i]);
    }
    const Trajectory c = simulate_sde(p, SystemState{}, 0.01, 50.0, 2025, drift);
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i) differs = differs || a.p[i] != c.p[i];
    CHECK(differs);
}

TEST_CASE("turning value noise off does not shift the price noise stream") {
    ChiarellaParams p = figure_spiral();
    p.sigma_n = 0.2;
    p.sigma_v = 0.15;
    const DriftModel drift = DriftModel::zero(-1.0, 30.0);
    const Trajectory both = simulate_sde(p, SystemState{}, 0.1, 20.0, 5, drift);
    ChiarellaParams p2 = p;
    p2.sigma_v = 0.0;
    const Trajectory only_n = simulate_sde(p2, SystemState{}, 0.1, 20.0, 5, drift);
    // With sigma_v = 0 the value path is flat but the price shocks coincide:
    // delta(p) differences come only from the value feedback through kappa.
    // The first step has identical price increments by construction.
    CHECK(both.p[1] == only_n.p[1]);
}

TEST_CASE("paired-run noise monotonicity of the mispricing variance") {
    // Stable regime: mispricing dispersion grows with the price-noise level.
    ChiarellaParams stable = figure_spiral();
    stable.sigma_v = 0.05;
    const DriftModel drift = DriftModel::zero(-1.0, 10100.0);
    for (std::uint64_t seed : {77ULL, 78ULL, 79ULL}) {
        ChiarellaParams loud = stable;
        loud.sigma_n = 0.6;
        ChiarellaParams quiet = stable;
        quiet.sigma_n = 0.1;
        const Trajectory a = simulate_sde(loud, SystemState{}, 0.01, 10000.0, seed, drift);
        const Trajectory b = simulate_sde(quiet, SystemState{}, 0.01, 10000.0, seed, drift);
        CHECK(population_variance(a.mispricing()) > population_variance(b.mispricing()));
    }

    // Deep relaxation-cycle regime (the noisy limit-cycle figure parameters):
    // paired runs show the opposite, consistent direction, because the noise
    // knocks the path off the extreme slow branches of the cycle.
    ChiarellaParams cycle;
    cycle.kappa = 0.01;
    cycle.alpha = 1.0 / 7.0;
    cycle.beta = 0.35;
    cycle.gamma = 10.0;
    cycle.sigma_v = 0.2;
    for (std::uint64_t seed : {77ULL, 78ULL, 79ULL}) {
        ChiarellaParams loud = cycle;
        loud.sigma_n = 0.6;
        ChiarellaParams quiet = cycle;
        quiet.sigma_n = 0.1;
        const Trajectory a = simulate_sde(loud, SystemState{}, 0.01, 10000.0, seed, drift);
        const Trajectory b = simulate_sde(quiet, SystemState{}, 0.01, 10000.0, seed, drift);
        CHECK(population_variance(a.mispricing()) < population_variance(b.mispricing()));
    }
}

TEST_CASE("drift equivariance: (delta, m) paths ignore the drift") {
    ChiarellaParams p = figure_cycle();
    p.sigma_n = 0.3;
    p.sigma_v = 0.1;
    const double dt = 0.01, horizon = 1000.0;
    // A genuinely curved integrated drift.
    const DriftModel curved =
        DriftModel::fit(std::vector<double>{0.0, 250.0, 500.0, 750.0, 1000.0},
                        std::vector<double>{0.0, 0.8, 1.1, 2.4, 3.0}, 3);
    const DriftModel none = DriftModel::zero(-1.0, horizon + 1.0);
    const Trajectory with = simulate_sde(p, SystemState{}, dt, horizon, 31, curved);
    const Trajectory without = simulate_sde(p, SystemState{}, dt, horizon, 31, none);
    double max_dev = 0.0;
    for (std::size_t i = 0; i < with.size(); ++i) {
        max_dev = std::max(max_dev, std::abs(with.delta(i) - without.delta(i)));
        max_dev = std::max(max_dev, std::abs(with.m[i] - without.m[i]));
    }
    CHECK(max_dev < 5.0 * dt);
}

TEST_CASE("discrete simulation at equilibrium stays put") {
    ChiarellaParams p = figure_spiral();
    p.sigma_n = 0.0;
    p.sigma_v = 0.0;
    const SystemState init{1.3, 1.3, 0.0, 0.0};
    const Trajectory traj = simulate_discrete(p, 50, 9, init);
    for (std::size_t i = 0; i < traj.size(); ++i) {
        CHECK(traj.p[i] == doctest::Approx(1.3));
        CHECK(traj.v[i] == doctest::Approx(1.3));
    }
}

TEST_CASE("kappa = 1, beta = 0 discrete model gives white-noise mispricing") {
    ChiarellaParams p;
    p.kappa = 1.0;
    p.alpha = 0.2;
    p.beta = 0.0;
    p.gamma = 1.0;
    p.sigma_n = 0.05;
    p.sigma_v = 0.0;
    const int n = 100000;
    const Trajectory traj = simulate_discrete(p, n, 123);
    // p_{t+1} = v_t + eta, v constant => delta_{t+1} = eta_{t+1}.
    std::vector<double> delta = traj.mispricing();
    delta.erase(delta.begin());
    const double var = population_variance(delta);
    const double expect = p.sigma_n * p.sigma_n;
    const double se = expect * std::sqrt(2.0 / static_cast<double>(n));
    CHECK(std::abs(var - expect) < 3.0 * se);
}

TEST_CASE("discrete mispricing dispersion matches a long-run reference") {
    ChiarellaParams us;
    us.kappa = 0.027;
    us.beta = 0.076;
    us.gamma = 4.168;
    us.alpha = 0.2;
    us.sigma_n = 0.043;
    us.sigma_v = 0.011;
    const Trajectory long_run = simulate_discrete(us, 1000000, 555);
    const auto ref = long_run.mispricing();
    const double ref_sd = std::sqrt(population_variance(
        std::span<const double>(ref).subspan(ref.size() / 10)));
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
        const Trajectory traj = simulate_discrete(us, 2000, seed);
        const double sd = std::sqrt(population_variance(traj.mispricing()));
        CHECK(sd > 0.5 * ref_sd);
        CHECK(sd < 2.0 * ref_sd);
    }
}

TEST_CASE("euler-maruyama stationary covariance matches the Lyapunov solution") {
    // With beta = 0 the (delta, m) system is a linear bivariate OU process:
    // d(delta) = -kappa delta dt + sigma_n dW_N - sigma_v dW_V
    // d(m)     = -alpha m dt + alpha (-kappa delta dt + sigma_n dW_N)
    ChiarellaParams p;
    p.kappa = 0.15;
    p.alpha = 0.25;
    p.beta = 0.0;
    p.gamma = 1.0;
    p.sigma_n = 0.2;
    p.sigma_v = 0.08;

    Eigen::Matrix2d a;
    a << -p.kappa, 0.0, -p.alpha * p.kappa, -p.alpha;
    Eigen::Matrix2d b;
    b << p.sigma_n, -p.sigma_v, p.alpha * p.sigma_n, 0.0;
    const Eigen::Matrix2d q = b * b.transpose();
    // Solve A X + X A^T + Q = 0 via the vectorised 4x4 linear system.
    Eigen::Matrix4d big = Eigen::Matrix4d::Zero();
    const Eigen::Matrix2d eye = Eigen::Matrix2d::Identity();
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            for (int k = 0; k < 2; ++k)
                for (int l = 0; l < 2; ++l)
                    big(2 * i + j, 2 * k + l) = a(i, k) * eye(j, l) + eye(i, k) * a(j, l);
    Eigen::Vector4d rhs(-q(0, 0), -q(0, 1), -q(1, 0), -q(1, 1));
    const Eigen::Vector4d x = big.fullPivLu().solve(rhs);
    const double var_delta_exact = x(0);

    const DriftModel drift = DriftModel::zero(-1.0, 200100.0);
    const Trajectory traj = simulate_sde(p, SystemState{}, 0.01, 200000.0, 2718, drift);
    const auto delta = traj.mispricing();
    const auto tail = std::span<const double>(delta).subspan(delta.size() / 10);
    const double var_mc = population_variance(tail);

    // Effective sample count ~ T / (2/kappa); allow 4 relative sigmas.
    const double n_eff = 200000.0 / (2.0 / p.kappa);
    const double rel_tol = 4.0 * std::sqrt(2.0 / n_eff);
    CHECK(std::abs(var_mc / var_delta_exact - 1.0) < rel_tol);
}

TEST_CASE("limit_cycle_metrics on a pure sine") {
    Trajectory traj;
    traj.dt = 1.0;
    for (int t = 0; t < 2000; ++t) {
        traj.times.push_back(t);
        traj.p.push_back(std::sin(2.0 * std::numbers::pi * t / 50.0));
        traj.v.push_back(0.0);
        traj.m.push_back(0.0);
    }
    const auto metrics = limit_cycle_metrics(traj, 0.1);
    REQUIRE(metrics.has_value());
    CHECK(std::abs(metrics->period - 50.0) <= 1.0);
    CHECK(metrics->amplitude == doctest::Approx(1.0).epsilon(0.01));

    CHECK_THROWS_AS(limit_cycle_metrics(traj, 0.9999), std::invalid_argument);
}

TEST_CASE("non-finite states abort with a diagnostic") {
    ChiarellaParams p;
    p.kappa = 0.0;
    p.kappa3 = 5.0;  // explosive cubic feedback without mean reversion works fine,
    p.beta = 0.0;
    p.gamma = 1.0;
    p.alpha = 1.0;
    // but a hugely mispriced start with a big dt overflows quickly.
    const SystemState init{1e6, 0.0, 0.0, 0.0};
    const DriftModel drift = DriftModel::zero(-1.0, 200.0);
    CHECK_THROWS_AS(integrate_deterministic(p, init, 1.0, 100.0, drift), std::runtime_error);
}
