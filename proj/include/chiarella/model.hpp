#pragma once

#include <complex>
#include <optional>
#include <utility>

#include <Eigen/Dense>

#include "chiarella/params.hpp"

namespace chiarella {

/// Demand rate of fundamentalists at mispricing delta = v - p.
double fundamentalist_demand(double delta, const ChiarellaParams& params);

/// Demand rate of trend followers at trend signal m; bounded by |beta|.
double trend_demand(double m, const ChiarellaParams& params);

/// Jacobian of the deterministic (delta, m) system at the fixed point (0, 0).
/// Requires the linear model with kappa > 0.
Eigen::Matrix2d jacobian_at_origin(const ChiarellaParams& params);

enum class Regime { StableSpiral, LimitCycle };

std::string to_string(Regime regime);

struct RegimeClassification {
    Regime regime;
    double trace;  // tr(J*) = -kappa + alpha*(beta*gamma - 1)
    double det;    // det(J*) = alpha*kappa
    std::optional<double> hopf_alpha;  // kappa/(beta*gamma - 1), present iff beta*gamma > 1
};

/// Classifies the deterministic linear system. Rejects kappa3 != 0 and kappa <= 0.
RegimeClassification classify_regime(const ChiarellaParams& params);

/// Closed-form eigenvalue pair of the Jacobian at the origin (linear model, kappa > 0).
std::pair<std::complex<double>, std::complex<double>>
hopf_eigenvalues(const ChiarellaParams& params);

struct NullclinePoint {
    double delta_nullcline;  // (beta/kappa) * tanh(gamma m)
    double m_nullcline;      // (beta/kappa) * tanh(gamma m) - m/kappa
};

/// Both nullclines of the (delta, m) phase plane evaluated at trend signal m.
NullclinePoint nullclines(const ChiarellaParams& params, double m);

/// Velocity field of the deterministic (delta, m) system.
struct PhaseVelocity {
    double ddelta;
    double dm;
};
PhaseVelocity phase_velocity(const ChiarellaParams& params, double delta, double m);

}  // namespace chiarella
