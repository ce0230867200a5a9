#include "chiarella/model.hpp"

#include <cmath>
#include <stdexcept>

namespace chiarella {

namespace {

void require_linear_positive_kappa(const ChiarellaParams& params, const char* op) {
    params.validate();
    if (params.kappa3 != 0.0)
        throw std::invalid_argument(std::string(op) + ": requires the linear model (kappa3 = 0)");
    if (params.kappa <= 0.0)
        throw std::invalid_argument(std::string(op) + ": requires kappa > 0");
}

}  // namespace

std::string to_string(Regime regime) {
    return regime == Regime::StableSpiral ? "StableSpiral" : "LimitCycle";
}

double fundamentalist_demand(double delta, const ChiarellaParams& params) {
    return params.kappa * delta + params.kappa3 * delta * delta * delta;
}

double trend_demand(double m, const ChiarellaParams& params) {
    return params.beta * std::tanh(params.gamma * m);
}

Eigen::Matrix2d jacobian_at_origin(const ChiarellaParams& params) {
    require_linear_positive_kappa(params, "jacobian_at_origin");
    const double bg = params.beta * params.gamma;
    Eigen::Matrix2d j;
    j << -params.kappa, bg,
         -params.alpha * params.kappa, params.alpha * (bg - 1.0);
    return j;
}

RegimeClassification classify_regime(const ChiarellaParams& params) {
    require_linear_positive_kappa(params, "classify_regime");
    const double bg = params.beta * params.gamma;
    RegimeClassification out;
    out.trace = -params.kappa + params.alpha * (bg - 1.0);
    out.det = params.alpha * params.kappa;
    out.regime = out.trace < 0.0 ? Regime::StableSpiral : Regime::LimitCycle;
    if (bg > 1.0) out.hopf_alpha = params.kappa / (bg - 1.0);
    return out;
}

std::pair<std::complex<double>, std::complex<double>>
hopf_eigenvalues(const ChiarellaParams& params) {
    require_linear_positive_kappa(params, "hopf_eigenvalues");
    const double tr = params.alpha * params.beta * params.gamma - params.alpha - params.kappa;
    const std::complex<double> disc(tr * tr - 4.0 * params.alpha * params.kappa, 0.0);
    const std::complex<double> root = std::sqrt(disc);
    return {0.5 * (tr + root), 0.5 * (tr - root)};
}

NullclinePoint nullclines(const ChiarellaParams& params, double m) {
    params.validate();
    if (params.kappa <= 0.0)
        throw std::invalid_argument("nullclines: requires kappa > 0");
    const double th = (params.beta / params.kappa) * std::tanh(params.gamma * m);
    return {th, th - m / params.kappa};
}

PhaseVelocity phase_velocity(const ChiarellaParams& params, double delta, double m) {
    // delta = p - v, so fundamentalist demand enters with argument v - p = -delta.
    const double ddelta = fundamentalist_demand(-delta, params) + trend_demand(m, params);
    const double dm = -params.alpha * m + params.alpha * ddelta;
    return {ddelta, dm};
}

}  // namespace chiarella
