#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "chiarella/filter.hpp"
#include "chiarella/params.hpp"
#include "chiarella/series.hpp"

namespace chiarella {

/// Square root of the Jensen-Shannon divergence (base-2 logarithm, so the
/// range is [0, 1]) between histograms over the shared support, with
/// floor(sqrt(shorter length)) bins. Fully disjoint supports give exactly 1.
double js_distance(std::span<const double> a, std::span<const double> b);

struct SimProtocol {
    double horizon = 1e5;  // months
    double dt = 0.01;
    std::uint64_t seed = 7;
    double burn_in = 0.1;  // fraction of the path dropped before statistics
};

/// Mispricing sample from a seeded stochastic run under the protocol,
/// optionally subsampled to at most max_points (factor recorded by callers).
std::vector<double> simulated_mispricing(const ChiarellaParams& theta, const SimProtocol& proto,
                                         std::size_t max_points = 0);

struct VarianceMatchResult {
    ChiarellaParams theta;
    bool reached = false;
    double achieved_mean = 0.0;
    double achieved_var = 0.0;
    double loglik_norm_before = 0.0;
    double loglik_norm_after = 0.0;
    std::vector<std::string> notes;
};

/// Shifts theta along the numerical gradient of the simulated mispricing
/// variance (in log-parameter space, fixed seed) until the simulated variance
/// matches target_var within 1%, aborting when the per-step log-likelihood
/// on the observed series drops more than 5%. The mean is matched by moving
/// v0 so the re-inferred empirical mispricing aligns with the simulation.
VarianceMatchResult variance_match(const ChiarellaParams& theta, ModelKind model,
                                   std::span<const double> dedrifted_obs, double target_mean,
                                   double target_var, const SimProtocol& proto);

struct SloppinessReport {
    Eigen::MatrixXd hessian;        // log-parameter coordinates, Gauss-Newton
    Eigen::VectorXd eigenvalues;    // descending, normalised by the largest
    double lambda_max = 0.0;        // largest raw eigenvalue
    Eigen::MatrixXd eigenvectors;   // unit-norm columns matching eigenvalues
    std::vector<std::string> param_names;
    double decades_spanned = 0.0;
    std::vector<std::string> notes;
};

/// Fisher-information surrogate: sensitivities of the simulated mispricing
/// path (same seed for every run) to +-delta_rel log-parameter perturbations,
/// assembled as H = (2/T) S^T S after a burn-in discard.
SloppinessReport sloppiness_hessian(const ChiarellaParams& theta, ModelKind model,
                                    double delta_rel, std::uint64_t seed, int horizon_months,
                                    double burn_in_fraction = 0.1);

/// Entrywise mean of same-shape Hessians, then a fresh eigendecomposition.
SloppinessReport average_class_hessian(const std::vector<SloppinessReport>& reports);

struct BacktestResult {
    std::vector<int> months;  // month of each PnL entry
    std::vector<double> pnl_trend, pnl_value;
    double sr_trend = 0.0, sr_value = 0.0;
    int first_month = 0, last_month = 0;
};

/// Model-implied trend and value signals on real (re-drifted, un-logged)
/// prices. The trend signal is normalised by its own lagged EWMA standard
/// deviation (decay 1/7) and clipped at +-1; value signals are not
/// normalised. The first 12 months are excluded for EWMA warm-up. The value
/// signal uses the filtered (never smoothed) latent value.
BacktestResult backtest_signals(const ChiarellaParams& theta, const CleanSeries& series,
                                const FilterResult& filt);

/// PnL_t = signal_{t-1} * (P_t - P_{t-1}) / sd_{t-1}, sd an EWMA standard
/// deviation of price changes with the given decay; entries start after
/// `warmup` months. Shared by both model signals and test fixtures.
std::vector<double> pnl_from_signal(std::span<const double> signal,
                                    std::span<const double> prices, double decay,
                                    std::size_t warmup);

}  // namespace chiarella
