#pragma once

#include <map>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace chiarella {

/// EWMA trend signal over a return sequence: m[0] = 0 and
/// m[t] = (1-alpha) m[t-1] + alpha r[t-1], so m[t] knows returns up to t-1.
std::vector<double> ewma_trend(std::span<const double> returns, double alpha);

/// Mean over population standard deviation; throws on zero variance.
double sharpe_ratio(std::span<const double> excess_returns);

/// Grid {1/2, 1/3, ..., 1/24}.
std::vector<double> default_alpha_grid();

struct AlphaSelection {
    double alpha = 0.0;
    std::map<double, double> sharpe_curve;  // decay -> pooled Sharpe ratio
};

/// Sharpe-maximising EWMA decay for a sign(m) position, pooled over all
/// de-drifted log-price series (iteration order does not matter; the pooled
/// sample is concatenated in the given order but the SR is scan-invariant).
/// Ties resolve to the smaller decay.
AlphaSelection estimate_alpha(const std::vector<std::vector<double>>& dedrifted_series,
                              std::span<const double> grid);

struct TanhFit {
    double a = 0.0;
    double b = 0.0;
    double gamma_tilde = 0.0;
    double c = 0.0;
    Eigen::Matrix4d covariance = Eigen::Matrix4d::Zero();  // order (a, b, gamma_tilde, c)
    double rss = 0.0;
    std::size_t n = 0;

    double eval(double x) const;
    double gamma_tilde_err() const;
};

/// Multi-start Levenberg-Marquardt fit of h(x) = a + b tanh(gt x + c) to
/// normalised (trend, forward return) pairs. Throws when no start converges.
TanhFit fit_tanh(std::span<const double> trend_norm, std::span<const double> fwd_returns_norm);

/// Rolling average of y over `window` consecutive points ordered by x, the
/// diagnostic curve plotted next to the tanh fit.
std::vector<std::pair<double, double>> rolling_mean_curve(std::span<const double> x,
                                                          std::span<const double> y,
                                                          std::size_t window = 1000);

/// Per-asset trend parameters: shared decay and class-level tanh fit plus the
/// slope rescaled by this asset's trend-signal variance.
struct TrendFit {
    double alpha = 0.0;
    std::map<double, double> sharpe_curve;
    double a = 0.0, b = 0.0, c = 0.0;
    double gamma_tilde = 0.0;
    double gamma = 0.0;   // gamma_tilde / sqrt(var_m)
    double var_m = 0.0;   // Var of the asset's trend signal in natural units
    double gamma_err = 0.0;
};

TrendFit make_trend_fit(const AlphaSelection& sel, const TanhFit& fit, double var_m);

double population_variance(std::span<const double> xs);
std::vector<double> diff(std::span<const double> xs);  // xs[i+1] - xs[i]

}  // namespace chiarella
