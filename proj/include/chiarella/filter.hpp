#pragma once

#include <span>
#include <string>
#include <vector>

#include "chiarella/params.hpp"

namespace chiarella {

/// Trend signal recursion on an observed de-drifted log-price series:
/// m[0] = 0 and m[t] = (1-alpha) m[t-1] + alpha (p[t-1] - p[t-2]) for t >= 2,
/// the first return being unavailable.
std::vector<double> trend_signal_from_prices(std::span<const double> prices, double alpha);

/// Scalar-state model for latent-value inference: hidden v follows a random
/// walk with variance sigma_v^2; the observed de-drifted return responds via
/// the fundamentalist demand plus the (exogenous, price-determined) trend term.
struct StateSpaceSpec {
    ChiarellaParams params;             // alpha, gamma fixed inside
    std::vector<double> observations;   // de-drifted log-price series, length >= 2
    double init_mean = 0.0;             // prior mean of v_0
    double init_var = 0.0;              // prior variance of v_0, > 0

    /// init_mean = v0, init_var = (5 sigma_v)^2, floored at 1e-10 so the
    /// prior stays proper when sigma_v = 0.
    static StateSpaceSpec from_params(const ChiarellaParams& params,
                                      std::vector<double> observations);

    void validate() const;
    std::size_t n_obs() const { return observations.empty() ? 0 : observations.size() - 1; }
};

struct FilterResult {
    // Aligned with the observed series (length N). The final entry is the
    // one-step prediction: no observation constrains the last value.
    std::vector<double> v_filt, var_filt;
    std::vector<double> v_smooth, var_smooth;
    double loglik = 0.0;           // total predictive log-likelihood
    double loglik_per_step = 0.0;  // loglik / (N - 1)

    // Chain-level quantities over the N-1 latent states carrying an
    // observation; consumed by the EM machinery.
    std::vector<double> chain_filt_mean, chain_filt_var;
    std::vector<double> chain_pred_var;
    std::vector<double> chain_smooth_mean, chain_smooth_var;
    std::vector<double> chain_lag_cov;  // Cov(v_t, v_{t+1} | all data)

    bool smoothed = false;

    /// Columns: date, v_filt, sd_filt, v_smooth, sd_smooth.
    void write_csv(const std::string& path, std::span<const int> months) const;
};

/// Exact Kalman recursion for the linear model (kappa3 = 0).
FilterResult kalman_filter(const StateSpaceSpec& spec);
/// Fixed-interval backward pass; fills the smoothed members.
FilterResult kalman_smooth(const StateSpaceSpec& spec, FilterResult filtered);

/// Unscented recursion handling the cubic observation map. At kappa3 = 0 it
/// coincides with kalman_filter up to roundoff.
FilterResult ukf_filter(const StateSpaceSpec& spec);
FilterResult ukf_smooth(const StateSpaceSpec& spec, FilterResult filtered);

/// Dispatch on params.kappa3 and run filter + smoother.
FilterResult run_filter_smoother(const StateSpaceSpec& spec);
/// Filter only (no backward pass).
FilterResult run_filter(const StateSpaceSpec& spec);

}  // namespace chiarella
