#include "chiarella/filter.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "chiarella/model.hpp"
#include "chiarella/series.hpp"

namespace chiarella {

namespace {

constexpr double kVarFloor = 1e-14;  // predictive-variance floor before log densities

double log_normal_density(double x, double mean, double var) {
    const double v = std::max(var, kVarFloor);
    const double d = x - mean;
    return -0.5 * (std::log(2.0 * std::numbers::pi * v) + d * d / v);
}

struct ObsModel {
    std::vector<double> y;    // p[t+1] - p[t] - beta tanh(gamma m[t])
    std::vector<double> p;    // p[t], the anchor of the demand argument
};

ObsModel build_obs(const StateSpaceSpec& spec) {
    const auto& obs = spec.observations;
    const auto& params = spec.params;
    const auto m = trend_signal_from_prices(obs, params.alpha);
    ObsModel out;
    out.y.resize(obs.size() - 1);
    out.p.resize(obs.size() - 1);
    for (std::size_t t = 0; t + 1 < obs.size(); ++t) {
        out.y[t] = obs[t + 1] - obs[t] - trend_demand(m[t], params);
        out.p[t] = obs[t];
    }
    return out;
}

void pad_outputs(const StateSpaceSpec& spec, FilterResult& res) {
    const std::size_t n = spec.observations.size();
    const double q = spec.params.sigma_v * spec.params.sigma_v;
    res.v_filt = res.chain_filt_mean;
    res.var_filt = res.chain_filt_var;
    res.v_filt.push_back(res.chain_filt_mean.back());
    res.var_filt.push_back(res.chain_filt_var.back() + q);
    res.loglik_per_step = res.loglik / static_cast<double>(n - 1);
}

void pad_smoothed(FilterResult& res) {
    res.v_smooth = res.chain_smooth_mean;
    res.var_smooth = res.chain_smooth_var;
    // The trailing prediction carries no observation; smoothing leaves it as is.
    res.v_smooth.push_back(res.v_filt.back());
    res.var_smooth.push_back(res.var_filt.back());
    res.smoothed = true;
}

// Backward fixed-interval pass. The transition is the identity random walk in
// both models, so the smoother gain is C_t = P_t / (P_t + Q) for each.
void rts_backward(const StateSpaceSpec& spec, FilterResult& res) {
    const std::size_t m = res.chain_filt_mean.size();
    const double q = spec.params.sigma_v * spec.params.sigma_v;
    res.chain_smooth_mean.assign(m, 0.0);
    res.chain_smooth_var.assign(m, 0.0);
    res.chain_lag_cov.assign(m > 0 ? m - 1 : 0, 0.0);

    res.chain_smooth_mean[m - 1] = res.chain_filt_mean[m - 1];
    res.chain_smooth_var[m - 1] = res.chain_filt_var[m - 1];
    for (std::size_t t = m - 1; t-- > 0;) {
        const double pred_var = res.chain_filt_var[t] + q;
        const double gain = res.chain_filt_var[t] / pred_var;
        res.chain_smooth_mean[t] =
            res.chain_filt_mean[t] + gain * (res.chain_smooth_mean[t + 1] - res.chain_filt_mean[t]);
        res.chain_smooth_var[t] =
            res.chain_filt_var[t] + gain * gain * (res.chain_smooth_var[t + 1] - pred_var);
        res.chain_lag_cov[t] = gain * res.chain_smooth_var[t + 1];
    }
}

}  // namespace

std::vector<double> trend_signal_from_prices(std::span<const double> prices, double alpha) {
    if (!(alpha > 0.0 && alpha <= 1.0))
        throw std::invalid_argument("trend_signal_from_prices: alpha must lie in (0, 1]");
    std::vector<double> m(prices.size(), 0.0);
    for (std::size_t t = 2; t < prices.size(); ++t)
        m[t] = (1.0 - alpha) * m[t - 1] + alpha * (prices[t - 1] - prices[t - 2]);
    return m;
}

StateSpaceSpec StateSpaceSpec::from_params(const ChiarellaParams& params,
                                           std::vector<double> observations) {
    StateSpaceSpec spec;
    spec.params = params;
    spec.observations = std::move(observations);
    spec.init_mean = params.v0;
    spec.init_var = std::max(25.0 * params.sigma_v * params.sigma_v, 1e-10);
    return spec;
}

void StateSpaceSpec::validate() const {
    // The filter tolerates any finite kappa sign (the EM iterate may cross
    // zero), so this does not impose the phase-analysis kappa constraint.
    if (!(params.alpha > 0.0 && params.alpha <= 1.0))
        throw std::invalid_argument("StateSpaceSpec: alpha must lie in (0, 1]");
    if (!(params.gamma > 0.0)) throw std::invalid_argument("StateSpaceSpec: gamma must be > 0");
    if (!(params.kappa3 >= 0.0)) throw std::invalid_argument("StateSpaceSpec: kappa3 must be >= 0");
    if (!(params.sigma_v >= 0.0)) throw std::invalid_argument("StateSpaceSpec: sigma_v must be >= 0");
    if (!std::isfinite(params.kappa) || !std::isfinite(params.beta))
        throw std::invalid_argument("StateSpaceSpec: non-finite demand parameters");
    if (!(params.sigma_n > 0.0))
        throw std::invalid_argument("StateSpaceSpec: sigma_n must be > 0 for a proper likelihood");
    if (observations.size() < 2)
        throw std::invalid_argument("StateSpaceSpec: need at least 2 observations");
    for (double p : observations)
        if (!std::isfinite(p)) throw std::invalid_argument("StateSpaceSpec: non-finite observation");
    if (!(init_var > 0.0)) throw std::invalid_argument("StateSpaceSpec: init_var must be > 0");
    if (!std::isfinite(init_mean))
        throw std::invalid_argument("StateSpaceSpec: non-finite init_mean");
}

FilterResult kalman_filter(const StateSpaceSpec& spec) {
    spec.validate();
    if (spec.params.kappa3 != 0.0)
        throw std::invalid_argument("kalman_filter: requires the linear model (use ukf_filter)");

    const auto obs = build_obs(spec);
    const auto m = obs.y.size();
    const double kappa = spec.params.kappa;
    const double r = spec.params.sigma_n * spec.params.sigma_n;
    const double q = spec.params.sigma_v * spec.params.sigma_v;

    FilterResult res;
    res.chain_filt_mean.resize(m);
    res.chain_filt_var.resize(m);
    res.chain_pred_var.resize(m);

    double mean = spec.init_mean;
    double var = spec.init_var;
    for (std::size_t t = 0; t < m; ++t) {
        res.chain_pred_var[t] = var;
        const double yhat = kappa * (mean - obs.p[t]);
        const double s = kappa * kappa * var + r;
        res.loglik += log_normal_density(obs.y[t], yhat, s);
        const double gain = var * kappa / s;
        mean += gain * (obs.y[t] - yhat);
        var *= (1.0 - gain * kappa);
        var = std::max(var, 0.0);
        res.chain_filt_mean[t] = mean;
        res.chain_filt_var[t] = var;
        var += q;  // predict to the next step
    }
    pad_outputs(spec, res);
    return res;
}

FilterResult kalman_smooth(const StateSpaceSpec& spec, FilterResult filtered) {
    if (filtered.chain_filt_mean.empty())
        throw std::invalid_argument("kalman_smooth: run kalman_filter first");
    rts_backward(spec, filtered);
    pad_smoothed(filtered);
    return filtered;
}

FilterResult ukf_filter(const StateSpaceSpec& spec) {
    spec.validate();

    const auto obs = build_obs(spec);
    const auto m = obs.y.size();
    const auto& params = spec.params;
    const double r = params.sigma_n * params.sigma_n;
    const double q = params.sigma_v * params.sigma_v;

    // Three sigma points for the scalar state, spread sqrt(3) so the Gaussian
    // second and fourth moments are matched exactly.
    constexpr double w0 = 2.0 / 3.0;
    constexpr double w1 = 1.0 / 6.0;
    const double spread = std::sqrt(3.0);

    FilterResult res;
    res.chain_filt_mean.resize(m);
    res.chain_filt_var.resize(m);
    res.chain_pred_var.resize(m);

    double mean = spec.init_mean;
    double var = spec.init_var;
    for (std::size_t t = 0; t < m; ++t) {
        res.chain_pred_var[t] = var;
        const double sd = std::sqrt(std::max(var, 0.0));
        const double chi0 = mean;
        const double chi1 = mean + spread * sd;
        const double chi2 = mean - spread * sd;
        const double h0 = fundamentalist_demand(chi0 - obs.p[t], params);
        const double h1 = fundamentalist_demand(chi1 - obs.p[t], params);
        const double h2 = fundamentalist_demand(chi2 - obs.p[t], params);

        const double yhat = w0 * h0 + w1 * h1 + w1 * h2;
        double pyy = w0 * (h0 - yhat) * (h0 - yhat) + w1 * (h1 - yhat) * (h1 - yhat) +
                     w1 * (h2 - yhat) * (h2 - yhat) + r;
        const double pxy = w0 * (chi0 - mean) * (h0 - yhat) + w1 * (chi1 - mean) * (h1 - yhat) +
                           w1 * (chi2 - mean) * (h2 - yhat);

        res.loglik += log_normal_density(obs.y[t], yhat, pyy);
        const double gain = pxy / pyy;
        mean += gain * (obs.y[t] - yhat);
        var -= gain * pxy;
        if (var < 0.0 && var > -1e-12 * std::max(res.chain_pred_var[t], 1.0)) var = 0.0;
        if (!(var >= 0.0))
            throw std::runtime_error("ukf_filter: covariance lost positivity at step " +
                                     std::to_string(t));
        res.chain_filt_mean[t] = mean;
        res.chain_filt_var[t] = var;
        var += q;
    }
    pad_outputs(spec, res);
    return res;
}

FilterResult ukf_smooth(const StateSpaceSpec& spec, FilterResult filtered) {
    if (filtered.chain_filt_mean.empty())
        throw std::invalid_argument("ukf_smooth: run ukf_filter first");
    rts_backward(spec, filtered);
    pad_smoothed(filtered);
    return filtered;
}

FilterResult run_filter(const StateSpaceSpec& spec) {
    return spec.params.kappa3 == 0.0 ? kalman_filter(spec) : ukf_filter(spec);
}

FilterResult run_filter_smoother(const StateSpaceSpec& spec) {
    if (spec.params.kappa3 == 0.0) return kalman_smooth(spec, kalman_filter(spec));
    return ukf_smooth(spec, ukf_filter(spec));
}

void FilterResult::write_csv(const std::string& path, std::span<const int> months) const {
    if (months.size() != v_filt.size())
        throw std::invalid_argument("FilterResult::write_csv: month count mismatch");
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os << "date,v_filt,sd_filt,v_smooth,sd_smooth\n";
    char buf[160];
    for (std::size_t i = 0; i < v_filt.size(); ++i) {
        const double sd_f = std::sqrt(std::max(var_filt[i], 0.0));
        const double vs = smoothed ? v_smooth[i] : v_filt[i];
        const double sd_s = smoothed ? std::sqrt(std::max(var_smooth[i], 0.0)) : sd_f;
        std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%.17g,%.17g\n",
                      month_to_iso(months[i]).c_str(), v_filt[i], sd_f, vs, sd_s);
        os << buf;
    }
}

}  // namespace chiarella
