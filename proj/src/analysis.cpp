#include "chiarella/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "chiarella/model.hpp"
#include "chiarella/simulate.hpp"
#include "chiarella/trend.hpp"

namespace chiarella {

double js_distance(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw std::invalid_argument("js_distance: empty sample");

    const auto [amn, amx] = std::minmax_element(a.begin(), a.end());
    const auto [bmn, bmx] = std::minmax_element(b.begin(), b.end());
    const double lo = std::min(*amn, *bmn);
    const double hi = std::max(*amx, *bmx);

    const std::size_t shorter = std::min(a.size(), b.size());
    const int bins = std::max(1, static_cast<int>(std::floor(std::sqrt(
                                      static_cast<double>(shorter)))));
    if (!(hi > lo)) return 0.0;  // all mass in one bin for both samples

    const double width = (hi - lo) / static_cast<double>(bins);
    auto histogram = [&](std::span<const double> xs) {
        std::vector<double> h(bins, 0.0);
        for (double x : xs) {
            int i = static_cast<int>((x - lo) / width);
            i = std::clamp(i, 0, bins - 1);
            h[i] += 1.0;
        }
        for (double& v : h) v /= static_cast<double>(xs.size());
        return h;
    };
    const auto p = histogram(a);
    const auto q = histogram(b);

    bool overlap = false;
    for (int i = 0; i < bins; ++i)
        if (p[i] > 0.0 && q[i] > 0.0) overlap = true;
    if (!overlap) return 1.0;  // disjoint supports: the divergence is exactly one bit

    double jsd = 0.0;
    for (int i = 0; i < bins; ++i) {
        const double m = 0.5 * (p[i] + q[i]);
        if (p[i] > 0.0) jsd += 0.5 * p[i] * std::log2(p[i] / m);
        if (q[i] > 0.0) jsd += 0.5 * q[i] * std::log2(q[i] / m);
    }
    jsd = std::clamp(jsd, 0.0, 1.0);
    return std::sqrt(jsd);
}

std::vector<double> simulated_mispricing(const ChiarellaParams& theta, const SimProtocol& proto,
                                         std::size_t max_points) {
    const DriftModel no_drift = DriftModel::zero(-1.0, proto.horizon + 1.0);
    const Trajectory traj =
        simulate_sde(theta, SystemState{}, proto.dt, proto.horizon, proto.seed, no_drift);
    const std::size_t n = traj.size();
    const auto start = static_cast<std::size_t>(proto.burn_in * static_cast<double>(n));

    std::vector<double> delta;
    const std::size_t kept = n - start;
    const std::size_t stride =
        (max_points > 0 && kept > max_points) ? (kept + max_points - 1) / max_points : 1;
    delta.reserve(kept / stride + 1);
    for (std::size_t i = start; i < n; i += stride) delta.push_back(traj.delta(i));
    return delta;
}

namespace {

struct SampleStats {
    double mean, var;
};

SampleStats stats_of(std::span<const double> xs) {
    const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size());
    return {mean, var};
}

double loglik_norm_of(const ChiarellaParams& theta, std::span<const double> obs) {
    StateSpaceSpec spec = StateSpaceSpec::from_params(theta, {obs.begin(), obs.end()});
    return run_filter(spec).loglik_per_step;
}

std::vector<double*> free_sim_params(ChiarellaParams& p, ModelKind model) {
    std::vector<double*> out{&p.kappa, &p.beta, &p.gamma, &p.sigma_n, &p.sigma_v};
    if (model == ModelKind::Cubic) out.insert(out.begin() + 1, &p.kappa3);
    return out;
}

}  // namespace

VarianceMatchResult variance_match(const ChiarellaParams& theta, ModelKind model,
                                   std::span<const double> dedrifted_obs, double target_mean,
                                   double target_var, const SimProtocol& proto) {
    if (!(target_var > 0.0)) throw std::invalid_argument("variance_match: target_var must be > 0");

    VarianceMatchResult res;
    res.theta = theta;
    res.loglik_norm_before = loglik_norm_of(theta, dedrifted_obs);
    const double budget = 0.05 * std::abs(res.loglik_norm_before);

    auto sim_stats = [&](const ChiarellaParams& p) {
        return stats_of(simulated_mispricing(p, proto));
    };

    SampleStats cur = sim_stats(theta);
    const double rel_tol = 0.01;

    if (std::abs(cur.var / target_var - 1.0) > rel_tol) {
        // Direction of the variance gradient in log-parameter space.
        ChiarellaParams work = theta;
        const auto slots = free_sim_params(work, model);
        std::vector<double> grad(slots.size(), 0.0);
        const double fd = 0.1;
        for (std::size_t i = 0; i < slots.size(); ++i) {
            const double base = *slots[i];
            if (base == 0.0) continue;  // log-perturbation undefined, leave out
            *slots[i] = base * std::exp(fd);
            const double up = sim_stats(work).var;
            *slots[i] = base * std::exp(-fd);
            const double dn = sim_stats(work).var;
            *slots[i] = base;
            grad[i] = (up - dn) / (2.0 * fd);
        }
        double norm = 0.0;
        for (double g : grad) norm += g * g;
        norm = std::sqrt(norm);
        if (norm == 0.0) {
            res.notes.push_back("zero_variance_gradient");
        } else {
            const double sign = target_var > cur.var ? 1.0 : -1.0;
            auto theta_at = [&](double s) {
                ChiarellaParams p = theta;
                const auto base = free_sim_params(p, model);
                for (std::size_t i = 0; i < base.size(); ++i)
                    *base[i] *= std::exp(sign * s * grad[i] / norm);
                return p;
            };

            // Expand until the target is bracketed, then bisect on the step.
            double s_hi = 0.05, s_lo = 0.0;
            SampleStats hi_stats = cur;
            bool bracketed = false;
            for (int i = 0; i < 12; ++i) {
                hi_stats = sim_stats(theta_at(s_hi));
                if ((hi_stats.var - target_var) * sign >= 0.0) {
                    bracketed = true;
                    break;
                }
                s_lo = s_hi;
                s_hi *= 2.0;
            }
            double s_star = s_hi;
            if (!bracketed) {
                res.notes.push_back("target_variance_unreachable");
            } else {
                for (int i = 0; i < 40; ++i) {
                    const double mid = 0.5 * (s_lo + s_hi);
                    const SampleStats mid_stats = sim_stats(theta_at(mid));
                    if (std::abs(mid_stats.var / target_var - 1.0) <= rel_tol) {
                        s_star = mid;
                        break;
                    }
                    if ((mid_stats.var - target_var) * sign >= 0.0)
                        s_hi = mid;
                    else
                        s_lo = mid;
                    s_star = 0.5 * (s_lo + s_hi);
                }
            }

            // Respect the likelihood budget: walk the step back if needed.
            ChiarellaParams cand = theta_at(s_star);
            double ll = loglik_norm_of(cand, dedrifted_obs);
            int backoff = 0;
            while (res.loglik_norm_before - ll > budget && backoff < 20) {
                s_star *= 0.5;
                cand = theta_at(s_star);
                ll = loglik_norm_of(cand, dedrifted_obs);
                ++backoff;
            }
            if (backoff > 0) res.notes.push_back("loglik_budget_hit");
            res.theta = cand;
            cur = sim_stats(cand);
        }
    }

    // Mean matching: shifting v0 translates the inferred value path, moving
    // the empirical mispricing mean onto the simulated one.
    res.theta.v0 += target_mean - cur.mean;

    res.achieved_mean = cur.mean;
    res.achieved_var = cur.var;
    res.loglik_norm_after = loglik_norm_of(res.theta, dedrifted_obs);
    res.reached = std::abs(cur.var / target_var - 1.0) <= rel_tol;
    if (!res.reached && res.notes.empty()) res.notes.push_back("variance_not_matched");
    return res;
}

SloppinessReport sloppiness_hessian(const ChiarellaParams& theta, ModelKind model,
                                    double delta_rel, std::uint64_t seed, int horizon_months,
                                    double burn_in_fraction) {
    if (!(delta_rel > 0.0)) throw std::invalid_argument("sloppiness_hessian: delta_rel must be > 0");
    if (horizon_months < 100)
        throw std::invalid_argument("sloppiness_hessian: horizon too short");

    ChiarellaParams base = theta;
    std::vector<std::string> names{"kappa", "beta", "gamma", "alpha", "sigma_n", "sigma_v"};
    std::vector<double*> slots{&base.kappa, &base.beta,    &base.gamma,
                               &base.alpha, &base.sigma_n, &base.sigma_v};
    if (model == ModelKind::Cubic) {
        names.push_back("kappa3");
        slots.push_back(&base.kappa3);
    }

    SloppinessReport rep;
    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (*slots[i] == 0.0) {
            rep.notes.push_back("excluded_zero_parameter:" + names[i]);
            continue;
        }
        active.push_back(i);
    }
    for (std::size_t i : active) rep.param_names.push_back(names[i]);

    // Sub-month integration keeps strongly cubic parameter sets stable (the
    // exact monthly map overshoots when |f(delta)| approaches delta per
    // step); observations are the month-end mispricings.
    constexpr double kDt = 0.05;
    const auto stride = static_cast<std::size_t>(std::llround(1.0 / kDt));
    const DriftModel no_drift = DriftModel::zero(-1.0, static_cast<double>(horizon_months) + 1.0);
    auto mispricing_run = [&](const ChiarellaParams& p) {
        const Trajectory traj = simulate_sde(p, SystemState{}, kDt,
                                             static_cast<double>(horizon_months), seed, no_drift);
        std::vector<double> monthly;
        monthly.reserve(static_cast<std::size_t>(horizon_months) + 1);
        for (std::size_t i = 0; i < traj.size(); i += stride) monthly.push_back(traj.delta(i));
        return monthly;
    };

    const std::vector<double> ref = mispricing_run(theta);
    const auto burn = static_cast<std::size_t>(burn_in_fraction * static_cast<double>(ref.size()));
    const std::size_t t_len = ref.size() - burn;
    const double sigma = std::sqrt(population_variance(
        std::span<const double>(ref).subspan(burn)));
    if (!(sigma > 0.0)) throw std::runtime_error("sloppiness_hessian: flat reference path");

    const auto np = active.size();
    Eigen::MatrixXd sens(t_len, np);
    for (std::size_t c = 0; c < np; ++c) {
        double* slot = slots[active[c]];
        const double value = *slot;
        *slot = value * std::exp(delta_rel);
        const auto up = mispricing_run(base);
        *slot = value * std::exp(-delta_rel);
        const auto dn = mispricing_run(base);
        *slot = value;
        for (std::size_t t = 0; t < t_len; ++t)
            sens(t, c) = (up[burn + t] - dn[burn + t]) / (2.0 * delta_rel * sigma);
    }

    rep.hessian = (2.0 / static_cast<double>(t_len)) * (sens.transpose() * sens);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(rep.hessian);
    Eigen::VectorXd ev = solver.eigenvalues();
    Eigen::MatrixXd vec = solver.eigenvectors();
    // Descending order, spectrum normalised by the largest eigenvalue.
    rep.eigenvalues.resize(ev.size());
    rep.eigenvectors.resize(vec.rows(), vec.cols());
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        rep.eigenvalues(i) = ev(ev.size() - 1 - i);
        rep.eigenvectors.col(i) = vec.col(ev.size() - 1 - i);
    }
    rep.lambda_max = rep.eigenvalues(0);
    if (rep.lambda_max > 0.0) rep.eigenvalues /= rep.lambda_max;
    const double lam_min = std::max(rep.eigenvalues(rep.eigenvalues.size() - 1), 1e-300);
    rep.decades_spanned = std::log10(1.0 / lam_min);
    return rep;
}

SloppinessReport average_class_hessian(const std::vector<SloppinessReport>& reports) {
    if (reports.empty()) throw std::invalid_argument("average_class_hessian: no reports");
    for (const auto& r : reports)
        if (r.param_names != reports.front().param_names)
            throw std::invalid_argument("average_class_hessian: parameter ordering mismatch");

    SloppinessReport out;
    out.param_names = reports.front().param_names;
    out.hessian = Eigen::MatrixXd::Zero(reports.front().hessian.rows(),
                                        reports.front().hessian.cols());
    for (const auto& r : reports) out.hessian += r.hessian;
    out.hessian /= static_cast<double>(reports.size());

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(out.hessian);
    const Eigen::VectorXd ev = solver.eigenvalues();
    const Eigen::MatrixXd vec = solver.eigenvectors();
    out.eigenvalues.resize(ev.size());
    out.eigenvectors.resize(vec.rows(), vec.cols());
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        out.eigenvalues(i) = ev(ev.size() - 1 - i);
        out.eigenvectors.col(i) = vec.col(ev.size() - 1 - i);
    }
    out.lambda_max = out.eigenvalues(0);
    if (out.lambda_max > 0.0) out.eigenvalues /= out.lambda_max;
    const double lam_min = std::max(out.eigenvalues(out.eigenvalues.size() - 1), 1e-300);
    out.decades_spanned = std::log10(1.0 / lam_min);
    return out;
}

namespace {

// EWMA standard deviation of x (uncentred second moment), decay a.
std::vector<double> ewma_sd(std::span<const double> x, double a) {
    std::vector<double> sd(x.size(), 0.0);
    if (x.empty()) return sd;
    double var = x[0] * x[0];
    sd[0] = std::abs(x[0]);
    for (std::size_t t = 1; t < x.size(); ++t) {
        var = (1.0 - a) * var + a * x[t] * x[t];
        sd[t] = std::sqrt(var);
    }
    return sd;
}

}  // namespace

std::vector<double> pnl_from_signal(std::span<const double> signal,
                                    std::span<const double> prices, double decay,
                                    std::size_t warmup) {
    if (signal.size() != prices.size())
        throw std::invalid_argument("pnl_from_signal: length mismatch");
    warmup = std::max<std::size_t>(warmup, 2);
    const std::size_t n = prices.size();
    if (n <= warmup) throw std::invalid_argument("pnl_from_signal: series shorter than warmup");
    std::vector<double> dp(n, 0.0);
    for (std::size_t t = 1; t < n; ++t) dp[t] = prices[t] - prices[t - 1];
    const auto sd = ewma_sd(std::span<const double>(dp).subspan(1), decay);

    std::vector<double> pnl;
    for (std::size_t t = warmup; t < n; ++t) {
        const double sd_prev = sd[t - 2];  // sd index is shifted by one vs prices
        pnl.push_back(sd_prev > 0.0 ? signal[t - 1] * dp[t] / sd_prev : 0.0);
    }
    return pnl;
}

BacktestResult backtest_signals(const ChiarellaParams& theta, const CleanSeries& series,
                                const FilterResult& filt) {
    const std::size_t n = series.size();
    if (filt.v_filt.size() != n)
        throw std::invalid_argument("backtest_signals: filter output does not match the series");
    if (n < 20) throw std::invalid_argument("backtest_signals: series too short");

    constexpr double kSdDecay = 1.0 / 7.0;
    constexpr std::size_t kWarmup = 13;  // first 12 months excluded for EWMA history

    const auto m = trend_signal_from_prices(series.dedrifted, theta.alpha);
    std::vector<double> trend_raw(n), value_sig(n);
    for (std::size_t t = 0; t < n; ++t) {
        trend_raw[t] = trend_demand(m[t], theta);
        const double mis = filt.v_filt[t] - series.dedrifted[t];
        value_sig[t] = fundamentalist_demand(mis, theta);
    }

    // Trend normalisation by its own lagged EWMA std, clipped at +-1.
    const auto trend_sd = ewma_sd(trend_raw, kSdDecay);
    std::vector<double> trend_sig(n, 0.0);
    for (std::size_t t = 1; t < n; ++t) {
        if (trend_sd[t - 1] > 0.0)
            trend_sig[t] = std::clamp(trend_raw[t] / trend_sd[t - 1], -1.0, 1.0);
    }

    std::vector<double> prices(n);
    for (std::size_t t = 0; t < n; ++t) prices[t] = std::exp(series.logp[t]);

    BacktestResult out;
    out.pnl_trend = pnl_from_signal(trend_sig, prices, kSdDecay, kWarmup);
    out.pnl_value = pnl_from_signal(value_sig, prices, kSdDecay, kWarmup);
    for (std::size_t t = kWarmup; t < n; ++t) out.months.push_back(series.months[t]);
    out.first_month = out.months.front();
    out.last_month = out.months.back();
    out.sr_trend = sharpe_ratio(out.pnl_trend);
    out.sr_value = sharpe_ratio(out.pnl_value);
    return out;
}

}  // namespace chiarella
