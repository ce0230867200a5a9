#include "chiarella/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <Eigen/Dense>

#include "chiarella/model.hpp"
#include "chiarella/trend.hpp"

namespace chiarella {

namespace {

constexpr double kSigmaNFloor = 1e-6;      // std-dev floor for degenerate inputs
constexpr double kMonotoneSlack = 1e-9;

// Gaussian central moments of X ~ N(mu, var).
struct Moments {
    double m1, m2, m3, m4, m6;
};

Moments gaussian_moments(double mu, double var) {
    const double mu2 = mu * mu;
    const double v2 = var * var;
    Moments g;
    g.m1 = mu;
    g.m2 = mu2 + var;
    g.m3 = mu * (mu2 + 3.0 * var);
    g.m4 = mu2 * mu2 + 6.0 * mu2 * var + 3.0 * v2;
    g.m6 = mu2 * mu2 * mu2 + 15.0 * mu2 * mu2 * var + 45.0 * mu2 * v2 + 15.0 * v2 * var;
    return g;
}

struct EmData {
    std::vector<double> d;  // observed de-drifted returns p[t+1] - p[t]
    std::vector<double> u;  // tanh(gamma m[t]), exogenous
    std::size_t m = 0;      // number of observations
};

EmData build_em_data(std::span<const double> obs, double alpha, double gamma) {
    EmData data;
    data.m = obs.size() - 1;
    data.d.resize(data.m);
    data.u.resize(data.m);
    const auto trend = trend_signal_from_prices(obs, alpha);
    for (std::size_t t = 0; t < data.m; ++t) {
        data.d[t] = obs[t + 1] - obs[t];
        data.u[t] = std::tanh(gamma * trend[t]);
    }
    return data;
}

// Expected squared observation residual under the smoothed posterior.
double expected_resid_sq(const ChiarellaParams& theta, double d, double u, const Moments& g) {
    const double s_mean = theta.kappa * g.m1 + theta.kappa3 * g.m3 + theta.beta * u;
    const double s_sq = theta.kappa * theta.kappa * g.m2 + theta.kappa3 * theta.kappa3 * g.m6 +
                        theta.beta * theta.beta * u * u +
                        2.0 * theta.kappa * theta.kappa3 * g.m4 +
                        2.0 * theta.kappa * theta.beta * u * g.m1 +
                        2.0 * theta.kappa3 * theta.beta * u * g.m3;
    return d * d - 2.0 * d * s_mean + s_sq;
}

ChiarellaParams m_step(const ChiarellaParams& theta, const EmOptions& opts, const EmData& data,
                       std::span<const double> obs, const FilterResult& sm) {
    const std::size_t m = data.m;
    std::vector<Moments> g(m);
    for (std::size_t t = 0; t < m; ++t)
        g[t] = gaussian_moments(sm.chain_smooth_mean[t] - obs[t], sm.chain_smooth_var[t]);

    ChiarellaParams next = theta;

    // Demand coefficients: the expected complete-data likelihood is quadratic
    // in (kappa, kappa3, beta), so the maximiser is a linear solve.
    if (opts.fixed_beta && opts.model == ModelKind::Linear) {
        // beta held: 1-D update of kappa against the residual net of trend.
        double num = 0.0, den = 0.0;
        for (std::size_t t = 0; t < m; ++t) {
            num += (data.d[t] - *opts.fixed_beta * data.u[t]) * g[t].m1;
            den += g[t].m2;
        }
        next.kappa = den > 1e-30 ? num / den : 0.0;
        next.beta = *opts.fixed_beta;
        next.kappa3 = 0.0;
    } else if (opts.model == ModelKind::Linear) {
        Eigen::Matrix2d lhs = Eigen::Matrix2d::Zero();
        Eigen::Vector2d rhs = Eigen::Vector2d::Zero();
        for (std::size_t t = 0; t < m; ++t) {
            const double u = data.u[t];
            lhs(0, 0) += g[t].m2;
            lhs(0, 1) += g[t].m1 * u;
            lhs(1, 1) += u * u;
            rhs(0) += data.d[t] * g[t].m1;
            rhs(1) += data.d[t] * u;
        }
        lhs(1, 0) = lhs(0, 1);
        if (lhs(1, 1) < 1e-30) {
            // A flat trend regressor (tanh(gamma m) == 0 throughout) leaves
            // beta unidentifiable; hold it at zero.
            next.kappa = lhs(0, 0) > 1e-30 ? rhs(0) / lhs(0, 0) : 0.0;
            next.beta = 0.0;
        } else {
            const Eigen::Vector2d x = lhs.ldlt().solve(rhs);
            next.kappa = x(0);
            next.beta = x(1);
        }
        next.kappa3 = 0.0;
    } else {
        Eigen::Matrix3d lhs = Eigen::Matrix3d::Zero();
        Eigen::Vector3d rhs = Eigen::Vector3d::Zero();
        for (std::size_t t = 0; t < m; ++t) {
            const double u = data.u[t];
            lhs(0, 0) += g[t].m2;
            lhs(0, 1) += g[t].m4;
            lhs(0, 2) += g[t].m1 * u;
            lhs(1, 1) += g[t].m6;
            lhs(1, 2) += g[t].m3 * u;
            lhs(2, 2) += u * u;
            rhs(0) += data.d[t] * g[t].m1;
            rhs(1) += data.d[t] * g[t].m3;
            rhs(2) += data.d[t] * u;
        }
        lhs(1, 0) = lhs(0, 1);
        lhs(2, 0) = lhs(0, 2);
        lhs(2, 1) = lhs(1, 2);
        const Eigen::Vector3d x = lhs.ldlt().solve(rhs);
        if (x(1) >= 0.0) {
            next.kappa = x(0);
            next.kappa3 = x(1);
            next.beta = x(2);
        } else {
            // kappa3 must stay >= 0; the constrained maximiser sits on the
            // boundary, which is the 2x2 solve.
            next.kappa3 = 0.0;
            if (lhs(2, 2) < 1e-30) {
                next.kappa = lhs(0, 0) > 1e-30 ? rhs(0) / lhs(0, 0) : 0.0;
                next.beta = 0.0;
            } else {
                Eigen::Matrix2d lhs2;
                lhs2 << lhs(0, 0), lhs(0, 2), lhs(2, 0), lhs(2, 2);
                Eigen::Vector2d rhs2(rhs(0), rhs(2));
                const Eigen::Vector2d x2 = lhs2.ldlt().solve(rhs2);
                next.kappa = x2(0);
                next.beta = x2(1);
            }
        }
    }

    double obs_ss = 0.0;
    for (std::size_t t = 0; t < m; ++t)
        obs_ss += expected_resid_sq(next, data.d[t], data.u[t], g[t]);
    obs_ss = std::max(obs_ss, 0.0);

    double trans_ss = 0.0;
    for (std::size_t t = 0; t + 1 < m; ++t) {
        const double a = sm.chain_smooth_mean[t];
        const double b = sm.chain_smooth_mean[t + 1];
        trans_ss += sm.chain_smooth_var[t + 1] + b * b + sm.chain_smooth_var[t] + a * a -
                    2.0 * (sm.chain_lag_cov[t] + a * b);
    }
    trans_ss = std::max(trans_ss, 0.0);

    if (opts.sigma_ratio) {
        const double ratio = *opts.sigma_ratio;
        const double var_n =
            (obs_ss + ratio * ratio * trans_ss) / static_cast<double>(m + (m - 1));
        next.sigma_n = std::sqrt(std::max(var_n, kSigmaNFloor * kSigmaNFloor));
        next.sigma_v = next.sigma_n / ratio;
    } else {
        next.sigma_n =
            std::sqrt(std::max(obs_ss / static_cast<double>(m), kSigmaNFloor * kSigmaNFloor));
        if (opts.fixed_sigma_v) {
            next.sigma_v = *opts.fixed_sigma_v;
        } else {
            next.sigma_v = std::sqrt(std::max(trans_ss / static_cast<double>(m - 1), 1e-18));
        }
    }

    next.v0 = sm.chain_smooth_mean[0];
    return next;
}

StateSpaceSpec make_spec(const ChiarellaParams& theta, std::span<const double> obs,
                         double init_var) {
    StateSpaceSpec spec;
    spec.params = theta;
    spec.observations.assign(obs.begin(), obs.end());
    spec.init_mean = theta.v0;
    spec.init_var = init_var;
    return spec;
}

void check_divergence(const ChiarellaParams& theta) {
    const bool ok = std::isfinite(theta.kappa) && std::isfinite(theta.kappa3) &&
                    std::isfinite(theta.beta) && std::isfinite(theta.sigma_n) &&
                    std::isfinite(theta.sigma_v) && std::isfinite(theta.v0) &&
                    std::abs(theta.kappa) < 1e3 && std::abs(theta.beta) < 1e3 &&
                    theta.kappa3 < 1e6 && theta.sigma_n < 1e3;
    if (!ok) throw std::runtime_error("em_fit: parameter divergence");
}

}  // namespace

CalibrationReport em_fit(std::span<const double> dedrifted, const std::string& asset_id,
                         const EmOptions& opts) {
    if (dedrifted.size() < 120)
        throw std::invalid_argument("em_fit: series shorter than 120 months");
    if (opts.fixed_sigma_v && opts.sigma_ratio)
        throw std::invalid_argument("em_fit: fixed_sigma_v and sigma_ratio are exclusive");
    if (opts.sigma_ratio && !(*opts.sigma_ratio > 0.0))
        throw std::invalid_argument("em_fit: sigma_ratio must be > 0");
    if (opts.fixed_beta && opts.model == ModelKind::Cubic)
        throw std::invalid_argument("em_fit: fixed_beta supported for the linear model only");

    const EmData data = build_em_data(dedrifted, opts.alpha, opts.gamma);

    ChiarellaParams theta;
    theta.alpha = opts.alpha;
    theta.gamma = opts.gamma;
    theta.kappa = 0.05;
    theta.beta = opts.fixed_beta ? *opts.fixed_beta : 0.05;
    theta.kappa3 = opts.model == ModelKind::Cubic ? 0.5 : 0.0;
    theta.sigma_n = std::sqrt(std::max(population_variance(diff(dedrifted)), 1e-10));
    theta.sigma_v = opts.fixed_sigma_v ? *opts.fixed_sigma_v : theta.sigma_n / 4.0;
    if (opts.sigma_ratio) theta.sigma_v = theta.sigma_n / *opts.sigma_ratio;
    theta.v0 = dedrifted[0];

    // Prior variance of v_0 is part of the model and must not move with the
    // EM iterate, or monotonicity is lost. Pinned from the initial guess.
    const double init_var = std::max(25.0 * theta.sigma_v * theta.sigma_v, 1e-10);

    CalibrationReport report;
    report.asset = asset_id;
    report.model = opts.model;
    report.sigma_ratio = opts.sigma_ratio;

    ChiarellaParams prev_theta = theta;
    double prev_loglik = -std::numeric_limits<double>::infinity();
    bool converged = false;
    bool have_prev = false;
    int damp_rounds = 0;
    int iter = 0;

    for (; iter < opts.max_iter; ++iter) {
        const StateSpaceSpec spec = make_spec(theta, dedrifted, init_var);
        const FilterResult sm = run_filter_smoother(spec);

        if (have_prev && sm.loglik < prev_loglik - kMonotoneSlack) {
            if (opts.model == ModelKind::Linear)
                throw std::runtime_error("em_fit: log-likelihood decreased on the linear model");
            // The unscented E-step is approximate, so an overshooting M-step
            // can lose likelihood; halve the step toward the last accepted
            // iterate before giving up. The ratio/fixed constraints are
            // linear, so the mixed iterate still satisfies them.
            if (damp_rounds < 6) {
                ++damp_rounds;
                theta.kappa = 0.5 * (theta.kappa + prev_theta.kappa);
                theta.kappa3 = 0.5 * (theta.kappa3 + prev_theta.kappa3);
                theta.beta = 0.5 * (theta.beta + prev_theta.beta);
                theta.sigma_n = 0.5 * (theta.sigma_n + prev_theta.sigma_n);
                theta.sigma_v = opts.sigma_ratio ? theta.sigma_n / *opts.sigma_ratio
                                                 : 0.5 * (theta.sigma_v + prev_theta.sigma_v);
                theta.v0 = 0.5 * (theta.v0 + prev_theta.v0);
                continue;
            }
            theta = prev_theta;
            report.flags.push_back("ukf_nonmonotone_stop");
            converged = true;
            break;
        }
        damp_rounds = 0;
        report.history.push_back(sm.loglik);

        if (have_prev && sm.loglik - prev_loglik < opts.tol) {
            prev_theta = theta;
            prev_loglik = sm.loglik;
            converged = true;
            break;
        }
        prev_theta = theta;
        prev_loglik = sm.loglik;
        have_prev = true;

        theta = m_step(theta, opts, data, dedrifted, sm);
        check_divergence(theta);
    }

    theta = prev_theta;
    report.theta = theta;
    report.iterations = static_cast<int>(report.history.size());
    report.converged = converged;
    if (!converged) report.flags.push_back("iteration_cap");
    report.loglik = prev_loglik;
    report.loglik_norm = prev_loglik / static_cast<double>(data.m);
    if (theta.sigma_n <= kSigmaNFloor * 1.0000001) report.flags.push_back("sigma_n_floor");
    if (theta.beta < 0.0) report.flags.push_back("negative_beta");
    if (theta.kappa <= 0.0 && theta.kappa3 == 0.0) report.flags.push_back("nonpositive_kappa");
    return report;
}

CalibrationReport em_fit(const CleanSeries& series, const EmOptions& opts) {
    return em_fit(series.dedrifted, series.id, opts);
}

SigmaSearch calibrate_class_sigma(const std::vector<CalibrationReport>& step1,
                                  const std::vector<std::vector<double>>& dedrifted_by_asset) {
    if (step1.size() < 2)
        throw std::invalid_argument("calibrate_class_sigma: need at least 2 assets");
    if (step1.size() != dedrifted_by_asset.size())
        throw std::invalid_argument("calibrate_class_sigma: report/series count mismatch");

    auto total_loglik = [&](double ratio) {
        double acc = 0.0;
        for (std::size_t i = 0; i < step1.size(); ++i) {
            ChiarellaParams theta = step1[i].theta;
            theta.sigma_v = theta.sigma_n / ratio;
            StateSpaceSpec spec = make_spec(theta, dedrifted_by_asset[i],
                                            std::max(25.0 * theta.sigma_v * theta.sigma_v, 1e-10));
            acc += run_filter(spec).loglik;
        }
        return acc;
    };

    // Golden-section on log Sigma over [1, 50].
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double lo = std::log(1.0), hi = std::log(50.0);
    double x1 = hi - inv_phi * (hi - lo);
    double x2 = lo + inv_phi * (hi - lo);
    double f1 = total_loglik(std::exp(x1));
    double f2 = total_loglik(std::exp(x2));
    while (hi - lo > 1e-3) {
        if (f1 < f2) {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = total_loglik(std::exp(x2));
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = total_loglik(std::exp(x1));
        }
    }
    const double best = std::exp(0.5 * (lo + hi));

    // Dispersion of the per-asset implied ratios from step 1.
    std::vector<double> implied;
    for (const auto& rep : step1)
        if (rep.theta.sigma_v > 0.0) implied.push_back(rep.theta.sigma_n / rep.theta.sigma_v);
    double err = 0.0;
    if (implied.size() >= 2) {
        const double mean =
            std::accumulate(implied.begin(), implied.end(), 0.0) / static_cast<double>(implied.size());
        double acc = 0.0;
        for (double x : implied) acc += (x - mean) * (x - mean);
        err = std::sqrt(acc / static_cast<double>(implied.size()));
    }

    return SigmaSearch{best, err, total_loglik(best)};
}

ClassCalibration three_step_calibrate(const std::vector<CleanSeries>& series, ModelKind model,
                                      const TrendInputs& trend, double tol, int max_iter) {
    if (series.empty()) throw std::invalid_argument("three_step_calibrate: empty class");

    auto gamma_of = [&](const std::string& id) {
        const auto it = trend.gamma_by_asset.find(id);
        if (it == trend.gamma_by_asset.end())
            throw std::invalid_argument("three_step_calibrate: no gamma for asset " + id);
        return it->second;
    };

    // Step 1: free per-asset fit on the linear model.
    std::vector<CalibrationReport> step1;
    std::vector<std::vector<double>> obs;
    for (const auto& s : series) {
        EmOptions opts;
        opts.alpha = trend.alpha;
        opts.gamma = gamma_of(s.id);
        opts.model = ModelKind::Linear;
        opts.tol = tol;
        opts.max_iter = max_iter;
        step1.push_back(em_fit(s, opts));
        obs.push_back(s.dedrifted);
    }

    // Step 2: class-level noise ratio.
    ClassCalibration out;
    if (series.size() >= 2) {
        const SigmaSearch search = calibrate_class_sigma(step1, obs);
        out.sigma_ratio = search.sigma_ratio;
        out.sigma_ratio_err = search.sigma_ratio_err;
    } else {
        // Single-asset "class": reuse the implied step-1 ratio.
        out.sigma_ratio = step1[0].theta.sigma_n / std::max(step1[0].theta.sigma_v, 1e-12);
        out.sigma_ratio_err = 0.0;
    }

    // Step 3: per-asset refit with the ratio constraint (cubic refits reuse
    // the Sigma from the linear pass).
    for (const auto& s : series) {
        EmOptions opts;
        opts.alpha = trend.alpha;
        opts.gamma = gamma_of(s.id);
        opts.model = model;
        opts.sigma_ratio = out.sigma_ratio;
        opts.tol = tol;
        opts.max_iter = max_iter;
        CalibrationReport rep = em_fit(s, opts);

        StdErrorReport err = std_errors(rep.theta, s.dedrifted, opts);
        rep.err_kappa = err.kappa;
        rep.err_kappa3 = err.kappa3;
        rep.err_beta = err.beta;
        rep.err_sigma_n = err.sigma_n;
        rep.err_v0 = err.v0;
        if (!err.invertible) rep.flags.push_back("hessian_not_invertible");
        const auto ge = trend.gamma_err_by_asset.find(s.id);
        if (ge != trend.gamma_err_by_asset.end()) rep.err_gamma = ge->second;
        if (rep.err_sigma_n && out.sigma_ratio_err > 0.0)
            rep.err_sigma_v = sigma_v_error(rep.theta.sigma_n, *rep.err_sigma_n, out.sigma_ratio,
                                            out.sigma_ratio_err);
        out.per_asset.emplace(s.id, std::move(rep));
    }
    return out;
}

StdErrorReport std_errors(const ChiarellaParams& theta, std::span<const double> dedrifted,
                          const EmOptions& opts) {
    const double init_var = std::max(25.0 * theta.sigma_v * theta.sigma_v, 1e-10);

    std::vector<std::string> names = {"kappa", "beta", "sigma_n", "v0"};
    if (opts.model == ModelKind::Cubic) names.insert(names.begin() + 1, "kappa3");
    const int np = static_cast<int>(names.size());

    auto loglik_at = [&](const std::vector<double>& x) {
        ChiarellaParams p = theta;
        int i = 0;
        p.kappa = x[i++];
        if (opts.model == ModelKind::Cubic) p.kappa3 = x[i++];
        p.beta = x[i++];
        p.sigma_n = x[i++];
        p.v0 = x[i++];
        if (opts.sigma_ratio) p.sigma_v = p.sigma_n / *opts.sigma_ratio;
        StateSpaceSpec spec = make_spec(p, dedrifted, init_var);
        return run_filter(spec).loglik;
    };

    std::vector<double> center = {theta.kappa};
    if (opts.model == ModelKind::Cubic) center.push_back(theta.kappa3);
    center.push_back(theta.beta);
    center.push_back(theta.sigma_n);
    center.push_back(theta.v0);

    std::vector<double> h(np);
    for (int i = 0; i < np; ++i) h[i] = 1e-4 * std::max(std::abs(center[i]), 1e-2);

    const double l0 = loglik_at(center);
    Eigen::MatrixXd hess(np, np);
    for (int i = 0; i < np; ++i) {
        auto xp = center, xm = center;
        xp[i] += h[i];
        xm[i] -= h[i];
        hess(i, i) = (loglik_at(xp) - 2.0 * l0 + loglik_at(xm)) / (h[i] * h[i]);
        for (int j = i + 1; j < np; ++j) {
            auto xpp = center, xpm = center, xmp = center, xmm = center;
            xpp[i] += h[i];
            xpp[j] += h[j];
            xpm[i] += h[i];
            xpm[j] -= h[j];
            xmp[i] -= h[i];
            xmp[j] += h[j];
            xmm[i] -= h[i];
            xmm[j] -= h[j];
            hess(i, j) = (loglik_at(xpp) - loglik_at(xpm) - loglik_at(xmp) + loglik_at(xmm)) /
                         (4.0 * h[i] * h[j]);
            hess(j, i) = hess(i, j);
        }
    }

    StdErrorReport out;
    out.names = names;
    const Eigen::MatrixXd neg = -hess;
    for (int i = 0; i < np; ++i) out.curvature.push_back(neg(i, i));

    Eigen::LLT<Eigen::MatrixXd> llt(neg);
    std::vector<std::optional<double>> errs(np);
    if (llt.info() == Eigen::Success) {
        const Eigen::MatrixXd cov = neg.inverse();
        bool ok = true;
        for (int i = 0; i < np; ++i) ok = ok && cov(i, i) > 0.0 && std::isfinite(cov(i, i));
        if (ok) {
            out.invertible = true;
            for (int i = 0; i < np; ++i) errs[i] = std::sqrt(cov(i, i));
        }
    }
    if (!out.invertible) {
        // Fall back to per-parameter curvature where it is positive.
        for (int i = 0; i < np; ++i)
            if (neg(i, i) > 0.0) errs[i] = 1.0 / std::sqrt(neg(i, i));
    }

    int i = 0;
    out.kappa = errs[i++];
    if (opts.model == ModelKind::Cubic) out.kappa3 = errs[i++];
    out.beta = errs[i++];
    out.sigma_n = errs[i++];
    out.v0 = errs[i++];
    return out;
}

double sigma_v_error(double sigma_n, double d_sigma_n, double Sigma, double d_Sigma) {
    if (!(sigma_n > 0.0 && d_sigma_n >= 0.0 && Sigma > 0.0 && d_Sigma >= 0.0))
        throw std::invalid_argument("sigma_v_error: inputs must be positive");
    const double a = sigma_n / (Sigma * Sigma) * d_Sigma;
    const double b = d_sigma_n / Sigma;
    return std::sqrt(a * a + b * b);
}

}  // namespace chiarella
