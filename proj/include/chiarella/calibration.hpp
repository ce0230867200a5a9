#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "chiarella/filter.hpp"
#include "chiarella/params.hpp"
#include "chiarella/series.hpp"

namespace chiarella {

struct EmOptions {
    double alpha = 0.2;   // fixed ex ante
    double gamma = 1.0;   // fixed ex ante
    ModelKind model = ModelKind::Linear;
    std::optional<double> fixed_sigma_v;  // hold sigma_v at this value
    std::optional<double> sigma_ratio;    // tie sigma_v = sigma_n / Sigma
    std::optional<double> fixed_beta;     // hold the trend impact fixed
    double tol = 1e-5;
    int max_iter = 500;
};

struct CalibrationReport {
    std::string asset;
    ModelKind model = ModelKind::Linear;
    ChiarellaParams theta;

    std::optional<double> err_kappa, err_kappa3, err_beta, err_sigma_n, err_v0;
    std::optional<double> err_gamma;    // from the tanh-fit covariance
    std::optional<double> err_sigma_v;  // via error propagation through Sigma

    double loglik = 0.0;
    double loglik_norm = 0.0;
    int iterations = 0;
    bool converged = false;
    std::optional<double> sigma_ratio;
    std::vector<double> history;  // per-iteration loglik, nondecreasing
    std::vector<std::string> flags;
};

/// EM over the free members of (kappa[, kappa3], beta, sigma_n, sigma_v, v0),
/// alternating exact smoothing with closed-form maximisation of the expected
/// complete-data log-likelihood. Stops when the loglik gain drops below
/// opts.tol or the iteration cap is reached.
CalibrationReport em_fit(std::span<const double> dedrifted, const std::string& asset_id,
                         const EmOptions& opts);
CalibrationReport em_fit(const CleanSeries& series, const EmOptions& opts);

struct SigmaSearch {
    double sigma_ratio = 0.0;      // argmax of the cumulated likelihood
    double sigma_ratio_err = 0.0;  // std-dev of per-asset implied ratios
    double total_loglik = 0.0;
};

/// Step-2 class calibration: 1-D golden-section search of Sigma over [1, 50]
/// (on log Sigma, tolerance 1e-3), re-running only the filter per asset with
/// sigma_v = sigma_n / Sigma and all other step-1 parameters fixed.
SigmaSearch calibrate_class_sigma(const std::vector<CalibrationReport>& step1,
                                  const std::vector<std::vector<double>>& dedrifted_by_asset);

struct ClassCalibration {
    double sigma_ratio = 0.0;
    double sigma_ratio_err = 0.0;
    std::map<std::string, CalibrationReport> per_asset;
};

struct TrendInputs {
    double alpha = 0.2;
    std::map<std::string, double> gamma_by_asset;
    std::map<std::string, double> gamma_err_by_asset;  // optional, may be empty
};

/// Steps 1-3 over one asset class. For the cubic model, steps 1-2 run on the
/// linear model and step 3 refits the cubic demand with the linear Sigma.
ClassCalibration three_step_calibrate(const std::vector<CleanSeries>& series, ModelKind model,
                                      const TrendInputs& trend, double tol = 1e-5,
                                      int max_iter = 500);

struct StdErrorReport {
    std::optional<double> kappa, kappa3, beta, sigma_n, v0;
    bool invertible = false;
    std::vector<double> curvature;  // diagonal of -Hessian per free parameter
    std::vector<std::string> names;
};

/// Numerical Hessian of the total predictive log-likelihood at theta (central
/// differences, relative step 1e-4); errors are sqrt(diag(inv(-H))). When the
/// Hessian is not invertible the per-parameter curvature is reported instead.
StdErrorReport std_errors(const ChiarellaParams& theta, std::span<const double> dedrifted,
                          const EmOptions& opts);

/// Gaussian error propagation for sigma_v = sigma_n / Sigma.
double sigma_v_error(double sigma_n, double d_sigma_n, double Sigma, double d_Sigma);

}  // namespace chiarella
