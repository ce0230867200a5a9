#include "chiarella/drift.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace chiarella {

DriftModel::DriftModel() : coeffs_{0.0}, t_start_(0.0), t_end_(1.0) {}

DriftModel DriftModel::zero(double t_start, double t_end) {
    return from_chebyshev({0.0}, t_start, t_end);
}

DriftModel DriftModel::constant_slope(double g, double t_start, double t_end) {
    const double mid = 0.5 * (t_start + t_end);
    const double half = 0.5 * (t_end - t_start);
    return from_chebyshev({g * mid, g * half}, t_start, t_end);
}

DriftModel DriftModel::from_chebyshev(std::vector<double> coeffs, double t_start, double t_end) {
    if (coeffs.empty()) coeffs.push_back(0.0);
    if (!(t_end > t_start)) throw std::invalid_argument("DriftModel: t_end must exceed t_start");
    DriftModel m;
    m.coeffs_ = std::move(coeffs);
    m.t_start_ = t_start;
    m.t_end_ = t_end;
    return m;
}

DriftModel DriftModel::fit(std::span<const double> times, std::span<const double> values, int order) {
    if (order < 0) throw std::invalid_argument("DriftModel::fit: order must be >= 0");
    const auto n = times.size();
    if (n != values.size()) throw std::invalid_argument("DriftModel::fit: length mismatch");
    if (n < static_cast<std::size_t>(order) + 1)
        throw std::invalid_argument("DriftModel::fit: need at least order+1 points, order " +
                                    std::to_string(order));

    const double t0 = times.front();
    const double t1 = times.back();
    if (!(t1 > t0)) throw std::invalid_argument("DriftModel::fit: degenerate time span");
    const double mid = 0.5 * (t0 + t1);
    const double half = 0.5 * (t1 - t0);

    Eigen::MatrixXd design(n, order + 1);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = (times[i] - mid) / half;
        double tkm1 = 1.0, tk = x;
        design(i, 0) = 1.0;
        if (order >= 1) design(i, 1) = x;
        for (int k = 2; k <= order; ++k) {
            const double tkp1 = 2.0 * x * tk - tkm1;
            design(i, k) = tkp1;
            tkm1 = tk;
            tk = tkp1;
        }
    }

    Eigen::Map<const Eigen::VectorXd> y(values.data(), n);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    if (qr.rank() < order + 1)
        throw std::runtime_error("DriftModel::fit: rank-deficient design at order " +
                                 std::to_string(order));
    Eigen::VectorXd c = qr.solve(y);

    return from_chebyshev(std::vector<double>(c.data(), c.data() + c.size()), t0, t1);
}

double DriftModel::normalize(double t) const {
    const double span = t_end_ - t_start_;
    const double tol = 1e-9 * std::max(1.0, std::abs(span));
    if (t < t_start_ - tol || t > t_end_ + tol)
        throw std::domain_error("DriftModel: evaluation at t=" + std::to_string(t) +
                                " outside domain [" + std::to_string(t_start_) + ", " +
                                std::to_string(t_end_) + "]");
    const double x = (2.0 * t - (t_start_ + t_end_)) / span;
    return std::clamp(x, -1.0, 1.0);
}

namespace {

double clenshaw(const std::vector<double>& c, double x) {
    double b1 = 0.0, b2 = 0.0;
    for (std::size_t k = c.size(); k-- > 1;) {
        const double b0 = 2.0 * x * b1 - b2 + c[k];
        b2 = b1;
        b1 = b0;
    }
    return x * b1 - b2 + c[0];
}

}  // namespace

double DriftModel::integrated(double t) const {
    return clenshaw(coeffs_, normalize(t));
}

double DriftModel::slope(double t) const {
    const double x = normalize(t);
    const auto n = coeffs_.size();
    if (n <= 1) return 0.0;
    // Chebyshev derivative recurrence: d[k-1] = d[k+1] + 2k c[k].
    std::vector<double> d(n - 1, 0.0);
    double dkp1 = 0.0, dkp2 = 0.0;
    for (std::size_t k = n - 1; k >= 1; --k) {
        const double dk = dkp2 + 2.0 * static_cast<double>(k) * coeffs_[k];
        d[k - 1] = dk;
        dkp2 = dkp1;
        dkp1 = dk;
    }
    d[0] *= 0.5;
    const double dxdt = 2.0 / (t_end_ - t_start_);
    return clenshaw(d, x) * dxdt;
}

}  // namespace chiarella
