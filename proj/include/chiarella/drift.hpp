#pragma once

#include <span>
#include <vector>

namespace chiarella {

/// Integrated long-term drift G(t) represented as a Chebyshev expansion over a
/// fixed time domain. g(t) = G'(t) is available for the continuous simulators.
/// Evaluation outside the domain throws std::domain_error.
class DriftModel {
public:
    DriftModel();  // zero drift on [0, 1]

    static DriftModel zero(double t_start, double t_end);
    /// G(t) = g * t: constant instantaneous drift.
    static DriftModel constant_slope(double g, double t_start, double t_end);
    static DriftModel from_chebyshev(std::vector<double> coeffs, double t_start, double t_end);

    /// Least-squares fit of order `order` to (times, values). Time is rescaled
    /// to [-1, 1] and a Chebyshev basis is used; raw monomials at order 22-30
    /// over thousands of points are numerically singular.
    static DriftModel fit(std::span<const double> times, std::span<const double> values, int order);

    double integrated(double t) const;  // G(t)
    double slope(double t) const;       // g(t) = G'(t)

    int order() const { return static_cast<int>(coeffs_.size()) - 1; }
    double t_start() const { return t_start_; }
    double t_end() const { return t_end_; }
    const std::vector<double>& chebyshev_coefficients() const { return coeffs_; }

private:
    double normalize(double t) const;  // maps domain to [-1, 1], range-checked

    std::vector<double> coeffs_;  // Chebyshev coefficients of G on [-1, 1]
    double t_start_ = 0.0;
    double t_end_ = 1.0;
};

}  // namespace chiarella
