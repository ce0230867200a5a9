#pragma once

#include <cstdint>
#include <span>

namespace chiarella {

struct SilvermanOptions {
    int k = 1;            // null hypothesis: at most k modes
    int n_boot = 500;
    std::uint64_t seed = 1;
};

/// Smallest Gaussian-kernel bandwidth whose KDE has at most k modes, found by
/// bisection to 1e-3 relative precision. Throws when the bracket cannot be
/// established (degenerate samples).
double critical_bandwidth(std::span<const double> sample, int k);

/// Silverman's multimodality test: smoothed bootstrap with variance
/// rescaling; the p-value is the fraction of resamples whose critical
/// bandwidth exceeds the observed one. Requires n >= 20 and n_boot >= 200.
double silverman_pvalue(std::span<const double> sample, const SilvermanOptions& opts);

}  // namespace chiarella
