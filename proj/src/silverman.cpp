#include "chiarella/silverman.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "chiarella/rng.hpp"

namespace chiarella {

namespace {

// KDE mode counting over the sample range +- 3 bandwidths, with the data
// linearly binned at 1024 points across its range. The kernel is tabulated
// per offset, so a mode count costs one pass over grid x support.
constexpr int kGridBins = 1024;
constexpr double kKernelCut = 8.0;  // truncate the Gaussian at 8 bandwidths

struct BinnedSample {
    double lo = 0.0;
    double step = 0.0;
    std::vector<double> weight;  // linear binning, sums to n
};

BinnedSample bin_sample(std::span<const double> sample, double lo, double hi) {
    BinnedSample b;
    b.lo = lo;
    b.step = (hi - lo) / static_cast<double>(kGridBins - 1);
    b.weight.assign(kGridBins, 0.0);
    const double inv = 1.0 / b.step;
    for (double x : sample) {
        const double pos = (x - lo) * inv;
        const auto i0 = static_cast<long>(std::floor(pos));
        if (i0 < 0) {
            b.weight.front() += 1.0;
        } else if (i0 >= kGridBins - 1) {
            b.weight.back() += 1.0;
        } else {
            const double frac = pos - static_cast<double>(i0);
            b.weight[i0] += 1.0 - frac;
            b.weight[i0 + 1] += frac;
        }
    }
    return b;
}

// Counts modes of the KDE at bandwidth h. A plateau flanked by lower values
// counts once; strictly increasing/decreasing runs never do.
int count_modes(const BinnedSample& b, double h) {
    // KDE modes live inside the data hull, so capping the padding at three
    // grid widths loses nothing even for very large bandwidths.
    const int pad = std::min(static_cast<int>(std::ceil(3.0 * h / b.step)) + 1, 3 * kGridBins);
    const int support = std::min(static_cast<int>(std::ceil(kKernelCut * h / b.step)),
                                 kGridBins + 2 * pad);
    std::vector<double> kernel(support + 1);
    for (int j = 0; j <= support; ++j) {
        const double z = static_cast<double>(j) * b.step / h;
        kernel[j] = std::exp(-0.5 * z * z);
    }

    const int total = kGridBins + 2 * pad;
    std::vector<double> density(total, 0.0);
    for (int j = 0; j < kGridBins; ++j) {
        const double w = b.weight[j];
        if (w == 0.0) continue;
        const int center = j + pad;
        const int from = std::max(0, center - support);
        const int to = std::min(total - 1, center + support);
        for (int i = from; i <= to; ++i) density[i] += w * kernel[std::abs(i - center)];
    }

    int modes = 0;
    int trend = -1;  // density rises from ~0 at the padded left edge
    for (int i = 1; i < total; ++i) {
        if (density[i] > density[i - 1]) {
            trend = 1;
        } else if (density[i] < density[i - 1]) {
            if (trend == 1) ++modes;
            trend = -1;
        }
        // equal neighbours extend the current run
    }
    return modes;
}

double critical_bandwidth_binned(const BinnedSample& b, double range, int k) {
    double hi = range;
    int guard = 0;
    while (count_modes(b, hi) > k) {
        hi *= 2.0;
        if (++guard > 20)
            throw std::runtime_error("critical_bandwidth: no unimodal upper bracket");
    }
    double lo = 2.0 * b.step;
    if (count_modes(b, lo) <= k) {
        // Try finer bandwidths before giving up; heavy ties may still fail.
        while (lo > 1e-6 * range && count_modes(b, lo) <= k) lo *= 0.5;
        if (count_modes(b, lo) <= k)
            throw std::runtime_error("critical_bandwidth: bisection bracket not found");
    }
    while (hi / lo > 1.0 + 1e-3) {
        const double mid = std::sqrt(lo * hi);
        if (count_modes(b, mid) <= k)
            hi = mid;
        else
            lo = mid;
    }
    return hi;
}

}  // namespace

double critical_bandwidth(std::span<const double> sample, int k) {
    if (sample.size() < 2) throw std::invalid_argument("critical_bandwidth: sample too small");
    if (k < 1) throw std::invalid_argument("critical_bandwidth: k must be >= 1");
    const auto [mn, mx] = std::minmax_element(sample.begin(), sample.end());
    if (!(*mx > *mn)) throw std::runtime_error("critical_bandwidth: degenerate sample");
    const BinnedSample b = bin_sample(sample, *mn, *mx);
    return critical_bandwidth_binned(b, *mx - *mn, k);
}

double silverman_pvalue(std::span<const double> sample, const SilvermanOptions& opts) {
    const auto n = sample.size();
    if (n < 20) throw std::invalid_argument("silverman_pvalue: need n >= 20");
    if (opts.n_boot < 200) throw std::invalid_argument("silverman_pvalue: need n_boot >= 200");

    const double h_crit = critical_bandwidth(sample, opts.k);

    double mean = std::accumulate(sample.begin(), sample.end(), 0.0) / static_cast<double>(n);
    double var = 0.0;
    for (double x : sample) var += (x - mean) * (x - mean);
    var /= static_cast<double>(n);

    // Smoothed bootstrap with variance rescaling: resampling from the KDE at
    // h_crit inflates the variance by h_crit^2, which the factor undoes.
    const double shrink = 1.0 / std::sqrt(1.0 + h_crit * h_crit / var);

    int exceed = 0;
    std::vector<double> resample(n);
    for (int bi = 0; bi < opts.n_boot; ++bi) {
        GaussianStream normals(opts.seed + 0x9e3779b97f4a7c15ULL * (bi + 1), "silverman");
        std::mt19937_64 pick(opts.seed ^ (0xda942042e4dd58b5ULL * (bi + 1)));
        for (std::size_t i = 0; i < n; ++i) {
            const double x = sample[pick() % n];
            resample[i] = mean + shrink * (x - mean + h_crit * normals.next());
        }
        const auto [mn, mx] = std::minmax_element(resample.begin(), resample.end());
        const BinnedSample b = bin_sample(resample, *mn, *mx);
        // h*_crit > h_crit exactly when the resample KDE at h_crit still has
        // more than k modes (mode count is nonincreasing in h).
        if (count_modes(b, h_crit) > opts.k) ++exceed;
    }
    return static_cast<double>(exceed) / static_cast<double>(opts.n_boot);
}

}  // namespace chiarella
