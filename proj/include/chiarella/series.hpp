#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "chiarella/drift.hpp"

namespace chiarella {

/// Months are held as a serial index, year*12 + (month-1), so gaps and
/// contiguity checks are integer arithmetic.
int month_from_iso(const std::string& iso);      // accepts YYYY-MM or YYYY-MM-DD
std::string month_to_iso(int month_serial);      // YYYY-MM

struct MonthRange {
    int first;  // inclusive
    int last;   // inclusive
};

struct RawSeries {
    std::string id;
    std::vector<int> months;      // strictly increasing, gaps allowed
    std::vector<double> prices;   // nominal levels, > 0
    std::vector<double> cpi;      // aligned CPI levels, empty when absent

    void validate() const;
};

struct CleanSeries {
    std::string id;
    std::vector<int> months;       // contiguous after stitching
    std::vector<double> logp;      // log-price
    std::vector<double> dedrifted; // logp - G
    DriftModel drift;

    std::size_t size() const { return months.size(); }
    /// Columns: date, logp, G, dedrifted.
    void write_csv(const std::string& path) const;
};

/// Deflates prices by cpi_t / cpi_last, leaving the final price unchanged.
RawSeries cpi_adjust(const RawSeries& raw);

/// Removes rows inside the exclusion windows, then levels every remaining
/// gap: all log-prices left of a gap are shifted by a constant so the last
/// pre-gap log-price equals the first post-gap one. Dates are reindexed
/// contiguously, anchored at the final observation.
RawSeries stitch_gaps(const RawSeries& raw, const std::vector<MonthRange>& exclusion_windows);

/// Polynomial drift of order floor(T/10), T in whole years spanned by the
/// series; `order_override` replaces the heuristic when set.
DriftModel fit_drift(std::span<const int> months, std::span<const double> logp,
                     std::optional<int> order_override = std::nullopt);

std::vector<double> dedrift(std::span<const int> months, std::span<const double> logp,
                            const DriftModel& drift);
std::vector<double> redrift(std::span<const int> months, std::span<const double> dedrifted,
                            const DriftModel& drift);

/// Full cleaning pipeline: CPI adjust (when CPI present), stitch, log, fit
/// drift, de-drift.
CleanSeries prepare_series(const RawSeries& raw, const std::vector<MonthRange>& exclusion_windows,
                           std::optional<int> drift_order_override = std::nullopt);

/// Reads `date,price[,cpi]` CSV with ISO dates, one row per month.
RawSeries read_price_csv(const std::string& path, const std::string& id);

/// Reads an aligned `date,cpi` CSV into raw.cpi (dates must match raw.months).
void attach_cpi_csv(RawSeries& raw, const std::string& path);

}  // namespace chiarella
