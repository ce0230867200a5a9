#include "chiarella/series.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace chiarella {

int month_from_iso(const std::string& iso) {
    int year = 0, month = 0;
    if (std::sscanf(iso.c_str(), "%d-%d", &year, &month) != 2 || month < 1 || month > 12)
        throw std::invalid_argument("bad ISO month: '" + iso + "'");
    return year * 12 + (month - 1);
}

std::string month_to_iso(int month_serial) {
    const int year = month_serial / 12;
    const int month = month_serial % 12 + 1;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02d", year, month);
    return buf;
}

void RawSeries::validate() const {
    if (months.size() != prices.size())
        throw std::invalid_argument(id + ": months/prices length mismatch");
    if (!cpi.empty() && cpi.size() != prices.size())
        throw std::invalid_argument(id + ": misaligned CPI series");
    for (std::size_t i = 0; i < prices.size(); ++i) {
        if (!(prices[i] > 0.0))
            throw std::invalid_argument(id + ": non-positive price at " + month_to_iso(months[i]));
        if (i > 0 && months[i] <= months[i - 1])
            throw std::invalid_argument(id + ": dates not strictly increasing at " +
                                        month_to_iso(months[i]));
    }
}

RawSeries cpi_adjust(const RawSeries& raw) {
    raw.validate();
    if (raw.cpi.empty()) throw std::invalid_argument(raw.id + ": cpi_adjust without CPI data");
    RawSeries out = raw;
    const double cpi_last = raw.cpi.back();
    if (!(cpi_last > 0.0)) throw std::invalid_argument(raw.id + ": non-positive final CPI");
    for (std::size_t i = 0; i < out.prices.size(); ++i)
        out.prices[i] = raw.prices[i] * (raw.cpi[i] / cpi_last);
    return out;
}

RawSeries stitch_gaps(const RawSeries& raw, const std::vector<MonthRange>& exclusion_windows) {
    raw.validate();
    for (const auto& w : exclusion_windows)
        if (w.last < w.first)
            throw std::invalid_argument(raw.id + ": empty exclusion window");

    RawSeries kept;
    kept.id = raw.id;
    for (std::size_t i = 0; i < raw.months.size(); ++i) {
        const int m = raw.months[i];
        const bool excluded = std::any_of(exclusion_windows.begin(), exclusion_windows.end(),
                                          [m](const MonthRange& w) {
                                              return m >= w.first && m <= w.last;
                                          });
        if (excluded) continue;
        kept.months.push_back(m);
        kept.prices.push_back(raw.prices[i]);
        if (!raw.cpi.empty()) kept.cpi.push_back(raw.cpi[i]);
    }
    if (kept.months.empty())
        throw std::invalid_argument(raw.id + ": exclusion windows cover the entire series");

    const std::size_t n = kept.months.size();
    std::vector<double> logp(n);
    for (std::size_t i = 0; i < n; ++i) logp[i] = std::log(kept.prices[i]);

    // Accumulate the seam shift right-to-left: everything left of a gap moves
    // by the gap's level difference. Unshifted rows keep their exact price.
    RawSeries out;
    out.id = kept.id;
    out.months.resize(n);
    out.prices.resize(n);
    out.cpi = kept.cpi;
    const int last = kept.months.back();
    double shift = 0.0;
    out.prices[n - 1] = kept.prices[n - 1];
    out.months[n - 1] = last;
    for (std::size_t i = n - 1; i-- > 0;) {
        if (kept.months[i + 1] != kept.months[i] + 1) shift += logp[i + 1] - logp[i];
        out.prices[i] = shift == 0.0 ? kept.prices[i] : std::exp(logp[i] + shift);
        out.months[i] = last - static_cast<int>(n - 1 - i);
    }
    return out;
}

DriftModel fit_drift(std::span<const int> months, std::span<const double> logp,
                     std::optional<int> order_override) {
    if (months.size() != logp.size()) throw std::invalid_argument("fit_drift: length mismatch");
    if (months.size() < 2) throw std::invalid_argument("fit_drift: series too short");
    int order;
    if (order_override) {
        order = *order_override;
    } else {
        const int whole_years = (months.back() - months.front()) / 12;
        order = whole_years / 10;
    }
    std::vector<double> times(months.size());
    for (std::size_t i = 0; i < months.size(); ++i) times[i] = static_cast<double>(months[i]);
    return DriftModel::fit(times, logp, order);
}

std::vector<double> dedrift(std::span<const int> months, std::span<const double> logp,
                            const DriftModel& drift) {
    if (months.size() != logp.size()) throw std::invalid_argument("dedrift: length mismatch");
    std::vector<double> out(logp.size());
    for (std::size_t i = 0; i < logp.size(); ++i)
        out[i] = logp[i] - drift.integrated(static_cast<double>(months[i]));
    return out;
}

std::vector<double> redrift(std::span<const int> months, std::span<const double> dedrifted,
                            const DriftModel& drift) {
    if (months.size() != dedrifted.size()) throw std::invalid_argument("redrift: length mismatch");
    std::vector<double> out(dedrifted.size());
    for (std::size_t i = 0; i < dedrifted.size(); ++i)
        out[i] = dedrifted[i] + drift.integrated(static_cast<double>(months[i]));
    return out;
}

CleanSeries prepare_series(const RawSeries& raw, const std::vector<MonthRange>& exclusion_windows,
                           std::optional<int> drift_order_override) {
    RawSeries adjusted = raw.cpi.empty() ? raw : cpi_adjust(raw);
    RawSeries stitched = stitch_gaps(adjusted, exclusion_windows);

    CleanSeries out;
    out.id = stitched.id;
    out.months = stitched.months;
    out.logp.resize(stitched.prices.size());
    for (std::size_t i = 0; i < stitched.prices.size(); ++i)
        out.logp[i] = std::log(stitched.prices[i]);
    out.drift = fit_drift(out.months, out.logp, drift_order_override);
    out.dedrifted = dedrift(out.months, out.logp, out.drift);
    return out;
}

void CleanSeries::write_csv(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os << "date,logp,G,dedrifted\n";
    char buf[128];
    for (std::size_t i = 0; i < size(); ++i) {
        const double g = drift.integrated(static_cast<double>(months[i]));
        std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%.17g\n", month_to_iso(months[i]).c_str(),
                      logp[i], g, dedrifted[i]);
        os << buf;
    }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    return cells;
}

}  // namespace

RawSeries read_price_csv(const std::string& path, const std::string& id) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path);
    RawSeries out;
    out.id = id;
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error(path + ": empty file");
    const auto header = split_csv_line(line);
    if (header.empty() || header[0] != "date")
        throw std::runtime_error(path + ": expected header starting with 'date'");
    const bool has_cpi = header.size() >= 3 && header[2] == "cpi";
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() < 2) throw std::runtime_error(path + ": short row '" + line + "'");
        out.months.push_back(month_from_iso(cells[0]));
        out.prices.push_back(std::stod(cells[1]));
        if (has_cpi) {
            if (cells.size() < 3) throw std::runtime_error(path + ": missing cpi cell");
            out.cpi.push_back(std::stod(cells[2]));
        }
    }
    out.validate();
    return out;
}

void attach_cpi_csv(RawSeries& raw, const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path);
    std::string line;
    std::getline(is, line);  // header
    std::vector<int> months;
    std::vector<double> cpi;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() < 2) throw std::runtime_error(path + ": short row");
        months.push_back(month_from_iso(cells[0]));
        cpi.push_back(std::stod(cells[1]));
    }
    if (months != raw.months) throw std::invalid_argument(raw.id + ": misaligned CPI series");
    raw.cpi = std::move(cpi);
}

}  // namespace chiarella
