#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "chiarella/series.hpp"

using namespace chiarella;

namespace {

RawSeries flat_series(int n, double price = 100.0) {
    RawSeries s;
    s.id = "flat";
    const int start = month_from_iso("1950-01");
    for (int i = 0; i < n; ++i) {
        s.months.push_back(start + i);
        s.prices.push_back(price);
    }
    return s;
}

}  // namespace

TEST_CASE("ISO month round trip") {
    CHECK(month_to_iso(month_from_iso("1791-12")) == "1791-12");
    CHECK(month_to_iso(month_from_iso("2014-12-31")) == "2014-12");
    CHECK(month_from_iso("1950-02") - month_from_iso("1950-01") == 1);
    CHECK(month_from_iso("1951-01") - month_from_iso("1950-01") == 12);
    CHECK_THROWS_AS(month_from_iso("1950-13"), std::invalid_argument);
    CHECK_THROWS_AS(month_from_iso("junk"), std::invalid_argument);
}

TEST_CASE("cpi_adjust definition") {
    RawSeries s = flat_series(4, 50.0);
    s.cpi = {2.0, 1.0, 4.0, 2.0};
    const RawSeries adj = cpi_adjust(s);
    CHECK(adj.prices[0] == doctest::Approx(50.0));        // cpi ratio 1
    CHECK(adj.prices[1] == doctest::Approx(25.0));        // half the final CPI
    CHECK(adj.prices[2] == doctest::Approx(100.0));       // doubled
    CHECK(adj.prices[3] == 50.0);                         // final price untouched

    RawSeries constant = flat_series(4, 80.0);
    constant.cpi = {3.0, 3.0, 3.0, 3.0};
    const RawSeries same = cpi_adjust(constant);
    for (double p : same.prices) CHECK(p == doctest::Approx(80.0));

    RawSeries bad = flat_series(4);
    bad.cpi = {1.0, 1.0};
    CHECK_THROWS_AS(cpi_adjust(bad), std::invalid_argument);
    CHECK_THROWS_AS(cpi_adjust(flat_series(4)), std::invalid_argument);
}

TEST_CASE("stitch_gaps identity without windows") {
    RawSeries s = flat_series(24, 10.0);
    for (int i = 0; i < 24; ++i) s.prices[i] = 10.0 + i * 0.37;
    const RawSeries out = stitch_gaps(s, {});
    REQUIRE(out.months == s.months);
    for (std::size_t i = 0; i < s.prices.size(); ++i) CHECK(out.prices[i] == s.prices[i]);
}

TEST_CASE("stitch_gaps levels a jump across an excluded window") {
    RawSeries s;
    s.id = "jump";
    const int start = month_from_iso("1940-01");
    for (int i = 0; i < 40; ++i) {
        s.months.push_back(start + i);
        double logp = 2.0 + 0.01 * i;
        if (i >= 20) logp += 0.7;  // level jump inside the window
        s.prices.push_back(std::exp(logp));
    }
    const std::vector<MonthRange> windows{{start + 15, start + 24}};
    const RawSeries out = stitch_gaps(s, windows);
    CHECK(out.months.size() == 30);
    // Reindexed contiguously, anchored at the last observation.
    for (std::size_t i = 1; i < out.months.size(); ++i)
        CHECK(out.months[i] == out.months[i - 1] + 1);
    CHECK(out.months.back() == s.months.back());

    // Seam return vanishes.
    const double seam = std::log(out.prices[15]) - std::log(out.prices[14]);
    CHECK(std::abs(seam) <= 1e-12);

    // Returns away from the seam survive: bitwise right of the gap (shift is
    // exactly zero there), and to one ulp on the shifted left segment.
    for (std::size_t i = 16; i < 30; ++i)
        CHECK(std::log(out.prices[i]) - std::log(out.prices[i - 1]) ==
              std::log(s.prices[i + 10]) - std::log(s.prices[i + 9]));
    for (std::size_t i = 1; i < 15; ++i)
        CHECK(std::log(out.prices[i]) - std::log(out.prices[i - 1]) ==
              doctest::Approx(std::log(s.prices[i]) - std::log(s.prices[i - 1])).epsilon(1e-12));
}

TEST_CASE("stitch_gaps with already matching levels applies zero shift") {
    RawSeries s;
    s.id = "level";
    const int start = month_from_iso("1940-01");
    for (int i = 0; i < 30; ++i) {
        s.months.push_back(start + i);
        s.prices.push_back(42.5);
    }
    const RawSeries out = stitch_gaps(s, {{start + 10, start + 12}});
    CHECK(out.months.size() == 27);
    for (double p : out.prices) CHECK(p == 42.5);
}

TEST_CASE("stitch_gaps rejects a window covering everything") {
    RawSeries s = flat_series(12);
    CHECK_THROWS_AS(stitch_gaps(s, {{s.months.front(), s.months.back()}}),
                    std::invalid_argument);
}

TEST_CASE("fit_drift picks one order per decade") {
    const int start = month_from_iso("1791-12");
    std::vector<int> months;
    std::vector<double> logp;
    std::mt19937_64 rng(3);
    std::normal_distribution<double> noise(0.0, 0.05);
    const int n = 223 * 12 + 1;  // 1791-12 through 2014-12
    for (int i = 0; i < n; ++i) {
        months.push_back(start + i);
        logp.push_back(3.0 + 2e-3 * i + noise(rng));
    }
    const DriftModel drift = fit_drift(months, logp);
    CHECK(drift.order() == 22);

    // 20 whole years -> order 2.
    std::vector<int> short_m(months.begin(), months.begin() + 20 * 12 + 1);
    std::vector<double> short_p(logp.begin(), logp.begin() + 20 * 12 + 1);
    CHECK(fit_drift(short_m, short_p).order() == 2);
}

TEST_CASE("drift fit reproduces polynomial inputs exactly") {
    const int start = month_from_iso("1900-01");
    std::vector<double> times;
    for (int i = 0; i < 2600; ++i) times.push_back(static_cast<double>(start + i));

    // Linear input with a k=2 fit.
    std::vector<double> line(times.size());
    for (std::size_t i = 0; i < times.size(); ++i) line[i] = 1.5 + 3e-4 * (times[i] - times[0]);
    const DriftModel quad = DriftModel::fit(times, line, 2);
    for (std::size_t i = 0; i < times.size(); i += 97)
        CHECK(std::abs(quad.integrated(times[i]) - line[i]) < 1e-10);

    // Order-30 containment: a polynomial of order <= 30 is matched to 1e-9.
    std::vector<double> poly(times.size());
    for (std::size_t i = 0; i < times.size(); ++i) {
        const double x = 2.0 * (times[i] - times.front()) / (times.back() - times.front()) - 1.0;
        double acc = 0.0, xk = 1.0;
        for (int k = 0; k <= 30; ++k) {
            acc += 0.1 / (1.0 + k) * xk;
            xk *= x;
        }
        poly[i] = acc;
    }
    const DriftModel high = DriftModel::fit(times, poly, 30);
    double max_resid = 0.0;
    for (std::size_t i = 0; i < times.size(); ++i)
        max_resid = std::max(max_resid, std::abs(high.integrated(times[i]) - poly[i]));
    CHECK(max_resid < 1e-9);
}

TEST_CASE("constant series dedrifts to zero residual") {
    const int start = month_from_iso("1900-01");
    std::vector<int> months;
    std::vector<double> logp;
    for (int i = 0; i < 240; ++i) {
        months.push_back(start + i);
        logp.push_back(1.234);
    }
    const DriftModel drift = fit_drift(months, logp);
    const auto resid = dedrift(months, logp, drift);
    for (double r : resid) CHECK(std::abs(r) < 1e-12);
}

TEST_CASE("dedrift and redrift round trip") {
    const int start = month_from_iso("1850-06");
    std::vector<int> months;
    std::vector<double> logp;
    std::mt19937_64 rng(17);
    std::normal_distribution<double> noise(0.0, 0.2);
    for (int i = 0; i < 600; ++i) {
        months.push_back(start + i);
        logp.push_back(2.0 + 0.001 * i + noise(rng));
    }
    const DriftModel drift = fit_drift(months, logp);
    const auto ddr = dedrift(months, logp, drift);
    const auto back = redrift(months, ddr, drift);
    for (std::size_t i = 0; i < logp.size(); ++i) CHECK(std::abs(back[i] - logp[i]) < 1e-12);

    // Zero drift is the identity.
    const DriftModel none = DriftModel::zero(months.front(), months.back());
    const auto same = dedrift(months, logp, none);
    for (std::size_t i = 0; i < logp.size(); ++i) CHECK(same[i] == logp[i]);

    // Residual mean vanishes (the fit contains the constant).
    double mean = 0.0;
    for (double r : ddr) mean += r;
    mean /= static_cast<double>(ddr.size());
    CHECK(std::abs(mean) < 1e-9);
}

TEST_CASE("drift evaluation outside the domain is rejected") {
    const DriftModel d = DriftModel::constant_slope(0.01, 0.0, 100.0);
    CHECK_NOTHROW(d.integrated(0.0));
    CHECK_NOTHROW(d.integrated(100.0));
    CHECK_THROWS_AS(d.integrated(101.0), std::domain_error);
    CHECK_THROWS_AS(d.slope(-2.0), std::domain_error);
    CHECK(d.slope(50.0) == doctest::Approx(0.01).epsilon(1e-12));
}

TEST_CASE("price CSV round trip with CPI column") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "chiarella_series_test";
    fs::create_directories(dir);
    {
        std::ofstream os(dir / "asset.csv");
        os << "date,price,cpi\n1950-01,100.0,10\n1950-02,101.5,11\n1950-03,99.25,12\n";
    }
    const RawSeries s = read_price_csv((dir / "asset.csv").string(), "X");
    CHECK(s.months.size() == 3);
    CHECK(s.prices[1] == doctest::Approx(101.5));
    CHECK(s.cpi[2] == doctest::Approx(12.0));

    {
        std::ofstream os(dir / "asset2.csv");
        os << "date,price\n1950-01,100.0\n1950-02,101.5\n";
        std::ofstream cs(dir / "cpi.csv");
        cs << "date,cpi\n1950-01,7\n1950-02,8\n";
    }
    RawSeries s2 = read_price_csv((dir / "asset2.csv").string(), "Y");
    attach_cpi_csv(s2, (dir / "cpi.csv").string());
    CHECK(s2.cpi == std::vector<double>{7.0, 8.0});

    std::ofstream bad(dir / "cpi_bad.csv");
    bad << "date,cpi\n1950-01,7\n1950-03,8\n";
    bad.close();
    CHECK_THROWS_AS(attach_cpi_csv(s2, (dir / "cpi_bad.csv").string()), std::invalid_argument);
}

TEST_CASE("prepare_series pipeline and clean CSV export") {
    namespace fs = std::filesystem;
    RawSeries s;
    s.id = "pipe";
    const int start = month_from_iso("1900-01");
    std::mt19937_64 rng(5);
    std::normal_distribution<double> noise(0.0, 0.03);
    for (int i = 0; i < 360; ++i) {
        s.months.push_back(start + i);
        s.prices.push_back(std::exp(1.0 + 0.002 * i + noise(rng)));
    }
    const CleanSeries clean = prepare_series(s, {});
    CHECK(clean.size() == 360);
    CHECK(clean.drift.order() == 2);  // 29 whole years
    for (std::size_t i = 0; i < clean.size(); ++i)
        CHECK(clean.dedrifted[i] ==
              doctest::Approx(clean.logp[i] -
                              clean.drift.integrated(static_cast<double>(clean.months[i])))
                  .epsilon(1e-14));

    const fs::path out = fs::temp_directory_path() / "chiarella_clean_test.csv";
    clean.write_csv(out.string());
    std::ifstream is(out);
    std::string header;
    std::getline(is, header);
    CHECK(header == "date,logp,G,dedrifted");
}
