#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "volsynth/error.hpp"
#include "volsynth/ingest.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

using namespace volsynth;
namespace fs = std::filesystem;

namespace {

const fs::path kData = VOLSYNTH_TEST_DATA;

fs::path temp_file(const std::string& name) {
    auto dir = fs::temp_directory_path() / "volsynth_test_ingest";
    fs::create_directories(dir);
    return dir / name;
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

}  // namespace

TEST_CASE("invalid rows are dropped before returns are formed") {
    const auto panel = load_panel(kData / "panel_small.csv");
    REQUIRE(panel.rows() == 3);
    CHECK(panel.dims() == 2);
    CHECK(panel.measure_names == std::vector<std::string>{"rv", "bv"});
    CHECK(panel.dates == std::vector<std::string>{"2020-01-03", "2020-01-07", "2020-01-08"});
    CHECK(panel.base_date == "2020-01-02");
    CHECK(panel.base_close == 100.0);

    const double r0 = (std::log(101.0) - std::log(100.0)) * 100.0;
    const double r1 = (std::log(102.0) - std::log(101.0)) * 100.0;
    const double r2 = (std::log(103.0) - std::log(102.0)) * 100.0;
    CHECK(panel.raw_returns(0) == doctest::Approx(r0).epsilon(1e-14));
    CHECK(panel.raw_returns(1) == doctest::Approx(r1).epsilon(1e-14));
    CHECK(panel.raw_returns(2) == doctest::Approx(r2).epsilon(1e-14));
    const double m = (r0 + r1 + r2) / 3.0;
    CHECK(panel.returns(1) == doctest::Approx(r1 - m).epsilon(1e-12));
    CHECK(std::abs(panel.returns.sum()) < 1e-12);
    CHECK(panel.measures(1, 0) == 1.5);
    CHECK(panel.measures(2, 1) == 0.8);
}

TEST_CASE("rows are sorted by date on load") {
    const auto p = temp_file("unsorted.csv");
    write_file(p,
               "date,close,m\n"
               "2020-01-06,103,1.0\n"
               "2020-01-02,100,\n"
               "2020-01-03,101,2.0\n"
               "2020-01-07,104,3.0\n");
    const auto panel = load_panel(p);
    REQUIRE(panel.rows() == 3);
    CHECK(panel.dates.front() == "2020-01-03");
    CHECK(panel.measures(0, 0) == 2.0);
    CHECK(panel.raw_returns(1) == doctest::Approx(100.0 * std::log(103.0 / 101.0)).epsilon(1e-13));
}

TEST_CASE("load errors") {
    CHECK_THROWS_AS(load_panel(kData / "duplicate_dates.csv"), DataError);
    ColumnMap cols;
    cols.measures = {"missing"};
    CHECK_THROWS_AS(load_panel(kData / "panel_small.csv", cols), ConfigError);
    cols = {};
    cols.close = "price";
    CHECK_THROWS_AS(load_panel(kData / "panel_small.csv", cols), ConfigError);
    CHECK_THROWS_AS(load_panel(kData / "does_not_exist.csv"), DataError);

    const auto few = temp_file("few.csv");
    write_file(few, "date,close,m\n2020-01-02,100,\n2020-01-03,101,1\n2020-01-06,-1,1\n");
    CHECK_THROWS_AS(load_panel(few), DataError);

    const auto bad_date = temp_file("bad_date.csv");
    write_file(bad_date, "date,close,m\n2020-13-02,100,\n2020-01-03,101,1\n2020-01-06,102,1\n2020-01-07,103,1\n");
    CHECK_THROWS_AS(load_panel(bad_date), DataError);
}

TEST_CASE("selected measure columns") {
    ColumnMap cols;
    cols.measures = {"bv"};
    const auto panel = load_panel(kData / "panel_small.csv", cols);
    CHECK(panel.dims() == 1);
    // The negative rv on 2020-01-06 no longer matters.
    CHECK(panel.rows() == 4);
}

TEST_CASE("write and reload is exact") {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> n(0.0, 1.3);
    std::uniform_real_distribution<double> u(0.1, 5.0);
    std::vector<double> r(60);
    Eigen::MatrixXd m(60, 3);
    for (int t = 0; t < 60; ++t) {
        r[static_cast<std::size_t>(t)] = n(rng);
        for (int d = 0; d < 3; ++d) m(t, d) = u(rng);
    }
    const auto panel = panel_from_returns(r, m, {"a", "b", "c"}, "2019-12-30", 2500.0);
    const auto p = temp_file("roundtrip.csv");
    write_panel(panel, p);
    const auto back = load_panel(p);
    REQUIRE(back.rows() == panel.rows());
    CHECK(back.dates == panel.dates);
    CHECK(back.base_date == panel.base_date);
    CHECK((back.raw_returns.array() == panel.raw_returns.array()).all());
    CHECK((back.returns.array() == panel.returns.array()).all());
    CHECK((back.measures.array() == panel.measures.array()).all());
    CHECK((back.close.array() == panel.close.array()).all());
    for (int t = 0; t < 60; ++t) CHECK(panel.raw_returns(t) == doctest::Approx(r[static_cast<std::size_t>(t)]));
}

TEST_CASE("split by fraction and by date") {
    std::vector<double> r(10, 0.5);
    r[3] = -1.0;
    const Eigen::MatrixXd m = Eigen::MatrixXd::Ones(10, 1);
    const auto panel = panel_from_returns(r, m, {"x"}, "2020-01-06");
    auto [in, out] = split(panel, 0.75);
    CHECK(in.rows() == 7);
    CHECK(out.rows() == 3);
    CHECK(std::abs(in.returns.sum()) < 1e-12);
    CHECK(std::abs(out.returns.sum()) < 1e-12);
    CHECK(out.dates.front() == panel.dates[7]);
    CHECK_THROWS_AS(split(panel, 0.95), ConfigError);
    CHECK_THROWS_AS(split(panel, 0.1), ConfigError);

    auto [a, b] = split_at_date(panel, panel.dates[4]);
    CHECK(a.rows() == 4);
    CHECK(b.dates.front() == panel.dates[4]);
    // A weekend date falls between rows.
    auto [c, d] = split_at_date(panel, "2020-01-11");
    CHECK(c.rows() == 4);
    CHECK(d.dates.front() == "2020-01-13");
}

TEST_CASE("slice re-de-means") {
    std::vector<double> r = {1, 2, 3, 4, 5, 6};
    const Eigen::MatrixXd m = Eigen::MatrixXd::Constant(6, 2, 2.0);
    const auto panel = panel_from_returns(r, m, {"x", "y"});
    const auto s = slice_panel(panel, 2, 3);
    REQUIRE(s.rows() == 3);
    CHECK(s.returns(0) == doctest::Approx(-1.0));
    CHECK(s.returns(2) == doctest::Approx(1.0));
    CHECK_THROWS(slice_panel(panel, 4, 3));
}

TEST_CASE("summary statistics") {
    const std::vector<double> x = {2.0, -1.0, 4.0, 0.5, 3.0, 7.5};
    const auto s = summarize(x);
    const double n = 6.0;
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= n;
    double m2 = 0.0, m3 = 0.0, m4 = 0.0;
    for (double v : x) {
        m2 += (v - mean) * (v - mean);
        m3 += std::pow(v - mean, 3);
        m4 += std::pow(v - mean, 4);
    }
    const double sd = std::sqrt(m2 / (n - 1.0));
    CHECK(s.mean == doctest::Approx(mean).epsilon(1e-14));
    CHECK(s.std_dev == doctest::Approx(sd).epsilon(1e-14));
    CHECK(s.median == doctest::Approx(2.5));
    CHECK(s.min == -1.0);
    CHECK(s.max == 7.5);
    CHECK(s.skewness == doctest::Approx((m3 / n) / std::pow(sd, 3)).epsilon(1e-12));
    CHECK(s.excess_kurtosis == doctest::Approx((m4 / n) / std::pow(sd, 4) - 3.0).epsilon(1e-12));

    const std::vector<double> flat = {3.0, 3.0, 3.0};
    const auto f = summarize(flat);
    CHECK(f.std_dev == 0.0);
    CHECK(f.skewness == 0.0);
    CHECK(f.excess_kurtosis == 0.0);

    const std::vector<double> one = {1.0};
    CHECK_THROWS_AS(summarize(one), DataError);
}

TEST_CASE("business days skip weekends") {
    const auto d = business_days("2021-01-01", 4);  // a Friday
    CHECK(d == std::vector<std::string>{"2021-01-01", "2021-01-04", "2021-01-05", "2021-01-06"});
    const auto e = business_days("2021-01-02", 1);  // Saturday
    CHECK(e.front() == "2021-01-04");
    CHECK_THROWS_AS(check_iso_date("2021-02-29"), DataError);
    CHECK_NOTHROW(check_iso_date("2020-02-29"));
}

TEST_CASE("format_double round trips") {
    for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 123456789.123, 0.0}) {
        CHECK(std::stod(format_double(v)) == v);
    }
}
