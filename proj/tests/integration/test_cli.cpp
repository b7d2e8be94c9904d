#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "volsynth/ingest.hpp"
#include "volsynth/simlab.hpp"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

using namespace volsynth;
namespace fs = std::filesystem;

namespace {

const fs::path kData = VOLSYNTH_TEST_DATA;
const std::string kCli = VOLSYNTH_CLI_PATH;

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "volsynth_test_cli" / name;
    fs::remove_all(dir);
    fs::create_directories(dir.parent_path());
    return dir;
}

int run(const std::string& args) {
    const std::string cmd = kCli + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
    std::ifstream in(p);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        rows.push_back(cells);
    }
    return rows;
}

}  // namespace

TEST_CASE("simulate is reproducible and loadable") {
    const auto a = scratch("sim_a");
    const auto b = scratch("sim_b");
    CHECK(run("simulate --sim_length 150 --seed 4 --out " + a.string()) == 0);
    CHECK(run("simulate --sim_length 150 --seed 4 --out " + b.string()) == 0);
    CHECK(slurp(a / "panel.csv") == slurp(b / "panel.csv"));
    CHECK(slurp(a / "ground_truth.csv") == slurp(b / "ground_truth.csv"));
    const auto panel = load_panel(a / "panel.csv");
    CHECK(panel.rows() == 150);
    CHECK(read_csv(a / "ground_truth.csv").size() == 151);
    CHECK(fs::exists(a / "resolved_config.ini"));
}

TEST_CASE("summarize") {
    const auto out = scratch("summ_const");
    CHECK(run("summarize --input " + (kData / "constant_price.csv").string() + " --out " + out.string()) == 0);
    const auto rows = read_csv(out / "summary.csv");
    REQUIRE(rows.size() == 3);
    CHECK(rows[1][0] == "returns");
    for (std::size_t i = 1; i < rows[1].size(); ++i) CHECK(std::stod(rows[1][i]) == 0.0);

    const auto sim_out = scratch("summ_sim");
    CHECK(run("summarize --sim_length 200 --seed 2 --out " + sim_out.string()) == 0);
    const auto srows = read_csv(sim_out / "summary.csv");
    REQUIRE(srows.size() == 8);  // header, returns, six measures

    // Values match the library's summary of the same columns.
    const auto sim = scratch("summ_sim_panel");
    CHECK(run("simulate --sim_length 200 --seed 2 --out " + sim.string()) == 0);
    const auto panel = load_panel(sim / "panel.csv");
    const auto s = summarize(panel.raw_returns);
    CHECK(std::stod(srows[1][1]) == s.mean);
    CHECK(std::stod(srows[1][7]) == s.excess_kurtosis);
    const Eigen::VectorXd l3 = panel.measures.col(2).array().log();
    CHECK(std::stod(srows[4][2]) == summarize(l3).std_dev);
}

TEST_CASE("fit recovers GARCH and repeats identically") {
    const auto r = sim::simulate_garch({0.05, 0.1, 0.85}, 5000, 7);
    const Eigen::MatrixXd m = r.array().square().matrix() + Eigen::VectorXd::Constant(r.size(), 0.01);
    const auto panel = panel_from_returns(std::span<const double>(r.data(), static_cast<std::size_t>(r.size())), m,
                                          {"rv"});
    const auto dir = scratch("fit");
    fs::create_directories(dir);
    write_panel(panel, dir / "panel.csv");
    const auto out = dir / "out";
    CHECK(run("fit --input " + (dir / "panel.csv").string() + " --models GARCH,GARCH-X --split 0.95 --out " +
              out.string()) == 0);
    const auto fits = slurp(out / "fits.json");
    CHECK(fits.find("\"GARCH\"") != std::string::npos);
    const auto garch = slurp(out / "fit_GARCH.json");
    CHECK(!garch.empty());

    const auto out2 = dir / "out2";
    CHECK(run("fit --input " + (dir / "panel.csv").string() + " --models GARCH,GARCH-X --split 0.95 --out " +
              out2.string()) == 0);
    CHECK(slurp(out2 / "fit_GARCH.json") == garch);
}

TEST_CASE("backtest smoke run and determinism") {
    const auto a = scratch("bt_a");
    const std::string args = " --sim_length 220 --seed 3 --window 200 --horizon 1 --models GARCH,RV-RG,PC-RG,AVG-RG";
    CHECK(run("backtest" + args + " --out " + a.string()) == 0);
    const auto rows = read_csv(a / "records.csv");
    REQUIRE(rows.size() == 5);
    CHECK(rows[0] == std::vector<std::string>{"date", "model", "sigma2_hat", "return", "contribution", "degenerate"});
    CHECK(fs::exists(a / "comparison.csv"));
    CHECK(fs::exists(a / "comparison.json"));
    CHECK(fs::exists(a / "params_PC-RG.csv"));

    const auto b = scratch("bt_b");
    CHECK(run("backtest --config " + (a / "resolved_config.ini").string() + " --out " + b.string()) == 0);
    for (const auto* f : {"records.csv", "comparison.csv", "comparison.json", "params_GARCH.csv"}) {
        CHECK(slurp(a / f) == slurp(b / f));
    }
}

TEST_CASE("config file with overrides") {
    const auto dir = scratch("ini");
    fs::create_directories(dir);
    {
        std::ofstream ini(dir / "exp.ini");
        ini << "[simulation]\nsim_length = 230\n\n[models]\nmodels = GARCH\n\n[rolling]\nwindow = 200\nhorizon = 5\n";
    }
    CHECK(run("backtest --config " + (dir / "exp.ini").string() + " --horizon 3 --out " + (dir / "o").string()) == 0);
    CHECK(read_csv(dir / "o" / "records.csv").size() == 4);
    const auto resolved = slurp(dir / "o" / "resolved_config.ini");
    CHECK(resolved.find("horizon = 3") != std::string::npos);
    CHECK(resolved.find("ae_rho = 0.05") != std::string::npos);
}

TEST_CASE("audit command") {
    const auto out = scratch("audit");
    CHECK(run("audit --sim_length 300 --window 200 --horizon 100 --models GARCH,AVG-RG --out " + out.string()) == 0);
    CHECK(slurp(out / "audit.json").find("\"passed\": true") != std::string::npos);
    const auto leak = scratch("audit_leak");
    CHECK(run("audit --sim_length 300 --window 200 --horizon 100 --models GARCH --demean full --out " +
              leak.string()) == 5);
}

TEST_CASE("exit codes") {
    const auto out = scratch("codes");
    CHECK(run("summarize --out " + out.string()) == 2);  // no data source
    CHECK(run("summarize --input " + (kData / "missing.csv").string() + " --out " + out.string()) == 3);
    CHECK(run("backtest --sim_length 220 --models NOPE --out " + out.string()) == 2);
    CHECK(run("backtest --sim_length 220 --window 50 --out " + out.string()) == 2);
    CHECK(run("summarize --input " + (kData / "duplicate_dates.csv").string() + " --out " + out.string()) == 3);
    CHECK(run("fit --no-such-flag 1") == 2);
    CHECK(run("summarize --input x.csv --sim_length 10 --out " + out.string()) == 2);
    {
        std::ofstream bad(out.string() + ".ini");
        bad << "[data]\nwindow = 10\n";
    }
    CHECK(run("summarize --config " + out.string() + ".ini") == 2);
}
