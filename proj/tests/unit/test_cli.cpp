#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <map>
#include <string>

#include "sdsm/io.hpp"

namespace fs = std::filesystem;

namespace {

// Runs the built executable; returns its exit status.
int run_cli(const std::string& args) {
    const std::string cmd = std::string(SDSM_BINARY) + " " + args + " > /dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("sdsm_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()) + "_" +
                std::to_string(::getpid()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    fs::path config(const std::string& name, const std::string& json) const {
        const fs::path p = dir_ / name;
        sdsm::atomic_write(p, json);
        return p;
    }
    [[nodiscard]] std::string read(const fs::path& p) const { return sdsm::read_file(p); }

    // Small simulated dataset in dir_/sim.
    void simulate_small(std::size_t side = 12) {
        const auto c = config("sim.json", R"({"grid_rows": )" + std::to_string(side) + R"(, "grid_cols": )" +
                                              std::to_string(side) +
                                              R"(, "spectral_components": 300, "missing_fraction": 0.1, "seed": 5})");
        ASSERT_EQ(run_cli("simulate --config " + c.string() + " --out " + (dir_ / "sim").string()), 0);
    }

    fs::path dir_;
};

// Rows of a long-format design,n,metric,value table keyed by "design/n/metric".
std::map<std::string, double> long_table(const std::string& text) {
    std::map<std::string, double> out;
    sdsm::detail::LineReader lines(text);
    std::string_view line;
    std::vector<std::string_view> f;
    lines.next(line);
    while (lines.next(line)) {
        if (line.empty()) continue;
        sdsm::detail::split_fields(line, f);
        out[std::string(f[0]) + "/" + std::string(f[1]) + "/" + std::string(f[2])] = std::stod(std::string(f[3]));
    }
    return out;
}

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_F(Cli, SimulatePaperSetup) {
    const auto c = config("sim.json", R"({"missing_block": [60, 50, 25, 40], "spectral_components": 500, "seed": 3})");
    ASSERT_EQ(run_cli("simulate --config " + c.string() + " --out " + (dir_ / "a").string()), 0);
    ASSERT_EQ(run_cli("simulate --config " + c.string() + " --out " + (dir_ / "b").string()), 0);
    const sdsm::SpatialDataset d = sdsm::read_dataset(dir_ / "a" / "data.csv");
    EXPECT_EQ(d.size(), 10000u);
    EXPECT_EQ(d.size() - d.observed_count(), 3000u);
    for (const char* f : {"data.csv", "truth.csv", "truth_meta.json"})
        EXPECT_EQ(read(dir_ / "a" / f), read(dir_ / "b" / f)) << f;
    EXPECT_NE(read(dir_ / "a" / "truth_meta.json").find("\"masked\": 3000"), std::string::npos);
}

TEST_F(Cli, SimulateWithoutMissingness) {
    const auto c = config("sim.json", R"({"grid_rows": 8, "grid_cols": 9, "missing_fraction": 0, "spectral_components": 50})");
    ASSERT_EQ(run_cli("simulate --config " + c.string() + " --out " + dir_.string()), 0);
    const sdsm::SpatialDataset d = sdsm::read_dataset(dir_ / "data.csv");
    EXPECT_EQ(d.size(), 72u);
    EXPECT_EQ(d.observed_count(), 72u);
}

TEST_F(Cli, SeedOverrideChangesOutput) {
    const auto c = config("sim.json", R"({"grid_rows": 5, "grid_cols": 5, "spectral_components": 50})");
    ASSERT_EQ(run_cli("simulate --config " + c.string() + " --out " + (dir_ / "a").string()), 0);
    ASSERT_EQ(run_cli("simulate --config " + c.string() + " --seed 99 --out " + (dir_ / "b").string()), 0);
    EXPECT_NE(read(dir_ / "a" / "data.csv"), read(dir_ / "b" / "data.csv"));
}

TEST_F(Cli, FitWritesOutputsAndIsReproducible) {
    simulate_small();
    const auto one = config("fit1.json", R"({"data_path": "sim/data.csv", "n": 10, "G": 1, "burn_in": 0})");
    ASSERT_EQ(run_cli("fit --config " + one.string() + " --out " + (dir_ / "g1").string()), 0);
    for (const char* f : {"chain.csv", "predictions.csv", "timing.json"}) EXPECT_TRUE(fs::exists(dir_ / "g1" / f)) << f;

    const auto c = config("fit.json", R"({"data_path": "sim/data.csv", "n": 20, "G": 60, "burn_in": 20,
                                         "design": "stratified", "seed": 11})");
    ASSERT_EQ(run_cli("fit --config " + c.string() + " --chains 2 --out " + (dir_ / "a").string()), 0);
    ASSERT_EQ(run_cli("fit --config " + c.string() + " --chains 2 --out " + (dir_ / "b").string()), 0);
    EXPECT_EQ(read(dir_ / "a" / "chain.csv"), read(dir_ / "b" / "chain.csv"));
    EXPECT_EQ(read(dir_ / "a" / "predictions.csv"), read(dir_ / "b" / "predictions.csv"));
    EXPECT_EQ(line_count(read(dir_ / "a" / "chain.csv")), 1u + 2u * 40u);
    const sdsm::SpatialDataset d = sdsm::read_dataset(dir_ / "sim" / "data.csv");
    EXPECT_EQ(line_count(read(dir_ / "a" / "predictions.csv")), 1u + d.size() - d.observed_count());
}

TEST_F(Cli, EvaluateWritesScores) {
    simulate_small();
    const auto c = config("ev.json", R"({"data_path": "sim/data.csv", "truth_path": "sim/truth.csv",
                                        "n": 15, "G": 80, "burn_in": 20})");
    ASSERT_EQ(run_cli("evaluate --config " + c.string() + " --out " + dir_.string()), 0);
    const auto t = long_table(read(dir_ / "scores.csv"));
    ASSERT_EQ(t.size(), 5u);
    EXPECT_GE(t.at("srs/15/coverage"), 0.0);
    EXPECT_LE(t.at("srs/15/coverage"), 1.0);
    EXPECT_GE(t.at("srs/15/rmse"), t.at("srs/15/mae"));
}

TEST_F(Cli, SweepEmitsGapsAndPlots) {
    simulate_small();
    const auto c = config("sw.json", R"({"data_path": "sim/data.csv", "truth_path": "sim/truth.csv", "G": 40,
                                        "burn_in": 10, "n_list": [5, 10, 20], "sweep_designs": ["srs", "stratified"]})");
    ASSERT_EQ(run_cli("sweep --config " + c.string() + " --out " + dir_.string()), 0);
    const auto t = long_table(read(dir_ / "sweep.csv"));
    std::size_t gaps = 0;
    for (const auto& [k, v] : t) gaps += k.find("gap_from_previous") != std::string::npos ? 1 : 0;
    EXPECT_EQ(gaps, 4u);
    EXPECT_EQ(t.size(), 2u * 3u * 8u + 4u);
    for (const char* f : {"rmse_vs_n.svg", "time_vs_n.svg", "gap_vs_n.svg", "prediction_vs_truth.svg"}) {
        const std::string s = read(dir_ / f);
        EXPECT_EQ(s.rfind("<svg", 0), 0u) << f;
        EXPECT_EQ(s.find("href"), std::string::npos) << f;
    }

    const auto single = config("sw1.json", R"({"data_path": "sim/data.csv", "truth_path": "sim/truth.csv", "G": 40,
                                             "burn_in": 10, "n_list": [10]})");
    ASSERT_EQ(run_cli("sweep --config " + single.string() + " --out " + (dir_ / "one").string()), 0);
    EXPECT_EQ(long_table(read(dir_ / "one" / "sweep.csv")).size(), 8u);
}

TEST_F(Cli, PropertiesLimitsAndEquality) {
    // Even grid with quadrant strata of equal size and equal allocation.
    const auto c = config("pr.json", R"({"grid_rows": 6, "grid_cols": 6, "n": 8, "theta_tau2": 0.5,
                                        "theta_sigma2": 1.5, "true_mean": 0.25, "true_variance": 2, "true_nugget": 0.5})");
    ASSERT_EQ(run_cli("properties --config " + c.string() + " --out " + dir_.string()), 0);
    const std::string text = read(dir_ / "moments.csv");
    sdsm::detail::LineReader lines(text);
    std::string_view line;
    std::vector<std::string_view> f;
    lines.next(line);
    std::map<std::string, std::pair<std::string, std::string>> rows;  // design/n/index -> mean, variance
    while (lines.next(line)) {
        if (line.empty()) continue;
        sdsm::detail::split_fields(line, f);
        rows[std::string(f[0]) + "/" + std::string(f[1]) + "/" + std::string(f[2])] = {std::string(f[5]),
                                                                                       std::string(f[6])};
    }
    ASSERT_EQ(rows.size(), 2u * 3u * 36u);
    for (int i = 0; i < 36; ++i) {
        const std::string idx = "/" + std::to_string(i);
        EXPECT_EQ(rows["srs/0" + idx].first, "0.25");
        EXPECT_EQ(rows["srs/0" + idx].second, "2");
        EXPECT_EQ(rows["stratified/0" + idx].second, "2");
        EXPECT_EQ(rows["srs/36" + idx].second, "2");  // tau2 + sigma2
        EXPECT_EQ(rows["srs/8" + idx], rows["stratified/8" + idx]);
    }
    EXPECT_TRUE(fs::exists(dir_ / "variogram.csv"));
    EXPECT_TRUE(fs::exists(dir_ / "variogram.svg"));
    EXPECT_EQ(line_count(read(dir_ / "profile.csv")), 4u);
}

TEST_F(Cli, DiagnoseSelfComparison) {
    simulate_small();
    const auto c = config("dg.json", R"({"data_path": "sim/data.csv", "n": 20, "G": 200, "burn_in": 50, "k_list": [1]})");
    ASSERT_EQ(run_cli("diagnose --config " + c.string() + " --out " + dir_.string()), 0);
    const std::string t = read(dir_ / "ks_table.csv");
    EXPECT_EQ(line_count(t), 1u + 4u);
    EXPECT_NE(t.find("0,beta_1,1,0,"), std::string::npos);
    EXPECT_TRUE(fs::exists(dir_ / "density_tau2.svg"));

    const auto bad = config("bad.json", R"({"data_path": "sim/data.csv", "k_list": [5, 1]})");
    EXPECT_EQ(run_cli("diagnose --config " + bad.string() + " --out " + dir_.string()), 2);
}

TEST_F(Cli, ExitCodes) {
    EXPECT_EQ(run_cli("simulate --config " + config("u.json", R"({"grid_rowz": 3})").string()), 2);
    EXPECT_EQ(run_cli("simulate --config " + config("t.json", R"({"grid_rows": "x"})").string()), 2);
    EXPECT_EQ(run_cli("simulate --config " + config("j.json", "{ not json").string()), 2);
    EXPECT_EQ(run_cli("simulate --config " + (dir_ / "absent.json").string()), 2);
    EXPECT_EQ(run_cli("frobnicate --config x"), 2);
    EXPECT_EQ(run_cli("fit"), 2);
    EXPECT_EQ(run_cli("fit --config " + config("m.json", R"({"data_path": "nowhere.csv"})").string()), 3);
    sdsm::atomic_write(dir_ / "bad.csv", "x,y,value,stratum\n1,2,oops,0\n");
    EXPECT_EQ(run_cli("fit --config " + config("b.json", R"({"data_path": "bad.csv"})").string()), 3);
    simulate_small(5);
    EXPECT_EQ(run_cli("fit --config " + config("n.json", R"({"data_path": "sim/data.csv", "n": 500})").string() +
                   " --out " + dir_.string()),
              3);
    EXPECT_EQ(run_cli("--help"), 0);
}
