#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#ifndef UNIDRF_CLI
#error "UNIDRF_CLI must point at the command-line binary"
#endif

namespace fs = std::filesystem;

namespace {

class CliTest : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        root_ = fs::temp_directory_path() / ("unidrf_cli_test_" + std::to_string(::getpid()));
        fs::remove_all(root_);
        fs::create_directories(root_);
        ASSERT_EQ(run("simulate --dgp DGP1L --n 400 --seed 3 --export " + data()), 0);
    }
    static void TearDownTestSuite() { fs::remove_all(root_); }

    static std::string data() { return (root_ / "data.csv").string(); }
    static std::string dir(const std::string& name) { return (root_ / name).string(); }

    static int run(const std::string& args) {
        const std::string cmd = std::string(UNIDRF_CLI) + " " + args + " > " + (root_ / "stdout.txt").string() +
                                " 2> " + (root_ / "stderr.txt").string();
        const int status = std::system(cmd.c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    }

    static std::string slurp(const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }

    static std::vector<std::vector<std::string>> read_rows(const fs::path& p) {
        std::ifstream in(p);
        std::vector<std::vector<std::string>> rows;
        std::string line;
        while (std::getline(in, line)) {
            std::vector<std::string> fields;
            std::stringstream ls(line);
            std::string f;
            while (std::getline(ls, f, ',')) fields.push_back(f);
            rows.push_back(fields);
        }
        return rows;
    }

    static std::string common() { return "-i " + data() + " --t-col t --y-col y --seed 5"; }

    static fs::path root_;
};

fs::path CliTest::root_;

TEST_F(CliTest, EstimateWritesCurveOnDefaultGrid) {
    ASSERT_EQ(run("estimate " + common() + " --tuning fixed --bandwidth 0.1 -o " + dir("est")), 0);
    const auto rows = read_rows(fs::path(dir("est")) / "curve.csv");
    ASSERT_EQ(rows.size(), 26u);
    EXPECT_EQ(rows[0], (std::vector<std::string>{"t", "g", "gprime"}));
    EXPECT_TRUE(fs::exists(fs::path(dir("est")) / "meta.json"));
}

TEST_F(CliTest, MissingColumnExitsWithInputError) {
    EXPECT_EQ(run("estimate -i " + data() + " --t-col dose --y-col y -o " + dir("bad")), 2);
    EXPECT_NE(slurp(root_ / "stderr.txt").find("dose"), std::string::npos);
}

TEST_F(CliTest, MissingFileAndBadConfigExitCodes) {
    EXPECT_EQ(run("estimate -i " + dir("nope.csv") + " --t-col t --y-col y -o " + dir("bad")), 2);
    EXPECT_EQ(run("estimate " + common() + " --loss cubic -o " + dir("bad")), 3);
    EXPECT_EQ(run("estimate " + common() + " --no-such-flag"), 3);
}

TEST_F(CliTest, BandRerunsAreByteIdentical) {
    const std::string args = "band " + common() + " -B 100 --tuning fixed --bandwidth 0.1 --levels 0.95 0.99";
    ASSERT_EQ(run(args + " -o " + dir("b1")), 0);
    ASSERT_EQ(run(args + " --threads 2 -o " + dir("b2")), 0);
    for (const char* f : {"band.csv", "band_99.csv"}) {
        const std::string a = slurp(fs::path(dir("b1")) / f);
        EXPECT_FALSE(a.empty());
        EXPECT_EQ(a, slurp(fs::path(dir("b2")) / f)) << f;
    }
}

TEST_F(CliTest, WiderLevelEnclosesNarrowerBand) {
    ASSERT_EQ(run("band " + common() + " -B 100 --tuning fixed --bandwidth 0.1 --levels 0.95 0.99 -o " + dir("nest")),
              0);
    const auto b95 = read_rows(fs::path(dir("nest")) / "band.csv");
    const auto b99 = read_rows(fs::path(dir("nest")) / "band_99.csv");
    ASSERT_EQ(b95.size(), 26u);
    ASSERT_EQ(b99.size(), 26u);
    EXPECT_EQ(b95[0], (std::vector<std::string>{"t", "center", "sigma", "lower", "upper"}));
    for (std::size_t r = 1; r < b95.size(); ++r) {
        EXPECT_LE(std::stod(b99[r][3]), std::stod(b95[r][3]));
        EXPECT_GE(std::stod(b99[r][4]), std::stod(b95[r][4]));
    }
}

TEST_F(CliTest, TestCommandWritesVerdict) {
    ASSERT_EQ(run("test " + common() + " -B 100 --tuning fixed --bandwidth 0.1 --null 0 -o " + dir("verdict")), 0);
    const std::string v = slurp(fs::path(dir("verdict")) / "verdict.json");
    EXPECT_NE(v.find("\"reject\""), std::string::npos);
}

TEST_F(CliTest, DiagnoseConstantBasisGivesUnitWeights) {
    ASSERT_EQ(run("diagnose " + common() + " --k1 0 --k2 0 -o " + dir("diag")), 0);
    const auto rows = read_rows(fs::path(dir("diag")) / "weights.csv");
    ASSERT_EQ(rows.size(), 401u);
    for (std::size_t r = 1; r < rows.size(); ++r) EXPECT_NEAR(std::stod(rows[r][1]), 1.0, 1e-12);
    EXPECT_TRUE(fs::exists(fs::path(dir("diag")) / "diagnostics.json"));
}

TEST_F(CliTest, TuneEmitsDistanceProfile) {
    ASSERT_EQ(run("tune " + common() + " -B 60 --cv-count 6 -o " + dir("tune")), 0);
    const auto rows = read_rows(fs::path(dir("tune")) / "distance_profile.csv");
    ASSERT_GT(rows.size(), 2u);
    EXPECT_EQ(rows[0], (std::vector<std::string>{"target", "j", "h", "distance"}));
    EXPECT_TRUE(fs::exists(fs::path(dir("tune")) / "tuning.json"));
}

}  // namespace
