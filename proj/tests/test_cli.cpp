#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli_app.hpp"

namespace fs = std::filesystem;
using relperf::json;

namespace {

struct Cli {
    fs::path dir;
    std::ostringstream out, err;

    Cli() {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        dir = fs::temp_directory_path() / (std::string("relperf_cli_") + info->name());
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    ~Cli() { fs::remove_all(dir); }

    fs::path write(const std::string& name, const json& j) const {
        const auto p = dir / name;
        std::ofstream(p) << j.dump(2);
        return p;
    }

    int run(std::vector<std::string> args) {
        out.str("");
        err.str("");
        args.insert(args.begin(), "relperf");
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        return relperf::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    }

    std::string read(const std::string& name) const {
        std::ifstream f(dir / name);
        std::stringstream ss;
        ss << f.rdbuf();
        return ss.str();
    }

    // CSV rows without the optional comment line, split on commas
    std::vector<std::vector<std::string>> csv(const std::string& name) const {
        std::vector<std::vector<std::string>> rows;
        std::istringstream in(read(name));
        for (std::string line; std::getline(in, line);) {
            if (line.empty() || line[0] == '#') continue;
            std::vector<std::string> r;
            std::stringstream ls(line);
            for (std::string c; std::getline(ls, c, ',');) r.push_back(c);
            rows.push_back(r);
        }
        return rows;
    }
};

json two_agent() {
    return {{"population",
             {{{"delta", 1.0}, {"theta", 0.5}, {"mu", 1.0}, {"nu", 0.0}, {"sigma", 1.0}},
              {{"delta", 1.0}, {"theta", 0.5}, {"mu", 1.0}, {"nu", 0.0}, {"sigma", 1.0}}}},
            {"discount", {{"variant", "hyperbolic"}, {"rho", 0.1}, {"beta", 1.0}}},
            {"grid", {{"t0", 0.0}, {"T", 2.0}, {"n_points", 21}}}};
}

json hetero() {
    auto j = two_agent();
    j["population"] = {{{"delta", 1.0}, {"theta", 0.5}, {"mu", 1.0}, {"nu", 1.0}, {"sigma", 1.0}},
                       {{"delta", 2.0}, {"theta", 0.2}, {"mu", 0.5}, {"nu", 0.0}, {"sigma", 1.0}}};
    return j;
}

}  // namespace

TEST(Cli, EquilibriumSingleStockInvestment) {
    Cli c;
    const auto cfg = c.write("two_agent.json", two_agent());
    ASSERT_EQ(c.run({"--deterministic", "--out", c.dir.string(), "equilibrium", "--config", cfg.string()}), 0);
    const auto rows = c.csv("equilibrium.csv");
    ASSERT_EQ(rows[0], (std::vector<std::string>{"agent_id", "t", "pi", "c_slope", "c_intercept"}));
    EXPECT_EQ(rows.size(), 1u + 2u * 21u);
    EXPECT_EQ(rows[1][0], "0");
    EXPECT_NEAR(std::stod(rows[1][1]), 0.0, 0.0);
    EXPECT_NEAR(std::stod(rows[1][2]), 6.0, 1e-12);
    EXPECT_NEAR(std::stod(rows[1][3]), 1.0 / 3.0, 1e-15);
    const auto summary = json::parse(c.out.str());
    EXPECT_NEAR(summary["psi_n"].get<double>(), 0.5, 1e-15);
}

TEST(Cli, ValidationErrorExitsOne) {
    Cli c;
    auto j = two_agent();
    j["population"][1]["theta"] = 1.0;
    const auto cfg = c.write("bad.json", j);
    EXPECT_EQ(c.run({"--out", c.dir.string(), "equilibrium", "--config", cfg.string()}), 1);
    EXPECT_NE(c.err.str().find("theta"), std::string::npos);
    EXPECT_EQ(c.run({"equilibrium", "--config", (c.dir / "missing.json").string()}), 1);
    EXPECT_EQ(c.run({"no-such-command"}), 1);
    EXPECT_EQ(c.run({}), 1);
}

TEST(Cli, MalformedJsonExitsOne) {
    Cli c;
    std::ofstream(c.dir / "broken.json") << "{ \"population\": [";
    EXPECT_EQ(c.run({"equilibrium", "--config", (c.dir / "broken.json").string()}), 1);
    auto j = two_agent();
    j["discount"] = {{"variant", "quasi"}};
    EXPECT_EQ(c.run({"equilibrium", "--config", c.write("v.json", j).string()}), 1);
}

TEST(Cli, NonConvergenceExitsTwoWithDiagnostics) {
    Cli c;
    const auto cfg = c.write("h.json", hetero());
    EXPECT_EQ(c.run({"--deterministic", "--out", c.dir.string(), "best-response", "--config", cfg.string(),
                     "--max-iter", "2"}),
              2);
    const auto diag = json::parse(c.err.str());
    EXPECT_FALSE(diag["converged"].get<bool>());
    EXPECT_EQ(diag["iterations"].get<int>(), 2);
}

TEST(Cli, BestResponseConverges) {
    Cli c;
    const auto cfg = c.write("h.json", hetero());
    ASSERT_EQ(c.run({"--deterministic", "--out", c.dir.string(), "best-response", "--config", cfg.string()}), 0);
    const auto rep = json::parse(c.read("iteration_report.json"));
    EXPECT_TRUE(rep["converged"].get<bool>());
    EXPECT_LE(rep["sup_gap_to_closed_form"].get<double>(), 1e-8);
    EXPECT_EQ(c.csv("best_response.csv")[0].size(), 6u);
}

TEST(Cli, MfgWritesAggregatesAndEffectiveDelta) {
    Cli c;
    json j = {{"type_distribution",
               {{{"delta", 0.5}, {"theta", 0.5}, {"mu", 1.0}, {"sigma", 1.0}, {"weight", 0.5}},
                {{"delta", 1.5}, {"theta", 0.5}, {"mu", 1.0}, {"sigma", 1.0}, {"weight", 0.5}}}},
              {"discount", {{"variant", "exponential"}, {"rho", 0.1}}},
              {"grid", {{"T", 2.0}, {"n_points", 11}}}};
    ASSERT_EQ(c.run({"--deterministic", "--out", c.dir.string(), "mfg", "--config", c.write("m.json", j).string()}),
              0);
    const auto s = json::parse(c.read("mfg.json"));
    EXPECT_NEAR(s["atoms"][0]["delta_hat"].get<double>(), 1.5, 1e-15);
    EXPECT_NEAR(s["psi"].get<double>(), 0.5, 1e-15);
    EXPECT_EQ(c.csv("mfg.csv").size(), 1u + 22u);
}

TEST(Cli, FiguresSchemaAndDeterminism) {
    Cli c;
    ASSERT_EQ(c.run({"--deterministic", "--out", c.dir.string(), "figures", "--rho", "0.1", "--betas", "0.5,1,2"}), 0);
    const auto first = c.read("fig1.csv");
    const auto rows = c.csv("fig1.csv");
    EXPECT_EQ(rows[0], (std::vector<std::string>{"t", "beta", "avg_consumption"}));
    EXPECT_EQ(rows.size(), 1u + 3u * 201u);
    EXPECT_EQ(c.csv("fig2.csv")[0], (std::vector<std::string>{"t", "e_delta_hat", "avg_consumption"}));
    EXPECT_EQ(first.substr(0, 2), "t,");

    ASSERT_EQ(c.run({"--deterministic", "--out", c.dir.string(), "figures"}), 0);
    EXPECT_EQ(c.read("fig1.csv"), first);
    ASSERT_EQ(c.run({"--out", c.dir.string(), "figures"}), 0);
    EXPECT_EQ(c.read("fig1.csv").rfind("# generated ", 0), 0u);
}

TEST(Cli, FigureOneExponentialStartValue) {
    Cli c;
    ASSERT_EQ(c.run({"--deterministic", "--out", c.dir.string(), "figures", "--betas", "0"}), 0);
    const auto rows = c.csv("fig1.csv");
    EXPECT_NEAR(std::stod(rows[1][2]), 4.133333333333333, 1e-9);
}

TEST(Cli, SpikeTestZeroSpike) {
    Cli c;
    auto j = hetero();
    j["sim"] = {{"n_paths", 200}, {"dt", 0.01}, {"seed", 7}};
    j["x0"] = {1.0, 1.0};
    ASSERT_EQ(c.run({"--deterministic", "--out", c.dir.string(), "spike-test", "--config",
                     c.write("s.json", j).string(), "--v", "0,0", "--t", "0,1", "--eps", "0.1,0.05"}),
              0);
    const auto s = json::parse(c.read("spike.json"));
    EXPECT_EQ(s["verdict"], "PASS");
    std::size_t rows = 0;
    for (const auto& r : s["reports"])
        for (const auto& e : r["entries"]) {
            EXPECT_EQ(e["slope"].get<double>(), 0.0);
            ++rows;
        }
    EXPECT_EQ(rows, 2u * 2u * 2u);
}

TEST(Cli, SpikeTestBadEpsExitsOne) {
    Cli c;
    auto j = hetero();
    j["sim"] = {{"n_paths", 10}, {"dt", 0.01}};
    EXPECT_EQ(c.run({"--out", c.dir.string(), "spike-test", "--config", c.write("s.json", j).string(), "--eps",
                     "0.05,0.1"}),
              1);
}

TEST(Cli, SimulateWritesPathsAndMomentSummary) {
    Cli c;
    auto j = hetero();
    j["sim"] = {{"n_paths", 4000}, {"dt", 0.01}, {"seed", 3}, {"record_stride", 50}};
    j["x0"] = {1.0, 2.0};
    const auto cfg = c.write("s.json", j);
    ASSERT_EQ(c.run({"--deterministic", "--out", c.dir.string(), "simulate", "--config", cfg.string(),
                     "--export-paths", "3"}),
              0);
    const auto rows = c.csv("paths.csv");
    EXPECT_EQ(rows[0], (std::vector<std::string>{"path_id", "t", "agent_id", "wealth", "consumption"}));
    EXPECT_EQ(rows.size(), 1u + 3u * 5u * 2u);
    const auto s = json::parse(c.read("moments.json"));
    EXPECT_EQ(s["n_paths"].get<int>(), 4000);
    const auto before = c.read("paths.csv");
    ASSERT_EQ(c.run({"--deterministic", "--out", c.dir.string(), "simulate", "--config", cfg.string(),
                     "--export-paths", "3"}),
              0);
    EXPECT_EQ(c.read("paths.csv"), before);
}

TEST(Cli, VerifyPasses) {
    Cli c;
    EXPECT_EQ(c.run({"verify"}), 0);
    EXPECT_EQ(c.out.str().find("FAIL"), std::string::npos);
    EXPECT_NE(c.out.str().find("PASS"), std::string::npos);
}
