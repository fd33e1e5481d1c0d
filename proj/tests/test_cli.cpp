#include "emns/cli.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace emns;
namespace fs = std::filesystem;

namespace {

struct Workdir {
    fs::path root;
    Workdir() {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        root = fs::temp_directory_path() / (std::string("emns_cli_") + info->name());
        fs::remove_all(root);
        fs::create_directories(root);
    }
    ~Workdir() { fs::remove_all(root); }

    fs::path write(const std::string& name, const std::string& text) const {
        std::ofstream(root / name) << text;
        return root / name;
    }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct Outcome {
    int code;
    std::string log;
};

Outcome run_cli(const std::string& args, const fs::path& log_path) {
    const std::string cmd = std::string(EMNS_CLI_PATH) + " " + args + " 2> " + log_path.string();
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(log_path)};
}

const char* kShortScenario = R"({
  "name": "short",
  "duration": 0.5,
  "seed": 3,
  "noise_std_deg": 0.01,
  "agents": [{"position": [0.0, 0.0, 0.0], "initial": {"alpha_deg": 2.0}}],
  "controller": {"velocity_cutoff_hz": 40.0}
})";

}  // namespace

TEST(Cli, SimulateWritesOutputs) {
    Workdir w;
    const fs::path cfg = w.write("s.json", kShortScenario);
    const Outcome o = run_cli("simulate --config " + cfg.string() + " --out " + (w.root / "out").string(),
                              w.root / "log");
    ASSERT_EQ(o.code, kExitOk) << o.log;
    const std::string trace = slurp(w.root / "out" / "trace.csv");
    EXPECT_EQ(trace.substr(0, 2), "t,");
    // Header plus one row per tick.
    EXPECT_EQ(std::count(trace.begin(), trace.end(), '\n'), 1 + 101);
    const auto summary = nlohmann::json::parse(slurp(w.root / "out" / "summary.json"));
    EXPECT_EQ(summary["status"], "ok");
}

TEST(Cli, OutputsAreByteIdentical) {
    Workdir w;
    const fs::path cfg = w.write("s.json", kShortScenario);
    for (const char* d : {"a", "b"})
        ASSERT_EQ(run_cli("simulate --config " + cfg.string() + " --out " + (w.root / d).string(), w.root / "log").code,
                  kExitOk);
    EXPECT_EQ(slurp(w.root / "a" / "trace.csv"), slurp(w.root / "b" / "trace.csv"));
    EXPECT_EQ(slurp(w.root / "a" / "summary.json"), slurp(w.root / "b" / "summary.json"));
    ASSERT_EQ(run_cli("simulate --seed 4 --config " + cfg.string() + " --out " + (w.root / "c").string(),
                      w.root / "log")
                  .code,
              kExitOk);
    EXPECT_NE(slurp(w.root / "a" / "trace.csv"), slurp(w.root / "c" / "trace.csv"));
}

TEST(Cli, MalformedJsonReportsPosition) {
    Workdir w;
    const fs::path cfg = w.write("bad.json", "{\n  \"duration\": 1.0,\n  \"seed\": ,\n}\n");
    const Outcome o = run_cli("simulate --config " + cfg.string() + " --out " + (w.root / "o").string(), w.root / "log");
    EXPECT_EQ(o.code, kExitConfig);
    EXPECT_NE(o.log.find("line 3, column"), std::string::npos) << o.log;
}

TEST(Cli, SchemaErrorsNameTheField) {
    Workdir w;
    const fs::path unknown = w.write("u.json", R"({"agents": [{"position": [0, 0, 0]}], "durration": 1.0})");
    Outcome o = run_cli("simulate --config " + unknown.string() + " --out " + (w.root / "o").string(), w.root / "log");
    EXPECT_EQ(o.code, kExitConfig);
    EXPECT_NE(o.log.find("durration"), std::string::npos) << o.log;
    const fs::path wrong = w.write("w.json", R"({"agents": [{"position": [0, 0]}]})");
    o = run_cli("simulate --config " + wrong.string() + " --out " + (w.root / "o").string(), w.root / "log");
    EXPECT_EQ(o.code, kExitConfig);
    EXPECT_NE(o.log.find("/agents/0/position"), std::string::npos) << o.log;
}

TEST(Cli, UsageErrors) {
    Workdir w;
    EXPECT_EQ(run_cli("simulate --config " + (w.root / "missing.json").string() + " --out " + w.root.string(),
                      w.root / "log")
                  .code,
              kExitConfig);
    EXPECT_EQ(run_cli("frobnicate", w.root / "log").code, kExitConfig);
    EXPECT_EQ(run_cli("simulate --out x", w.root / "log").code, kExitConfig);
    EXPECT_EQ(run_cli("--help > /dev/null", w.root / "log").code, kExitOk);
}

TEST(Cli, DivergenceExitsNumerical) {
    Workdir w;
    const fs::path cfg = w.write("d.json", R"({
      "duration": 3.0,
      "emns": {"loop_latency": 0.1},
      "agents": [{"initial": {"alpha_deg": 3.0}}]
    })");
    const Outcome o = run_cli("simulate --config " + cfg.string() + " --out " + (w.root / "o").string(), w.root / "log");
    EXPECT_EQ(o.code, kExitNumerical) << o.log;
    const auto summary = nlohmann::json::parse(slurp(w.root / "o" / "summary.json"));
    EXPECT_EQ(summary["status"], "diverged");
    EXPECT_TRUE(fs::exists(w.root / "o" / "trace.csv"));
}

TEST(Cli, AllocationFailureExitsNumerical) {
    Workdir w;
    const fs::path cfg = w.write("a.json", R"({
      "model": "navion3",
      "duration": 1.0,
      "agents": [{"position": [-0.03, 0.05, 0.0]}, {"position": [0.03, 0.05, 0.0]}]
    })");
    const Outcome o = run_cli("simulate --config " + cfg.string() + " --out " + (w.root / "o").string(), w.root / "log");
    EXPECT_EQ(o.code, kExitNumerical) << o.log;
    EXPECT_EQ(nlohmann::json::parse(slurp(w.root / "o" / "summary.json"))["status"], "allocation_failure");
}

TEST(Cli, WorkspaceEmptyGrid) {
    Workdir w;
    const fs::path cfg = w.write("ws.json", R"({
      "model": "octomag8",
      "grid": {"min": [0.0, 0.0, 0.0], "max": [-0.01, 0.0, 0.0], "spacing": 0.01},
      "tasks": [{"kind": "fixed_field", "field_magnitude": 0.02}]
    })");
    const Outcome o = run_cli("workspace --config " + cfg.string() + " --out " + (w.root / "o").string(), w.root / "log");
    ASSERT_EQ(o.code, kExitOk) << o.log;
    EXPECT_EQ(slurp(w.root / "o" / "map_fixed_field.csv"), "x,y,z,fm,feasible,flag\n");
    EXPECT_EQ(nlohmann::json::parse(slurp(w.root / "o" / "map_fixed_field.json"))["points"], 0);
}

TEST(Cli, WorkspaceWorkersIdentical) {
    Workdir w;
    const fs::path cfg = w.write("ws.json", R"({
      "model": "octomag8",
      "grid": {"min": [-0.05, -0.05, -0.05], "max": [0.05, 0.05, 0.05], "spacing": 0.005},
      "tasks": [{"kind": "torque_box", "tau_bar": 0.01}, {"kind": "fixed_field", "field_magnitude": 0.03}]
    })");
    ASSERT_EQ(run_cli("workspace --config " + cfg.string() + " --out " + (w.root / "a").string(), w.root / "log").code,
              kExitOk);
    ASSERT_EQ(run_cli("workspace --workers 3 --config " + cfg.string() + " --out " + (w.root / "b").string(),
                      w.root / "log")
                  .code,
              kExitOk);
    for (const char* f : {"map_torque_box.csv", "map_fixed_field.csv", "comparison.json"})
        EXPECT_EQ(slurp(w.root / "a" / f), slurp(w.root / "b" / f)) << f;
}

TEST(Cli, AllocBenchRuns) {
    Workdir w;
    const fs::path cfg = w.write("ab.json", R"({
      "model": "octomag8", "samples": 50, "seed": 9,
      "position_box": {"min": [-0.03, -0.03, -0.03], "max": [0.03, 0.03, 0.03]},
      "max_tilt_deg": 20.0, "tau_max": 0.01
    })");
    const Outcome o = run_cli("alloc-bench --config " + cfg.string() + " --out " + (w.root / "o").string(),
                              w.root / "log");
    ASSERT_EQ(o.code, kExitOk) << o.log;
    const std::string csv = slurp(w.root / "o" / "alloc_bench.csv");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 51);
}

TEST(Cli, InProcessMatchesExitCodes) {
    std::ostringstream log;
    RunConfig rc;
    rc.command = "simulate";
    rc.config_path = "/nonexistent/config.json";
    rc.out_dir = fs::temp_directory_path().string();
    EXPECT_EQ(run_command(rc, log), kExitConfig);
    EXPECT_NE(log.str().find("cannot open"), std::string::npos);
}

TEST(AllocBench, FieldDipoleAngles) {
    AllocBenchConfig c;
    c.samples = 200;
    const AllocBenchResult r = run_alloc_bench(c);
    EXPECT_TRUE(r.violations.empty());
    double two = 0.0, one = 0.0;
    for (const auto& row : r.rows) {
        two = std::max(two, std::abs(row.angle_two_step_deg - 90.0));
        one = std::max(one, std::abs(row.angle_one_step_deg - 90.0));
    }
    EXPECT_LT(two, 1e-6);
    // The one-step field keeps a small component along the dipole.
    EXPECT_GT(one, 1e-6);
    EXPECT_LT(one, 30.0);
}

TEST(AllocBench, SeedReproducible) {
    AllocBenchConfig c;
    c.samples = 20;
    auto csv = [&] {
        std::FILE* f = std::tmpfile();
        write_alloc_bench_csv(run_alloc_bench(c), f);
        std::rewind(f);
        std::string s(1 << 16, '\0');
        s.resize(std::fread(s.data(), 1, s.size(), f));
        std::fclose(f);
        return s;
    };
    const std::string a = csv();
    EXPECT_EQ(a, csv());
    c.seed = 43;
    EXPECT_NE(a, csv());
}
