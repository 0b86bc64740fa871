#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "json.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

struct Scratch {
    fs::path dir;
    explicit Scratch(const std::string& name) : dir(fs::temp_directory_path() / ("hypergrad_cli_" + name)) {
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    ~Scratch() { fs::remove_all(dir); }
    fs::path operator/(const std::string& rel) const { return dir / rel; }
};

int hypergrad(const std::string& args, const fs::path& log) {
    const std::string cmd =
        std::string("HYPERGRAD_LOG=error '") + HYPERGRAD_CLI + "' " + args + " > '" + log.string() + "' 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::size_t line_count(const fs::path& p) {
    const std::string s = slurp(p);
    std::size_t n = 0;
    for (char c : s) n += c == '\n';
    return n;
}

void write(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

} // namespace

TEST_CASE("cli: run on the quadratic preset") {
    Scratch s("run");
    const std::string out = (s / "out").string();
    REQUIRE(hypergrad("run --config quadratic-hyperdistill --out '" + out + "'", s / "log") == 0);
    CHECK(line_count(s / "out/run.csv") == 31);
    CHECK(slurp(s / "out/run.csv").rfind("m,val_loss,", 0) == 0);
    const auto summary = nlohmann::json::parse(slurp(s / "out/summary.json"));
    CHECK(summary.at("inner_optimizations") == 30);
    CHECK(summary.at("diverged") == false);
    CHECK(summary.contains("meta_test_loss"));

    // Refuses to overwrite, then reproduces the same bytes with --force.
    CHECK(hypergrad("run --config quadratic-hyperdistill --out '" + out + "'", s / "log") == 2);
    CHECK(slurp(s / "log").find("--force") != std::string::npos);
    const std::string first = slurp(s / "out/run.csv");
    REQUIRE(hypergrad("run --config quadratic-hyperdistill --force --workers 1 --out '" + out + "'", s / "log") == 0);
    CHECK(slurp(s / "out/run.csv") == first);

    REQUIRE(hypergrad("run --config quadratic-hyperdistill --seed 5 --out '" + (s / "seed5").string() + "'",
                      s / "log") == 0);
    CHECK(slurp(s / "seed5/run.csv") != first);
    CHECK(nlohmann::json::parse(slurp(s / "seed5/summary.json")).at("seed") == 5);
}

TEST_CASE("cli: configuration errors exit with 2 and a line number") {
    Scratch s("config");
    write(s / "bad.json", "{\n  \"schema_version\": 1,\n  \"strategy\": \"Oracle\"\n}\n");
    CHECK(hypergrad("run --config '" + (s / "bad.json").string() + "' --out '" + (s / "o").string() + "'",
                    s / "log") == 2);
    CHECK(slurp(s / "log").find("bad.json:3:") != std::string::npos);
    CHECK_FALSE(fs::exists(s / "o/run.csv"));

    CHECK(hypergrad("run --config no-such-preset --out '" + (s / "o").string() + "'", s / "log") == 2);
    CHECK(hypergrad("run --out '" + (s / "o").string() + "'", s / "log") == 2);
    CHECK(hypergrad("diagnose --kind scatter --config quadratic-hyperdistill --out '" + (s / "o").string() + "'",
                    s / "log") == 2);
    CHECK(hypergrad("", s / "log") == 2);
}

TEST_CASE("cli: divergence exits with 3 and keeps partial outputs") {
    Scratch s("diverge");
    write(s / "hot.json", R"({
  "schema_version": 1,
  "task": {"family": "quadratic", "T": 40, "quadratic": {"inner_lr": 1e10}},
  "strategy": "OneStep",
  "M": 3
})");
    CHECK(hypergrad("run --config '" + (s / "hot.json").string() + "' --out '" + (s / "o").string() + "'",
                    s / "log") == 3);
    CHECK(line_count(s / "o/run.csv") == 1);
    CHECK(nlohmann::json::parse(slurp(s / "o/summary.json")).at("diverged") == true);
}

TEST_CASE("cli: diagnostics tables") {
    Scratch s("diagnose");
    const std::string out = (s / "o").string();
    REQUIRE(hypergrad("diagnose --kind cossim --config quadratic-hyperdistill --out '" + out + "'", s / "log") == 0);
    // Header + (RMD + five strategies) x T.
    CHECK(line_count(s / "o/diagnostics/cossim.csv") == 1 + 6 * 10);

    REQUIRE(hypergrad("diagnose --kind gamma-sweep --gammas 0 0.9 --config quadratic-hyperdistill --out '" + out + "'",
                      s / "log") == 0);
    CHECK(line_count(s / "o/diagnostics/gamma_sweep.csv") == 1 + 2 * 30);

    REQUIRE(hypergrad("diagnose --kind estimator --config sinusoid-hyperdistill --out '" + out + "'", s / "log") == 0);
    CHECK(line_count(s / "o/diagnostics/estimator_history.csv") == 1 + 3);
    CHECK(line_count(s / "o/diagnostics/estimator_scatter.csv") == 1 + 3 * 30);
}

TEST_CASE("cli: bench table") {
    Scratch s("bench");
    REQUIRE(hypergrad("bench --seeds 0 1 --config quadratic-hyperdistill --out '" + (s / "o").string() + "'",
                      s / "log") == 0);
    const std::string table = slurp(s / "o/diagnostics/bench.csv");
    CHECK(line_count(s / "o/diagnostics/bench.csv") == 6);
    CHECK(table.find("\nOneStep,2,0,") != std::string::npos);
    CHECK(table.find("\"NeumannIFT(5,10)\"") != std::string::npos);
}

TEST_CASE("cli: presets") {
    Scratch s("presets");
    REQUIRE(hypergrad("presets", s / "log") == 0);
    CHECK(slurp(s / "log") == "quadratic-hyperdistill\nreweight-hyperdistill\nsinusoid-hyperdistill\n");
    REQUIRE(hypergrad("presets sinusoid-hyperdistill", s / "log") == 0);
    CHECK(nlohmann::json::parse(slurp(s / "log")).at("task").at("family") == "sinusoid");
    CHECK(hypergrad("presets nothing", s / "log") == 2);
}
