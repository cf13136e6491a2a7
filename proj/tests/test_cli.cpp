#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>
#include <vector>

#include "cli.hpp"
#include "fixtures.hpp"
#include "meansparse/harness.hpp"
#include "published_sweeps.hpp"

using namespace meansparse;
using namespace meansparse::testing;
namespace fs = std::filesystem;

namespace {

int run_cli(std::initializer_list<std::string> args) {
    std::vector<std::string> storage{"meansparse"};
    storage.insert(storage.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& s : storage) argv.push_back(s.data());
    return cli::run(static_cast<int>(argv.size()), argv.data());
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("meansparse_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("usage errors exit with 2") {
    CHECK(run_cli({"sweep", "--no-such-flag"}) == 2);
    CHECK(run_cli({}) == 2);
    CHECK(run_cli({"proxdemo", "--gamma", "-1", "-q", "--out", scratch("bad").string()}) == 2);
}

TEST_CASE("proxdemo writes its trace") {
    const fs::path out = scratch("prox");
    REQUIRE(run_cli({"proxdemo", "-q", "--out", out.string()}) == 0);
    const std::string trace = slurp(out / "trace.csv");
    CHECK(trace.rfind("iter,lambda,objective,penalty_gap,active_count\n", 0) == 0);
    CHECK(fs::exists(out / "manifest.json"));
}

TEST_CASE("select reads a report and writes its choice") {
    const fs::path out = scratch("select");
    write_report_csv((out / "report.csv").string(), table_report());
    REQUIRE(run_cli({"select", "-q", "--report", (out / "report.csv").string(), "--variant", "rawideresnet",
                     "--out", out.string()}) == 0);
    const auto j = nlohmann::json::parse(slurp(out / "selection.json"));
    CHECK(j.at("selected_alpha").get<double>() == 0.25);
}

TEST_CASE("missing inputs exit with 3") {
    const fs::path out = scratch("missing");
    CHECK(run_cli({"select", "-q", "--report", (out / "none.csv").string(), "--out", out.string()}) == 3);
    CHECK(run_cli({"attack", "-q", "--data-dir", (out / "nowhere").string(), "--out", out.string()}) == 3);
    CHECK(run_cli({"attack", "-q", "--synthetic", "--no-train", "--cache-dir", (out / "empty").string(), "--out",
                   out.string()}) == 3);
}

TEST_CASE("zero radius attack through the CLI reports robust equal to clean") {
    const fs::path out = scratch("eps0");
    REQUIRE(run_cli({"train", "-q", "--synthetic", "--n-train", "64", "--n-test", "16", "--blocks", "3", "--epochs",
                     "1", "--mode", "standard", "--threads", "1", "--out", (out / "t").string()}) == 0);
    REQUIRE(fs::exists(out / "t" / "model.ckpt"));
    REQUIRE(run_cli({"attack", "-q", "--synthetic", "--n-train", "64", "--n-test", "16", "--model",
                     (out / "t" / "model.ckpt").string(), "--eps", "0", "--alpha", "0", "--threads", "1", "--out",
                     (out / "a").string()}) == 0);
    const EvalReport r = read_report_csv((out / "a" / "report.csv").string());
    REQUIRE(r.rows.size() == 1);
    CHECK(r.rows[0].robust_acc == r.rows[0].clean_acc);
}

TEST_CASE("sweep writes one row per alpha and all artifacts") {
    const fs::path out = scratch("sweep");
    REQUIRE(run_cli({"sweep", "-q", "--synthetic", "--n-train", "64", "--n-test", "16", "--blocks", "3", "--epochs",
                     "1", "--mode", "standard", "--steps", "2", "--alpha-grid", "0,0.1,0.2", "--threads", "1",
                     "--out", out.string()}) == 0);
    const EvalReport r = read_report_csv((out / "report.csv").string());
    REQUIRE(r.rows.size() == 3);
    CHECK(r.rows[0].alpha == 0.0);
    CHECK(r.rows[2].alpha == doctest::Approx(0.2));
    for (const char* f : {"timings.csv", "plotdata.csv", "manifest.json"}) CHECK(fs::exists(out / f));
    const auto m = nlohmann::json::parse(slurp(out / "manifest.json"));
    CHECK(m.contains("selected_alpha"));
    CHECK(fs::exists(out / "checkpoints"));
    CHECK(run_cli({"sweep", "-q", "--synthetic", "--alpha-grid", "0.1,0.2", "--out", out.string()}) == 2);
}
