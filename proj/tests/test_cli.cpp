#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "grmoe/cli.hpp"

using namespace grmoe;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static std::atomic<int> counter{0};
        const auto tick =
            std::chrono::steady_clock::now().time_since_epoch().count();
        path = fs::temp_directory_path() /
               ("grmoe_cli_" + std::to_string(tick) + "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string str() const { return path.string(); }
};

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream lines(text);
    std::string line;
    while (std::getline(lines, line)) {
        std::vector<std::string> cells;
        std::istringstream cs(line);
        std::string cell;
        while (std::getline(cs, cell, ',')) cells.push_back(cell);
        rows.push_back(cells);
    }
    return rows;
}

nlohmann::json tiny_bench_config() {
    return nlohmann::json{
        {"task",
         {{"n_experts", 4}, {"d", 32}, {"k", 2}, {"rho_star", 0.0}, {"sigma2", 0.05}}},
        {"methods", {"hash", "grmoe"}},
        {"seeds", {0, 1}},
        {"train",
         {{"steps", 120},
          {"batch", 64},
          {"eval_interval", 60},
          {"n_eval", 400},
          {"amortized", false}}},
        {"n_eval", 400}};
}

}  // namespace

TEST_CASE("config validation failures exit with the usage code") {
    TempDir dir;
    nlohmann::json bad = tiny_bench_config();
    bad["methods"] = nlohmann::json::array();
    CHECK(cli::cmd_bench(bad, dir.str()) == cli::kExitUsage);

    bad = tiny_bench_config();
    bad["methods"] = {"gradient_boosting"};
    CHECK(cli::cmd_bench(bad, dir.str()) == cli::kExitUsage);

    bad = tiny_bench_config();
    bad["seeds"] = nlohmann::json::array();
    CHECK(cli::cmd_bench(bad, dir.str()) == cli::kExitUsage);

    CHECK(cli::cmd_ablate({{"axis", "nonsense"}}, dir.str()) == cli::kExitUsage);
    CHECK(cli::cmd_alpha_sweep({{"checkpoint", dir.str() + "/missing.json"}}, dir.str()) ==
          cli::kExitUsage);
    CHECK(cli::cmd_z_validate({{"dims", {{4, 9}}}}, dir.str()) == cli::kExitUsage);
    CHECK(cli::cmd_bounds({{"instances", 0}}, dir.str()) == cli::kExitUsage);
    CHECK(cli::cmd_bounds({{"fault_injection", "cosmic_rays"}}, dir.str()) ==
          cli::kExitUsage);
    CHECK(cli::cmd_rerun(dir.str() + "/no_manifest.json", dir.str()) == cli::kExitUsage);
}

TEST_CASE("bench writes the documented artifacts deterministically") {
    TempDir a, b;
    const nlohmann::json cfg = tiny_bench_config();
    REQUIRE(cli::cmd_bench(cfg, a.str(), 3) == cli::kExitOk);
    REQUIRE(cli::cmd_bench(cfg, b.str(), 1) == cli::kExitOk);

    // Thread count is a scheduling knob, never a results knob.
    CHECK(read_file(a.path / "bench_runs.csv") == read_file(b.path / "bench_runs.csv"));
    CHECK(read_file(a.path / "bench_summary.csv") ==
          read_file(b.path / "bench_summary.csv"));

    const auto runs = parse_csv(read_file(a.path / "bench_runs.csv"));
    REQUIRE(runs.size() == 5);  // header + 2 methods x 2 seeds
    CHECK(runs[0] == std::vector<std::string>{"method", "seed", "acc", "cv", "entropy",
                                              "collapsed"});
    for (std::size_t i = 1; i < runs.size(); ++i) REQUIRE(runs[i].size() == 6);
    // Rows are grouped by method in config order, seeds ascending within.
    CHECK(runs[1][0] == "hash");
    CHECK(runs[3][0] == "grmoe");
    CHECK(runs[1][1] == "0");
    CHECK(runs[2][1] == "1");

    const double hash_acc = std::stod(runs[1][2]);
    const double grmoe_acc = std::stod(runs[3][2]);
    CHECK(hash_acc < 0.45);   // hash routes at chance on 4 experts
    CHECK(grmoe_acc > 0.6);   // even a 120-step run clears chance comfortably

    const nlohmann::json manifest =
        nlohmann::json::parse(read_file(a.path / "manifest.json"));
    CHECK(manifest.at("subcommand") == "bench");
    CHECK(manifest.at("tool_version") == std::string(cli::kToolVersion));
    CHECK(manifest.at("config").at("n_eval") == 400);  // resolved config is echoed
    CHECK(manifest.at("config").at("save_checkpoints") == false);  // defaults filled in
    for (const nlohmann::json& art : manifest.at("artifacts"))
        CHECK(fs::exists(a.path / art.get<std::string>()));
}

TEST_CASE("rerun replays a manifest byte for byte") {
    TempDir first, replay;
    REQUIRE(cli::cmd_bench(tiny_bench_config(), first.str(), 2) == cli::kExitOk);
    REQUIRE(cli::cmd_rerun((first.path / "manifest.json").string(), replay.str(), 4) ==
            cli::kExitOk);
    CHECK(read_file(first.path / "bench_runs.csv") ==
          read_file(replay.path / "bench_runs.csv"));
    CHECK(read_file(first.path / "bench_summary.csv") ==
          read_file(replay.path / "bench_summary.csv"));
}

TEST_CASE("bench records diverged runs without aborting the sweep") {
    TempDir dir;
    nlohmann::json cfg = tiny_bench_config();
    cfg["methods"] = {"grmoe"};
    cfg["seeds"] = {0};
    cfg["train"]["alpha_train"] = 1e6;  // overflows the gate logits immediately
    REQUIRE(cli::cmd_bench(cfg, dir.str()) == cli::kExitOk);
    const auto runs = parse_csv(read_file(dir.path / "bench_runs.csv"));
    REQUIRE(runs.size() == 2);
    CHECK(runs[1][2] == "nan");
    CHECK(runs[1][5] == "nan");
    const auto summary = parse_csv(read_file(dir.path / "bench_summary.csv"));
    CHECK(summary[1].back() == "1");  // diverged count
}

TEST_CASE("alpha sweep starts uniform and never raises entropy") {
    TempDir dir;
    const SyntheticTask task = make_task(4, 32, 2, 0.0, 0.05, 7);
    TrainConfig tc;
    tc.steps = 150;
    tc.batch = 64;
    tc.eval_interval = 150;
    tc.n_eval = 400;
    tc.amortized = false;
    tc.seed = 7;
    const TrainResult r = train(task, tc);
    const fs::path ckpt_path = dir.path / "ckpt.json";
    {
        std::ofstream out(ckpt_path);
        out << checkpoint_to_json(tc, r.bank, nullptr, r.data_rng_state, tc.steps).dump();
    }

    nlohmann::json cfg{
        {"task",
         {{"n_experts", 4},
          {"d", 32},
          {"k", 2},
          {"rho_star", 0.0},
          {"sigma2", 0.05},
          {"seed", 7}}},
        {"checkpoint", ckpt_path.string()},
        {"alphas", {0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 50.0}},
        {"n_eval", 400},
        {"eval_seed", 3}};
    REQUIRE(cli::cmd_alpha_sweep(cfg, dir.str(), 4) == cli::kExitOk);

    const auto rows = parse_csv(read_file(dir.path / "alpha_sweep.csv"));
    REQUIRE(rows.size() == 8);
    CHECK(rows[0] == std::vector<std::string>{"alpha", "entropy", "eff_experts", "acc",
                                              "top1_mass"});
    // alpha = 0 is the exact uniform gate: entropy log N, all experts live,
    // top-1 mass exactly 1/N.
    CHECK(std::stod(rows[1][1]) == Catch::Approx(std::log(4.0)).margin(1e-12));
    CHECK(std::stod(rows[1][2]) == Catch::Approx(4.0).margin(1e-9));
    CHECK(std::stod(rows[1][4]) == Catch::Approx(0.25).margin(1e-12));
    double prev = std::stod(rows[1][1]);
    for (std::size_t i = 2; i < rows.size(); ++i) {
        const double h = std::stod(rows[i][1]);
        CHECK(h <= prev + 1e-9);
        prev = h;
    }
    // The dial concentrates mass without retraining: top-1 mass rises.
    CHECK(std::stod(rows.back()[4]) > 0.9);
}

TEST_CASE("bounds suite passes clean and flags injected inflation") {
    TempDir dir;
    nlohmann::json cfg{{"instances", 60}, {"cv_harness", {{"enabled", false}}}};
    REQUIRE(cli::cmd_bounds(cfg, dir.str(), 8) == cli::kExitOk);
    const nlohmann::json report =
        nlohmann::json::parse(read_file(dir.path / "bounds_report.json"));
    CHECK(report.at("instances") == 60);
    CHECK(report.at("violations") == 0);
    CHECK(report.at("worst_entropy_slack_low").get<double>() >= -kBoundSlack);
    CHECK(report.at("worst_entropy_slack_high").get<double>() >= -kBoundSlack);
    CHECK(report.at("worst_topk_slack").get<double>() >= -kBoundSlack);

    // Negative control: inflating the concentration statistics must trip the
    // checker, otherwise the suite could never detect a broken bound.
    TempDir fault_dir;
    cfg["fault_injection"] = "inflate_stats";
    REQUIRE(cli::cmd_bounds(cfg, fault_dir.str(), 8) == cli::kExitViolation);
    const nlohmann::json fault_report =
        nlohmann::json::parse(read_file(fault_dir.path / "bounds_report.json"));
    CHECK(fault_report.at("violations").get<int>() > 0);
}

TEST_CASE("z-validate emits the exact identity row at kappa zero") {
    TempDir dir;
    nlohmann::json cfg{{"dims", {{16, 4}}}, {"kappas", {0.0, 1.0}}, {"mc_samples", 1000}};
    REQUIRE(cli::cmd_z_validate(cfg, dir.str(), 2) == cli::kExitOk);
    const auto rows = parse_csv(read_file(dir.path / "z_validate.csv"));
    REQUIRE(rows.size() == 3);
    CHECK(rows[0][0] == "kappa");
    // kappa = 0: every estimator returns Z = 1 identically.
    CHECK(rows[1][3] == "1");
    CHECK(rows[1][4] == "1");
    CHECK(rows[1][5] == "1");
    CHECK(rows[1][6] == "0");
    CHECK(rows[1][7] == "0");
    CHECK(std::stod(rows[2][7]) < 0.015);  // kappa = 1 sits in the calibrated window
}

TEST_CASE("ablate covers every requested axis value with overlap column") {
    TempDir dir;
    nlohmann::json cfg{
        {"axis", "rank"},
        {"values", {1, 2}},
        {"task",
         {{"n_experts", 4}, {"d", 32}, {"k", 2}, {"rho_star", 0.0}, {"sigma2", 0.05}}},
        {"train",
         {{"steps", 120},
          {"batch", 64},
          {"eval_interval", 120},
          {"n_eval", 400},
          {"amortized", false}}},
        {"seeds", {0, 1}},
        {"n_eval", 400}};
    REQUIRE(cli::cmd_ablate(cfg, dir.str(), 4) == cli::kExitOk);

    const auto runs = parse_csv(read_file(dir.path / "ablate_runs.csv"));
    REQUIRE(runs.size() == 5);
    CHECK(runs[0] == std::vector<std::string>{"axis", "value", "seed", "acc", "cv",
                                              "entropy", "collapsed", "max_overlap"});
    for (std::size_t i = 1; i < runs.size(); ++i) {
        CHECK(runs[i][0] == "rank");
        CHECK(std::stod(runs[i][7]) >= 0.0);
    }
    const auto summary = parse_csv(read_file(dir.path / "ablate_summary.csv"));
    REQUIRE(summary.size() == 3);
    CHECK(summary[1][1] == "1");
    CHECK(summary[2][1] == "2");
    // Rank-1 routing cannot represent rank-2 home subspaces; the full-rank
    // router should win on accuracy.
    CHECK(std::stod(summary[2][3]) > std::stod(summary[1][3]));

    TempDir replay;
    REQUIRE(cli::cmd_rerun((dir.path / "manifest.json").string(), replay.str(), 1) ==
            cli::kExitOk);
    CHECK(read_file(dir.path / "ablate_runs.csv") ==
          read_file(replay.path / "ablate_runs.csv"));
}
