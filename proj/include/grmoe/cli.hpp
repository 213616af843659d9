#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "grmoe/bounds.hpp"
#include "grmoe/errors.hpp"
#include "grmoe/gating.hpp"
#include "grmoe/normalizer.hpp"
#include "grmoe/report.hpp"
#include "grmoe/synthetic.hpp"
#include "grmoe/training.hpp"

namespace grmoe::cli {

inline constexpr const char* kToolVersion = "grmoe 1.0.0";

// Exit codes: 0 success, 1 property violation (a checked bound or tolerance
// failed), 2 usage/config error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitViolation = 1;
inline constexpr int kExitUsage = 2;

namespace detail {

inline nlohmann::json merged(nlohmann::json defaults, const nlohmann::json& user) {
    defaults.merge_patch(user);
    return defaults;
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidArgument("cannot open for writing: " + path.string());
    out << content;
    if (!out) throw NumericalError("write failed: " + path.string());
}

inline nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidArgument("cannot open: " + path);
    nlohmann::json j;
    in >> j;
    return j;
}

inline std::vector<std::uint64_t> seed_list(const nlohmann::json& config) {
    std::vector<std::uint64_t> seeds;
    for (const nlohmann::json& s : config.at("seeds")) seeds.push_back(s.get<std::uint64_t>());
    if (seeds.empty()) throw InvalidArgument("seed list is empty");
    return seeds;
}

// Runs jobs[i]() for every index, at most `threads` concurrently, collecting
// results by index so output order never depends on scheduling.
template <typename Fn>
auto parallel_map(const std::vector<Fn>& jobs, int threads) {
    using R = decltype(jobs.front()());
    int t = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
    if (t < 1) t = 1;
    std::vector<R> results(jobs.size());
    for (std::size_t start = 0; start < jobs.size(); start += t) {
        const std::size_t stop = std::min(jobs.size(), start + t);
        std::vector<std::future<R>> futs;
        for (std::size_t i = start; i < stop; ++i)
            futs.push_back(std::async(std::launch::async, jobs[i]));
        for (std::size_t i = start; i < stop; ++i) results[i] = futs[i - start].get();
    }
    return results;
}

inline std::string csv_bool(bool b) { return b ? "1" : "0"; }

}  // namespace detail

// Manifest: resolved config plus enough identity to replay the command. It is
// written before any result file so an interrupted run still documents what
// was attempted, and `rerun` reproduces every CSV byte-for-byte.
inline nlohmann::json make_manifest(const std::string& subcommand,
                                    const nlohmann::json& resolved_config,
                                    const std::vector<std::string>& artifacts) {
    return nlohmann::json{
        {"subcommand", subcommand},
        {"config", resolved_config},
        {"artifacts", artifacts},
        {"tool_version", kToolVersion},
        {"wall_clock_start_unix",
         std::chrono::duration_cast<std::chrono::seconds>(
             std::chrono::system_clock::now().time_since_epoch())
             .count()}};
}

inline void write_manifest(const std::string& out_dir, const nlohmann::json& manifest) {
    std::filesystem::create_directories(out_dir);
    detail::write_file(std::filesystem::path(out_dir) / "manifest.json",
                       manifest.dump(2) + "\n");
}

// --- bench -------------------------------------------------------------------

namespace detail {

inline nlohmann::json bench_defaults() {
    nlohmann::json train = train_config_to_json(TrainConfig{});
    return nlohmann::json{
        {"task",
         {{"n_experts", 8}, {"d", 128}, {"k", 8}, {"rho_star", 0.1}, {"sigma2", 0.1}}},
        {"methods", {"grmoe", "softmax_top1"}},
        {"seeds", {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19}},
        {"train", train},
        {"baseline", {{"steps", 2000}, {"batch", 256}, {"lr", 0.01}}},
        {"n_eval", 4000},
        {"save_checkpoints", false}};
}

struct RunRow {
    std::string method;
    std::uint64_t seed = 0;
    EvalMetrics metrics;
    bool diverged = false;
};

inline SyntheticTask task_for_seed(const nlohmann::json& task_cfg, std::uint64_t seed) {
    return make_task(task_cfg.at("n_experts").get<int>(), task_cfg.at("d").get<int>(),
                     task_cfg.at("k").get<int>(), task_cfg.at("rho_star").get<double>(),
                     task_cfg.at("sigma2").get<double>(), seed);
}

inline BaselineConfig baseline_config(const nlohmann::json& j) {
    BaselineConfig cfg;
    cfg.steps = j.value("steps", cfg.steps);
    cfg.batch = j.value("batch", cfg.batch);
    cfg.adam.lr = j.value("lr", cfg.adam.lr);
    return cfg;
}

// One benchmark run: fresh task geometry and fresh model initialization per
// seed, with one shared evaluation stream per seed across methods.
inline RunRow bench_run(const nlohmann::json& resolved, const std::string& method,
                        std::uint64_t seed, const std::string& out_dir) {
    RunRow row;
    row.method = method;
    row.seed = seed;
    const SyntheticTask task = task_for_seed(resolved.at("task"), seed);
    const int n_eval = resolved.at("n_eval").get<int>();
    Rng eval_rng = Rng(seed).substream("bench-eval");
    try {
        if (method == "grmoe" || method == "grmoe_amortized") {
            TrainConfig cfg = train_config_from_json(resolved.at("train"));
            cfg.seed = seed;
            cfg.amortized = (method == "grmoe_amortized");
            const TrainResult r = train(task, cfg);
            const Amortizer* am = r.amortized ? &r.amortizer : nullptr;
            row.metrics = evaluate(bank_router(r.bank, am, cfg.alpha_train), task, n_eval,
                                   eval_rng);
            if (resolved.at("save_checkpoints").get<bool>()) {
                const nlohmann::json ckpt =
                    checkpoint_to_json(cfg, r.bank, am, r.data_rng_state, cfg.steps);
                write_file(std::filesystem::path(out_dir) /
                               ("checkpoint_" + method + "_" + std::to_string(seed) + ".json"),
                           ckpt.dump(2) + "\n");
            }
        } else {
            Rng brng = Rng(seed).substream("baseline-" + method);
            const Router r = baseline_router(baseline_kind_from_string(method), task,
                                             baseline_config(resolved.at("baseline")), brng);
            row.metrics = evaluate(r, task, n_eval, eval_rng);
        }
    } catch (const Diverged&) {
        row.diverged = true;
        const double nan = std::numeric_limits<double>::quiet_NaN();
        row.metrics = EvalMetrics{};
        row.metrics.assignment_accuracy = nan;
        row.metrics.load_cv = nan;
        row.metrics.mean_entropy = nan;
    }
    return row;
}

inline std::string runs_csv(const std::vector<RunRow>& rows) {
    std::string csv = "method,seed,acc,cv,entropy,collapsed\n";
    for (const RunRow& r : rows) {
        csv += r.method + "," + std::to_string(r.seed) + "," +
               csv_double(r.metrics.assignment_accuracy) + "," + csv_double(r.metrics.load_cv) +
               "," + csv_double(r.metrics.mean_entropy) + ",";
        csv += r.diverged ? "nan" : csv_bool(r.metrics.collapsed);
        csv += "\n";
    }
    return csv;
}

inline std::string summary_csv(const std::vector<std::string>& methods,
                               const std::vector<RunRow>& rows) {
    std::string csv =
        "method,n_seeds,acc_mean,acc_std,acc_min,acc_max,cv_mean,cv_std,"
        "entropy_mean,entropy_std,collapse_rate,diverged\n";
    for (const std::string& m : methods) {
        std::vector<EvalMetrics> ok;
        int diverged = 0, total = 0;
        for (const RunRow& r : rows)
            if (r.method == m) {
                ++total;
                if (r.diverged)
                    ++diverged;
                else
                    ok.push_back(r.metrics);
            }
        csv += m + "," + std::to_string(total) + ",";
        if (ok.empty()) {
            for (int i = 0; i < 9; ++i) csv += "nan,";
        } else {
            const Aggregate a = aggregate(ok);
            csv += csv_double(a.acc.mean) + "," + csv_double(a.acc.std) + "," +
                   csv_double(a.acc.min) + "," + csv_double(a.acc.max) + "," +
                   csv_double(a.cv.mean) + "," + csv_double(a.cv.std) + "," +
                   csv_double(a.entropy.mean) + "," + csv_double(a.entropy.std) + "," +
                   csv_double(a.collapse_rate) + ",";
        }
        csv += std::to_string(diverged) + "\n";
    }
    return csv;
}

inline const std::vector<std::string>& known_methods() {
    static const std::vector<std::string> methods = {
        "grmoe", "grmoe_amortized", "softmax_top1", "softmax_dense", "vmf_gate", "hash"};
    return methods;
}

}  // namespace detail

inline int cmd_bench(const nlohmann::json& user_config, const std::string& out_dir,
                     int threads = 0) {
    nlohmann::json resolved;
    std::vector<std::string> methods;
    std::vector<std::uint64_t> seeds;
    try {
        resolved = detail::merged(detail::bench_defaults(), user_config);
        for (const nlohmann::json& m : resolved.at("methods"))
            methods.push_back(m.get<std::string>());
        if (methods.empty()) throw InvalidArgument("bench: empty method list");
        for (const std::string& m : methods) {
            const auto& known = detail::known_methods();
            if (std::find(known.begin(), known.end(), m) == known.end())
                throw InvalidArgument("bench: unknown method " + m);
        }
        seeds = detail::seed_list(resolved);
        detail::task_for_seed(resolved.at("task"), seeds.front());  // validate task params
    } catch (const std::exception& e) {
        std::cerr << "bench: config error: " << e.what() << "\n";
        return kExitUsage;
    }

    std::vector<std::string> artifacts = {"bench_runs.csv", "bench_summary.csv"};
    if (resolved.at("save_checkpoints").get<bool>())
        for (const std::string& m : methods)
            if (m.rfind("grmoe", 0) == 0)
                for (std::uint64_t s : seeds)
                    artifacts.push_back("checkpoint_" + m + "_" + std::to_string(s) + ".json");
    write_manifest(out_dir, make_manifest("bench", resolved, artifacts));

    std::vector<std::function<detail::RunRow()>> jobs;
    for (const std::string& m : methods)
        for (std::uint64_t s : seeds)
            jobs.push_back([&resolved, m, s, &out_dir] {
                return detail::bench_run(resolved, m, s, out_dir);
            });
    std::vector<detail::RunRow> rows;
    try {
        rows = detail::parallel_map(jobs, threads);
    } catch (const std::exception& e) {
        std::cerr << "bench: run failed: " << e.what() << "\n";
        return kExitUsage;
    }

    detail::write_file(std::filesystem::path(out_dir) / "bench_runs.csv",
                       detail::runs_csv(rows));
    detail::write_file(std::filesystem::path(out_dir) / "bench_summary.csv",
                       detail::summary_csv(methods, rows));
    return kExitOk;
}

// --- alpha sweep -------------------------------------------------------------

namespace detail {

inline nlohmann::json alpha_sweep_defaults() {
    nlohmann::json alphas = nlohmann::json::array();
    for (int i = 0; i <= 20; ++i) alphas.push_back(0.25 * i);
    return nlohmann::json{
        {"task",
         {{"n_experts", 8},
          {"d", 128},
          {"k", 8},
          {"rho_star", 0.1},
          {"sigma2", 0.1},
          {"seed", 0}}},
        {"checkpoint", ""},
        {"alphas", alphas},
        {"n_eval", 4000},
        {"eval_seed", 0}};
}

struct SweepRow {
    double alpha = 0.0;
    double entropy = 0.0;
    double eff_experts = 0.0;
    double acc = 0.0;
    double top1_mass = 0.0;
};

inline SweepRow sweep_point(const ExpertBank& bank, const Amortizer* am,
                            const SyntheticTask& task, double alpha, int n_eval,
                            const Rng& eval_rng) {
    Rng rng = eval_rng;  // one shared stream value: evaluations are paired
    const std::vector<Sample> samples = sample_batch(task, n_eval, rng);
    SweepRow row;
    row.alpha = alpha;
    // Compensated means: the alpha = 0 column must reproduce the exact
    // uniform-gate identities, which naive 4000-term sums would blur.
    KahanSum acc, ent, eff, top1;
    for (const Sample& s : samples) {
        const RoutingDistribution rd =
            am != nullptr ? route_amortized(bank, *am, s.x, alpha) : route(bank, s.x, alpha);
        int arg = 0;
        for (int e = 1; e < bank.size(); ++e)
            if (rd.probs[e] > rd.probs[arg]) arg = e;
        acc.add(arg == s.z ? 1.0 : 0.0);
        ent.add(entropy(rd));
        eff.add(effective_experts(rd));
        top1.add(topk_mass(rd, 1));
    }
    row.acc = acc.value() / n_eval;
    row.entropy = ent.value() / n_eval;
    row.eff_experts = eff.value() / n_eval;
    row.top1_mass = top1.value() / n_eval;
    return row;
}

}  // namespace detail

inline int cmd_alpha_sweep(const nlohmann::json& user_config, const std::string& out_dir,
                           int threads = 0) {
    nlohmann::json resolved;
    Checkpoint ckpt;
    SyntheticTask task;
    std::vector<double> alphas;
    try {
        resolved = detail::merged(detail::alpha_sweep_defaults(), user_config);
        ckpt = checkpoint_from_json(
            detail::read_json_file(resolved.at("checkpoint").get<std::string>()));
        task = detail::task_for_seed(resolved.at("task"),
                                     resolved.at("task").at("seed").get<std::uint64_t>());
        for (const nlohmann::json& a : resolved.at("alphas")) {
            alphas.push_back(a.get<double>());
            if (!(alphas.back() >= 0.0)) throw InvalidArgument("alpha must be >= 0");
        }
        if (alphas.empty()) throw InvalidArgument("alphas list is empty");
        if (ckpt.bank.dim() != task.d)
            throw DimensionMismatch("checkpoint dimension does not match task");
    } catch (const std::exception& e) {
        std::cerr << "alpha-sweep: config error: " << e.what() << "\n";
        return kExitUsage;
    }
    write_manifest(out_dir, make_manifest("alpha-sweep", resolved, {"alpha_sweep.csv"}));

    const int n_eval = resolved.at("n_eval").get<int>();
    const Rng eval_rng =
        Rng(resolved.at("eval_seed").get<std::uint64_t>()).substream("alpha-eval");
    const Amortizer* am = ckpt.amortized ? &ckpt.amortizer : nullptr;

    std::vector<std::function<detail::SweepRow()>> jobs;
    for (double a : alphas)
        jobs.push_back([&, a] { return detail::sweep_point(ckpt.bank, am, task, a, n_eval,
                                                           eval_rng); });
    const std::vector<detail::SweepRow> rows = detail::parallel_map(jobs, threads);

    std::string csv = "alpha,entropy,eff_experts,acc,top1_mass\n";
    for (const detail::SweepRow& r : rows)
        csv += csv_double(r.alpha) + "," + csv_double(r.entropy) + "," +
               csv_double(r.eff_experts) + "," + csv_double(r.acc) + "," +
               csv_double(r.top1_mass) + "\n";
    detail::write_file(std::filesystem::path(out_dir) / "alpha_sweep.csv", csv);

    // Postcondition: with a shared evaluation stream, mean entropy cannot rise
    // as the sparsity dial increases (sorted check; rows keep config order).
    std::vector<std::pair<double, double>> by_alpha;
    for (const detail::SweepRow& r : rows) by_alpha.emplace_back(r.alpha, r.entropy);
    std::sort(by_alpha.begin(), by_alpha.end());
    for (std::size_t i = 1; i < by_alpha.size(); ++i)
        if (by_alpha[i].second > by_alpha[i - 1].second + 1e-9) {
            std::cerr << "alpha-sweep: entropy increased between alpha=" << by_alpha[i - 1].first
                      << " and alpha=" << by_alpha[i].first << "\n";
            return kExitViolation;
        }
    return kExitOk;
}

// --- bounds ------------------------------------------------------------------

namespace detail {

inline nlohmann::json bounds_defaults() {
    return nlohmann::json{
        {"instances", 1000},
        {"seed", 0},
        {"kmax", 4},
        {"n_choices", {2, 4, 8, 16}},
        {"d_choices", {8, 32}},
        {"kappa_range", {0.1, 5.0}},
        {"alpha_range", {0.0, 5.0}},
        {"alpha_grid", nlohmann::json::array()},  // nonempty overrides alpha_range
        {"fault_injection", "none"},
        {"cv_harness",
         {{"enabled", true},
          {"seeds", 10},
          {"accept_home", 2.0},
          {"accept_off", 1.0},
          {"alpha", 4.0},
          {"samples_per_seed", 2000},
          {"bootstrap_resamples", 1000}}}};
}

// Negative-control hook: inflating Δ, Γ, and the top-k gaps together makes
// the upper entropy bound and the top-k mass guarantees strictly tighter than
// they can honestly be, so a healthy checker must flag violations. (Inflating
// Δ alone only loosens the lower bound, which can never be detected.)
inline ConcentrationStats inflate_stats(ConcentrationStats s) {
    s.delta_kappa *= 2.0;
    s.gamma_kappa *= 2.0;
    s.delta_range *= 2.0;
    for (double& g : s.gaps) g *= 2.0;
    return s;
}

struct BoundsOutcome {
    bool ok = true;
    double entropy_slack_low = std::numeric_limits<double>::infinity();
    double entropy_slack_high = std::numeric_limits<double>::infinity();
    double topk_slack = std::numeric_limits<double>::infinity();
};

inline BoundsOutcome bounds_instance(const nlohmann::json& resolved, int index) {
    Rng rng = Rng(resolved.at("seed").get<std::uint64_t>())
                  .substream("bounds-instance-" + std::to_string(index));
    const auto& ns = resolved.at("n_choices");
    const auto& ds = resolved.at("d_choices");
    const int n = ns[static_cast<std::size_t>(rng.next() % ns.size())].get<int>();
    const int d = ds[static_cast<std::size_t>(rng.next() % ds.size())].get<int>();
    const int k_cap = std::max(1, std::min(4, d / 2));
    const int k = 1 + static_cast<int>(rng.next() % static_cast<std::uint64_t>(k_cap));

    ExpertBank bank;
    const double klo = resolved.at("kappa_range")[0].get<double>();
    const double khi = resolved.at("kappa_range")[1].get<double>();
    for (int e = 0; e < n; ++e) {
        bank.frames.push_back(haar_frame(d, k, rng));
        bank.kappas.push_back(klo + (khi - klo) * rng.uniform());
    }
    const std::vector<double> x = gaussian_vector(d, rng);

    double alpha;
    const auto& grid = resolved.at("alpha_grid");
    if (!grid.empty()) {
        alpha = grid[static_cast<std::size_t>(rng.next() % grid.size())].get<double>();
    } else {
        const double alo = resolved.at("alpha_range")[0].get<double>();
        const double ahi = resolved.at("alpha_range")[1].get<double>();
        alpha = alo + (ahi - alo) * rng.uniform();
    }
    const int kmax = std::min(resolved.at("kmax").get<int>(), n - 1);

    ConcentrationStats stats = concentration_stats(bank, x);
    if (resolved.at("fault_injection").get<std::string>() == "inflate_stats")
        stats = inflate_stats(stats);

    const RoutingDistribution rd = route(bank, x, alpha);
    const double h = entropy(rd);
    const auto [lb, ub] = entropy_bounds(stats, alpha, n);

    BoundsOutcome out;
    out.entropy_slack_low = h - lb;
    out.entropy_slack_high = ub - h;
    out.ok = (out.entropy_slack_low >= -kBoundSlack) && (out.entropy_slack_high >= -kBoundSlack);
    for (int kk = 1; kk <= kmax; ++kk) {
        const double g = topk_mass(rd, kk);
        const double b = topk_mass_bound(stats, alpha, kk, n).raw;
        out.topk_slack = std::min(out.topk_slack, g - b);
    }
    out.ok = out.ok && (out.topk_slack >= -kBoundSlack);
    return out;
}

struct CvHarnessOutcome {
    double gamma_min = 0.0;
    double rho_max = 0.0;
    double bound = 0.0;
    double mean_cv = 0.0;
    double stderr_boot = 0.0;
    bool ok = false;
};

inline CvHarnessOutcome cv_harness_check(const nlohmann::json& hc, int threads) {
    const int n_seeds = hc.at("seeds").get<int>();
    const double home = hc.at("accept_home").get<double>();
    const double off = hc.at("accept_off").get<double>();
    const double alpha = hc.at("alpha").get<double>();
    const int per_seed = hc.at("samples_per_seed").get<int>();

    struct SeedOut {
        std::vector<double> loads;
        double gamma = 0.0, rho = 0.0;
    };
    std::vector<std::function<SeedOut()>> jobs;
    for (int s = 0; s < n_seeds; ++s)
        jobs.push_back([=] {
            const SyntheticTask task = make_task(8, 128, 8, 0.0, 0.05, s);
            Rng rng = Rng(s).substream("cv-harness-filter");
            const BoundedOverlapSet set = bounded_overlap_filter(task, per_seed, home, off, rng);
            ExpertBank bank;
            bank.frames = task.truth;
            bank.kappas.assign(8, 1.0);
            SeedOut out;
            out.loads.assign(8, 0.0);
            for (const Sample& smp : set.samples) {
                const RoutingDistribution rd = route(bank, smp.x, alpha);
                for (int e = 0; e < 8; ++e) out.loads[e] += rd.probs[e];
            }
            for (double& l : out.loads) l /= set.samples.size();
            out.gamma = set.gamma;
            out.rho = set.rho;
            return out;
        });
    const auto outs = parallel_map(jobs, threads);

    CvHarnessOutcome res;
    res.gamma_min = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> loads;
    std::vector<double> cvs;
    for (const SeedOut& o : outs) {
        res.gamma_min = std::min(res.gamma_min, o.gamma);
        res.rho_max = std::max(res.rho_max, o.rho);
        loads.push_back(o.loads);
        cvs.push_back(cv_of_loads(o.loads));
    }
    res.bound = cv_bound(8, alpha, res.gamma_min, res.rho_max, 1.0, 1.0);
    double acc = 0.0;
    for (double c : cvs) acc += c;
    res.mean_cv = acc / cvs.size();
    Rng boot = Rng(0).substream("cv-harness-bootstrap");
    res.stderr_boot =
        bootstrap_cv_stderr(loads, hc.at("bootstrap_resamples").get<int>(), boot);
    res.ok = res.mean_cv <= res.bound + 3.0 * res.stderr_boot;
    return res;
}

}  // namespace detail

inline int cmd_bounds(const nlohmann::json& user_config, const std::string& out_dir,
                      int threads = 0) {
    nlohmann::json resolved;
    int instances = 0;
    try {
        resolved = detail::merged(detail::bounds_defaults(), user_config);
        instances = resolved.at("instances").get<int>();
        if (instances < 1) throw InvalidArgument("bounds: instances >= 1");
        const std::string fault = resolved.at("fault_injection").get<std::string>();
        if (fault != "none" && fault != "inflate_stats")
            throw InvalidArgument("bounds: unknown fault_injection " + fault);
    } catch (const std::exception& e) {
        std::cerr << "bounds: config error: " << e.what() << "\n";
        return kExitUsage;
    }
    write_manifest(out_dir, make_manifest("bounds", resolved, {"bounds_report.json"}));

    std::vector<std::function<detail::BoundsOutcome()>> jobs;
    for (int i = 0; i < instances; ++i)
        jobs.push_back([&resolved, i] { return detail::bounds_instance(resolved, i); });
    const auto outcomes = detail::parallel_map(jobs, threads);

    int violations = 0;
    double worst_low = std::numeric_limits<double>::infinity();
    double worst_high = std::numeric_limits<double>::infinity();
    double worst_topk = std::numeric_limits<double>::infinity();
    for (const detail::BoundsOutcome& o : outcomes) {
        violations += o.ok ? 0 : 1;
        worst_low = std::min(worst_low, o.entropy_slack_low);
        worst_high = std::min(worst_high, o.entropy_slack_high);
        worst_topk = std::min(worst_topk, o.topk_slack);
    }

    nlohmann::json report{{"instances", instances},
                          {"violations", violations},
                          {"worst_entropy_slack_low", worst_low},
                          {"worst_entropy_slack_high", worst_high},
                          {"worst_topk_slack", worst_topk},
                          {"slack", kBoundSlack},
                          {"fault_injection", resolved.at("fault_injection")}};

    bool harness_ok = true;
    if (resolved.at("cv_harness").at("enabled").get<bool>()) {
        const detail::CvHarnessOutcome hc = detail::cv_harness_check(resolved.at("cv_harness"),
                                                                  threads);
        report["cv_harness"] = {{"gamma_min", hc.gamma_min}, {"rho_max", hc.rho_max},
                              {"cv_bound", hc.bound},      {"mean_cv", hc.mean_cv},
                              {"bootstrap_stderr", hc.stderr_boot},
                              {"ok", hc.ok}};
        harness_ok = hc.ok;
    }

    detail::write_file(std::filesystem::path(out_dir) / "bounds_report.json",
                       report.dump(2) + "\n");
    return (violations == 0 && harness_ok) ? kExitOk : kExitViolation;
}

// --- z-validate --------------------------------------------------------------

namespace detail {

inline nlohmann::json z_validate_defaults() {
    return nlohmann::json{
        {"dims", {{32, 8}, {128, 16}, {768, 48}}},
        {"kappas", {0.0, 0.4, 1.0, 2.0, 3.0, 4.2, 6.0, 8.0, 10.0}},
        {"mc_samples", 20000},
        {"seed", 0}};
}

struct ZRow {
    double kappa = 0.0;
    int d = 0, k = 0;
    double series = 0.0, saddle = 0.0, mc = 0.0, mc_stderr = 0.0, relerr = 0.0;
};

}  // namespace detail

inline int cmd_z_validate(const nlohmann::json& user_config, const std::string& out_dir,
                          int threads = 0) {
    nlohmann::json resolved;
    std::vector<std::pair<int, int>> dims;
    std::vector<double> kappas;
    try {
        resolved = detail::merged(detail::z_validate_defaults(), user_config);
        for (const nlohmann::json& dk : resolved.at("dims"))
            dims.emplace_back(dk[0].get<int>(), dk[1].get<int>());
        for (const nlohmann::json& kp : resolved.at("kappas")) kappas.push_back(kp.get<double>());
        if (dims.empty() || kappas.empty()) throw InvalidArgument("z-validate: empty grid");
        for (const auto& [d, k] : dims)
            if (k < 1 || k > d) throw InvalidArgument("z-validate: need 1 <= k <= d");
    } catch (const std::exception& e) {
        std::cerr << "z-validate: config error: " << e.what() << "\n";
        return kExitUsage;
    }
    write_manifest(out_dir, make_manifest("z-validate", resolved, {"z_validate.csv"}));

    const int mc_samples = resolved.at("mc_samples").get<int>();
    const std::uint64_t seed = resolved.at("seed").get<std::uint64_t>();

    std::vector<std::function<detail::ZRow()>> jobs;
    for (const auto& [d, k] : dims)
        for (double kap : kappas)
            jobs.push_back([d = d, k = k, kap, mc_samples, seed] {
                detail::ZRow row;
                row.kappa = kap;
                row.d = d;
                row.k = k;
                const ZQuery q{kap, d, k};
                row.series = z_series(q);
                row.saddle = z_saddlepoint(q);
                Rng rng = Rng(seed).substream("z-mc-" + std::to_string(d) + "-" +
                                              std::to_string(k) + "-" + csv_double(kap));
                const MonteCarloZ mc = z_montecarlo(q, mc_samples, rng);
                row.mc = mc.estimate;
                row.mc_stderr = mc.stderr_;
                row.relerr = std::abs(row.saddle - row.series) / row.series;
                return row;
            });
    const auto rows = detail::parallel_map(jobs, threads);

    std::string csv = "kappa,d,k,z_series,z_saddle,z_mc,mc_stderr,relerr_saddle\n";
    bool in_window_ok = true;
    for (const detail::ZRow& r : rows) {
        csv += csv_double(r.kappa) + "," + std::to_string(r.d) + "," + std::to_string(r.k) +
               "," + csv_double(r.series) + "," + csv_double(r.saddle) + "," +
               csv_double(r.mc) + "," + csv_double(r.mc_stderr) + "," + csv_double(r.relerr) +
               "\n";
        if (r.kappa >= 0.4 && r.kappa <= 4.2 && r.relerr > 0.015) in_window_ok = false;
        if (r.kappa > 4.2 && r.relerr > 0.05)
            std::cerr << "z-validate: kappa=" << r.kappa
                      << " outside the calibrated regime exceeds 5% relative error\n";
    }
    detail::write_file(std::filesystem::path(out_dir) / "z_validate.csv", csv);
    return in_window_ok ? kExitOk : kExitViolation;
}

// --- ablate ------------------------------------------------------------------

namespace detail {

inline nlohmann::json ablate_defaults() {
    nlohmann::json train = train_config_to_json(TrainConfig{});
    return nlohmann::json{
        {"axis", "beta"},
        {"values", {0.0, 0.01}},
        {"task",
         {{"n_experts", 8}, {"d", 128}, {"k", 8}, {"rho_star", 0.1}, {"sigma2", 0.1}}},
        {"train", train},
        {"seeds", {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19}},
        {"n_eval", 4000}};
}

struct AblateRow {
    double value = 0.0;
    std::uint64_t seed = 0;
    EvalMetrics metrics;
    double max_overlap = 0.0;
    bool diverged = false;
};

inline AblateRow ablate_run(const nlohmann::json& resolved, const std::string& axis,
                            double value, std::uint64_t seed) {
    AblateRow row;
    row.value = value;
    row.seed = seed;
    const SyntheticTask task = task_for_seed(resolved.at("task"), seed);
    TrainConfig cfg = train_config_from_json(resolved.at("train"));
    cfg.seed = seed;
    if (axis == "beta")
        cfg.beta = value;
    else if (axis == "rho0")
        cfg.rho0 = value;
    else if (axis == "rank")
        cfg.router_rank = static_cast<int>(value);
    else if (axis == "sampled_pairs")
        cfg.sampled_pairs = static_cast<int>(value);
    try {
        const TrainResult r = train(task, cfg);
        Rng eval_rng = Rng(seed).substream("ablate-eval");
        const Amortizer* am = r.amortized ? &r.amortizer : nullptr;
        row.metrics = evaluate(bank_router(r.bank, am, cfg.alpha_train), task,
                               resolved.at("n_eval").get<int>(), eval_rng);
        row.max_overlap = max_pairwise_overlap(r.bank);
    } catch (const Diverged&) {
        row.diverged = true;
        const double nan = std::numeric_limits<double>::quiet_NaN();
        row.metrics.assignment_accuracy = nan;
        row.metrics.load_cv = nan;
        row.metrics.mean_entropy = nan;
        row.max_overlap = nan;
    }
    return row;
}

}  // namespace detail

inline int cmd_ablate(const nlohmann::json& user_config, const std::string& out_dir,
                      int threads = 0) {
    nlohmann::json resolved;
    std::string axis;
    std::vector<double> values;
    std::vector<std::uint64_t> seeds;
    try {
        resolved = detail::merged(detail::ablate_defaults(), user_config);
        axis = resolved.at("axis").get<std::string>();
        if (axis != "beta" && axis != "rho0" && axis != "rank" && axis != "sampled_pairs")
            throw InvalidArgument("ablate: unknown axis " + axis);
        for (const nlohmann::json& v : resolved.at("values")) values.push_back(v.get<double>());
        if (values.empty()) throw InvalidArgument("ablate: empty value list");
        seeds = detail::seed_list(resolved);
    } catch (const std::exception& e) {
        std::cerr << "ablate: config error: " << e.what() << "\n";
        return kExitUsage;
    }
    write_manifest(out_dir, make_manifest("ablate", resolved,
                                          {"ablate_runs.csv", "ablate_summary.csv"}));

    std::vector<std::function<detail::AblateRow()>> jobs;
    for (double v : values)
        for (std::uint64_t s : seeds)
            jobs.push_back([&resolved, &axis, v, s] {
                return detail::ablate_run(resolved, axis, v, s);
            });
    std::vector<detail::AblateRow> rows;
    try {
        rows = detail::parallel_map(jobs, threads);
    } catch (const std::exception& e) {
        std::cerr << "ablate: run failed: " << e.what() << "\n";
        return kExitUsage;
    }

    std::string runs = "axis,value,seed,acc,cv,entropy,collapsed,max_overlap\n";
    for (const detail::AblateRow& r : rows) {
        runs += axis + "," + csv_double(r.value) + "," + std::to_string(r.seed) + "," +
                csv_double(r.metrics.assignment_accuracy) + "," +
                csv_double(r.metrics.load_cv) + "," + csv_double(r.metrics.mean_entropy) + ",";
        runs += r.diverged ? "nan" : detail::csv_bool(r.metrics.collapsed);
        runs += "," + csv_double(r.max_overlap) + "\n";
    }
    detail::write_file(std::filesystem::path(out_dir) / "ablate_runs.csv", runs);

    std::string summary =
        "axis,value,n_seeds,acc_mean,acc_std,cv_mean,cv_std,entropy_mean,"
        "collapse_rate,max_overlap_mean,diverged\n";
    for (double v : values) {
        std::vector<EvalMetrics> ok;
        double overlap_acc = 0.0;
        int diverged = 0, total = 0;
        for (const detail::AblateRow& r : rows)
            if (r.value == v) {
                ++total;
                if (r.diverged) {
                    ++diverged;
                } else {
                    ok.push_back(r.metrics);
                    overlap_acc += r.max_overlap;
                }
            }
        summary += axis + "," + csv_double(v) + "," + std::to_string(total) + ",";
        if (ok.empty()) {
            for (int i = 0; i < 7; ++i) summary += "nan,";
        } else {
            const Aggregate a = aggregate(ok);
            summary += csv_double(a.acc.mean) + "," + csv_double(a.acc.std) + "," +
                       csv_double(a.cv.mean) + "," + csv_double(a.cv.std) + "," +
                       csv_double(a.entropy.mean) + "," + csv_double(a.collapse_rate) + "," +
                       csv_double(overlap_acc / ok.size()) + ",";
        }
        summary += std::to_string(diverged) + "\n";
    }
    detail::write_file(std::filesystem::path(out_dir) / "ablate_summary.csv", summary);
    return kExitOk;
}

// --- rerun -------------------------------------------------------------------

// Replays a manifest's subcommand with its recorded resolved config. All
// result files are deterministic functions of that config, so the replay is
// byte-identical regardless of thread count.
inline int cmd_rerun(const std::string& manifest_path, const std::string& out_dir,
                     int threads = 0) {
    nlohmann::json manifest;
    std::string sub;
    try {
        manifest = detail::read_json_file(manifest_path);
        sub = manifest.at("subcommand").get<std::string>();
    } catch (const std::exception& e) {
        std::cerr << "rerun: cannot load manifest: " << e.what() << "\n";
        return kExitUsage;
    }
    const nlohmann::json& config = manifest.at("config");
    if (sub == "bench") return cmd_bench(config, out_dir, threads);
    if (sub == "alpha-sweep") return cmd_alpha_sweep(config, out_dir, threads);
    if (sub == "bounds") return cmd_bounds(config, out_dir, threads);
    if (sub == "z-validate") return cmd_z_validate(config, out_dir, threads);
    if (sub == "ablate") return cmd_ablate(config, out_dir, threads);
    std::cerr << "rerun: unknown subcommand in manifest: " << sub << "\n";
    return kExitUsage;
}

}  // namespace grmoe::cli
