// Experiment driver. Every subcommand reads a JSON config (defaults apply for
// missing keys), writes a manifest before any result file, and exits 0 on
// success, 1 when a checked property is violated, 2 on usage errors.
#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "grmoe/cli.hpp"

namespace {

nlohmann::json load_config(const std::string& path) {
    if (path.empty()) return nlohmann::json::object();
    return grmoe::cli::detail::read_json_file(path);
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t next = text.find(',', pos);
        if (next == std::string::npos) next = text.size();
        const std::string tok = text.substr(pos, next - pos);
        if (!tok.empty()) seeds.push_back(std::stoull(tok));
        pos = next + 1;
    }
    if (seeds.empty()) throw grmoe::InvalidArgument("--seeds: empty list");
    return seeds;
}

struct CommonFlags {
    std::string config_path;
    std::string out_dir = ".";
    std::string seeds;
    int threads = 0;
};

void add_common(CLI::App* sub, CommonFlags& flags) {
    sub->add_option("--config", flags.config_path, "JSON config file");
    sub->add_option("--out", flags.out_dir, "output directory")->capture_default_str();
    sub->add_option("--seeds", flags.seeds, "comma-separated seed list override");
    sub->add_option("--threads", flags.threads, "worker threads (0 = hardware)");
}

// --seeds overrides the config's seed list (bench/ablate) or scalar seed.
nlohmann::json resolve_config(const CommonFlags& flags, bool seed_is_list) {
    nlohmann::json config = load_config(flags.config_path);
    if (!flags.seeds.empty()) {
        const std::vector<std::uint64_t> seeds = parse_seed_list(flags.seeds);
        if (seed_is_list)
            config["seeds"] = seeds;
        else
            config["seed"] = seeds.front();
    }
    return config;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Grassmannian mixture-of-experts experiment driver"};
    app.set_version_flag("--version", grmoe::cli::kToolVersion);
    app.require_subcommand(1);

    CommonFlags bench_f, sweep_f, bounds_f, zval_f, ablate_f, rerun_f;
    std::string manifest_path;

    CLI::App* bench = app.add_subcommand("bench", "method comparison across seeds");
    add_common(bench, bench_f);
    CLI::App* sweep = app.add_subcommand("alpha-sweep", "sparsity dial sweep on a checkpoint");
    add_common(sweep, sweep_f);
    CLI::App* bounds = app.add_subcommand("bounds", "randomized bound verification");
    add_common(bounds, bounds_f);
    CLI::App* zval = app.add_subcommand("z-validate", "normalizer cross-validation grid");
    add_common(zval, zval_f);
    CLI::App* ablate = app.add_subcommand("ablate", "regularizer/rank ablations");
    add_common(ablate, ablate_f);
    CLI::App* rerun = app.add_subcommand("rerun", "replay a run from its manifest");
    rerun->add_option("manifest", manifest_path, "path to manifest.json")->required();
    add_common(rerun, rerun_f);

    CLI11_PARSE(app, argc, argv);

    try {
        if (bench->parsed())
            return grmoe::cli::cmd_bench(resolve_config(bench_f, true), bench_f.out_dir,
                                         bench_f.threads);
        if (sweep->parsed())
            return grmoe::cli::cmd_alpha_sweep(resolve_config(sweep_f, false), sweep_f.out_dir,
                                               sweep_f.threads);
        if (bounds->parsed())
            return grmoe::cli::cmd_bounds(resolve_config(bounds_f, false), bounds_f.out_dir,
                                          bounds_f.threads);
        if (zval->parsed())
            return grmoe::cli::cmd_z_validate(resolve_config(zval_f, false), zval_f.out_dir,
                                              zval_f.threads);
        if (ablate->parsed())
            return grmoe::cli::cmd_ablate(resolve_config(ablate_f, true), ablate_f.out_dir,
                                          ablate_f.threads);
        if (rerun->parsed())
            return grmoe::cli::cmd_rerun(manifest_path, rerun_f.out_dir, rerun_f.threads);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return grmoe::cli::kExitUsage;
    }
    return grmoe::cli::kExitUsage;
}
