// morbench run <stage|all> --config <file> [--set k=v]... [--deterministic] [--seed N]
//
// Exit codes: 0 success, 2 invalid input or missing artifacts, 3 numerical failure.

#include "morbench/bench/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

int run_command(const std::string& stage, const std::string& config_path,
                const std::vector<std::string>& overrides, bool deterministic,
                std::optional<std::uint64_t> seed, std::optional<std::string> out_dir, bool force) {
    using namespace morbench::bench;
    ExperimentConfig cfg = load_config(config_path);
    for (const auto& o : overrides) cfg = apply_override(cfg, o);
    if (deterministic) cfg.deterministic = true;
    if (seed) cfg.seed = *seed;
    if (out_dir) cfg.output_dir = *out_dir;
    validate(cfg);

    Pipeline p(cfg, force);
    std::vector<StageResult> results;
    if (stage == "all")
        results = p.run_all();
    else
        results.push_back(p.run(parse_stage(stage)));
    for (const auto& r : results)
        std::cout << stage_name(r.stage) << ": " << (r.reused ? "reused" : "ran") << " (key "
                  << r.key.substr(0, 12) << ")\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Model-order-reduction benchmark pipeline for the 2D inviscid Burgers problem"};
    app.require_subcommand(1);
    auto* run = app.add_subcommand("run", "run one pipeline stage (or all of them)");
    std::string stage, config_path;
    std::vector<std::string> overrides;
    bool deterministic = false, force = false, verbose = false, quiet = false;
    std::uint64_t seed_value = 0;
    std::string out_dir;
    run->add_option("stage", stage, "hdm, pod, train, ecsw, online, report or all")->required();
    run->add_option("--config", config_path, "experiment config file")->required();
    run->add_option("--set", overrides, "override a config field, e.g. --set ann.max_epochs=300");
    run->add_flag("--deterministic", deterministic, "require bitwise-reproducible execution");
    auto* seed_opt = run->add_option("--seed", seed_value, "random seed (overrides the config)");
    auto* out_opt = run->add_option("--output-dir", out_dir, "output directory (overrides the config)");
    run->add_flag("--force", force, "rerun even when cached artifacts are up to date");
    run->add_flag("-v,--verbose", verbose, "progress messages");
    run->add_flag("-q,--quiet", quiet, "suppress warnings");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    morbench::log::set_level(quiet     ? morbench::log::Level::quiet
                             : verbose ? morbench::log::Level::info
                                       : morbench::log::Level::warn);
    try {
        return run_command(stage, config_path, overrides, deterministic,
                           seed_opt->count() ? std::optional<std::uint64_t>(seed_value) : std::nullopt,
                           out_opt->count() ? std::optional<std::string>(out_dir) : std::nullopt, force);
    } catch (const morbench::ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const morbench::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 3;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
