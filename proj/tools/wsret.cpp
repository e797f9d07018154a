// Command-line front end: gen-data, compute-proxy, train, embed, retrieve,
// eval, bench, report.
#include <omp.h>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "wsret/error.hpp"
#include "wsret/pipeline.hpp"

namespace fs = std::filesystem;
using namespace wsret;

namespace {

struct Common {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string data_dir;
    std::string run_dir;
    int threads = 0;
};

ExperimentConfig resolve_config(const Common& c) {
    ExperimentConfig cfg = c.config_path.empty() ? ExperimentConfig{} : load_config(c.config_path);
    for (const auto& kv : c.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw Error("--set expects key=value, got " + kv);
        set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
}

fs::path resolve_run_dir(const Common& c, const ExperimentConfig& cfg) {
    return c.run_dir.empty() ? run_directory(cfg, c.data_dir) : fs::path(c.run_dir);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Weakly-supervised differentiable top-k voxel shape retrieval"};
    app.require_subcommand(1);
    Common c;
    app.add_option("--config", c.config_path, "key=value config file")->check(CLI::ExistingFile);
    app.add_option("--set", c.overrides, "override one config key (key=value), repeatable");
    app.add_option("--threads", c.threads, "cap on worker threads (0 = default)")->check(CLI::NonNegativeNumber);

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
    bool force = false;
    gen->add_option("--out", c.data_dir, "dataset directory")->required();
    gen->add_flag("--force", force, "overwrite an existing dataset");

    auto* proxy = app.add_subcommand("compute-proxy", "build and cache the proxy similarity matrix");
    auto* train = app.add_subcommand("train", "train the encoder");
    auto* embed = app.add_subcommand("embed", "embed every object with a checkpoint");
    auto* retrieve = app.add_subcommand("retrieve", "top-k retrieval for the test queries");
    auto* eval = app.add_subcommand("eval", "retrieve and evaluate the test queries");
    auto* report = app.add_subcommand("report", "print learned vs proxy-oracle metrics");
    std::string checkpoint, oracle;
    for (auto* sub : {proxy, train, embed, retrieve, eval, report}) {
        sub->add_option("--data", c.data_dir, "dataset directory")->required();
        sub->add_option("--run-dir", c.run_dir, "run directory (default: <data>/runs/<config hash>)");
    }
    for (auto* sub : {embed, eval}) sub->add_option("--checkpoint", checkpoint, "checkpoint (default: final)");
    for (auto* sub : {retrieve, eval})
        sub->add_option("--oracle", oracle, "retrieve directly by the proxy matrix")->check(CLI::IsMember({"proxy"}));

    auto* bench = app.add_subcommand("bench", "estimator variance of the perturbed top-k vs sample count");
    int bench_n = 40, bench_k = 5, bench_repeats = 20;
    double bench_sigma = 0.05;
    std::uint64_t bench_seed = 1;
    bench->add_option("--n", bench_n, "candidates");
    bench->add_option("--k", bench_k, "k");
    bench->add_option("--sigma", bench_sigma, "noise scale");
    bench->add_option("--repeats", bench_repeats, "independent repeats per sample count");
    bench->add_option("--seed", bench_seed, "seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (c.threads > 0) omp_set_num_threads(c.threads);
        if (*bench) {
            cmd_bench(bench_n, bench_k, bench_sigma, bench_repeats, bench_seed, std::cout);
            return 0;
        }
        const ExperimentConfig cfg = resolve_config(c);
        if (*gen) {
            cmd_gen_data(cfg, c.data_dir, force, std::cout);
            return 0;
        }
        const fs::path run_dir = resolve_run_dir(c, cfg);
        if (*proxy) cmd_compute_proxy(cfg, c.data_dir, std::cout);
        if (*train) {
            cmd_train(cfg, c.data_dir, run_dir, std::cout);
            std::cout << "run directory: " << run_dir.string() << "\n";
        }
        if (*embed) cmd_embed(cfg, c.data_dir, run_dir, checkpoint, std::cout);
        if (*retrieve) cmd_retrieve(cfg, c.data_dir, run_dir, !oracle.empty(), std::cout);
        if (*eval) cmd_eval(cfg, c.data_dir, run_dir, checkpoint, !oracle.empty(), std::cout);
        if (*report) std::cout << cmd_report(run_dir);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
