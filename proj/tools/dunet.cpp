// dunet: synth | scatter | train | eval | compare
//
// Exit codes: 0 success, 1 runtime failure, 2 unreadable or incompatible
// checkpoint, 64 usage error, 65 invalid config. Failures print one line
// "error: <kind>: <message>" on stderr.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dunet/checkpoint.hpp"
#include "dunet/experiment.hpp"
#include "dunet/kernels.hpp"

namespace ex = dunet::experiment;
namespace fs = std::filesystem;

namespace {

int fail(const char* kind, const std::string& msg, int code) {
    std::string line = msg;
    for (char& c : line)
        if (c == '\n' || c == '\r') c = ' ';
    std::cerr << "error: " << kind << ": " << line << "\n";
    return code;
}

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void apply_thread_env() {
    const char* env = std::getenv("DUNET_NUM_THREADS");
    if (!env || !*env) return;
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (*end != '\0' || n < 1 || n > 4096) throw UsageError("DUNET_NUM_THREADS must be a positive integer, got '" + std::string(env) + "'");
    dunet::kernels::set_thread_count(static_cast<int>(n));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DU-Net hybrid segmentation: synthetic data, scattering, training and evaluation"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "dunet 1.0.0");

    auto* synth = app.add_subcommand("synth", "Write a synthetic fundus or ultrasound dataset");
    std::string task = "fundus";
    int n = 0, size = 128, seed_synth = 0;
    std::optional<int> test;
    fs::path out;
    synth->add_option("--task", task, "fundus or ultrasound")->check(CLI::IsMember({"fundus", "ultrasound"}));
    synth->add_option("--n", n, "number of samples")->required()->check(CLI::Range(1, 1000000));
    synth->add_option("--seed", seed_synth, "generator seed")->check(CLI::NonNegativeNumber);
    synth->add_option("--size", size, "image side in pixels")->check(CLI::Range(32, 4096));
    synth->add_option("--test", test, "samples marked as test (default n/5)")->check(CLI::NonNegativeNumber);
    synth->add_option("--out", out, "output directory")->required();

    auto* scatter = app.add_subcommand("scatter", "Scattering coefficients of one PNG as an SCT1 file");
    fs::path input, sct_out;
    dunet::scattering::ScatteringConfig scfg;
    bool color = false;
    scatter->add_option("--input", input, "input PNG")->required()->check(CLI::ExistingFile);
    scatter->add_option("--J", scfg.J, "number of scales")->check(CLI::PositiveNumber);
    scatter->add_option("--L", scfg.L, "orientations per scale")->check(CLI::PositiveNumber);
    scatter->add_option("--order", scfg.order, "maximum order (0, 1 or 2)")->check(CLI::Range(0, 2));
    scatter->add_flag("--color", color, "transform RGB channels separately instead of luma");
    scatter->add_option("--out", sct_out, "output SCT1 file")->required();

    auto* train = app.add_subcommand("train", "Train the model described by a config");
    fs::path config;
    std::optional<std::uint64_t> seed;
    std::optional<fs::path> warm, output;
    std::optional<int> epochs;
    train->add_option("--config", config, "experiment JSON")->required()->check(CLI::ExistingFile);
    train->add_option("--seed", seed, "override the config seed");
    train->add_option("--warm-start", warm, "initialize from this checkpoint")->check(CLI::ExistingFile);
    train->add_option("--epochs", epochs, "override the epoch count")->check(CLI::NonNegativeNumber);
    train->add_option("--output", output, "override the output directory");

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the eval split");
    std::optional<fs::path> checkpoint;
    std::optional<std::string> split;
    eval->add_option("--config", config, "experiment JSON")->required()->check(CLI::ExistingFile);
    eval->add_option("--checkpoint", checkpoint, "checkpoint (default <output_dir>/model.sgw)");
    eval->add_option("--split", split, "train, test or all")->check(CLI::IsMember({"train", "test", "all"}));
    eval->add_option("--seed", seed, "override the config seed");
    eval->add_option("--output", output, "override the output directory");

    auto* cmp = app.add_subcommand("compare", "Side-by-side table of evaluated runs");
    std::vector<fs::path> configs;
    fs::path table_out;
    bool run_missing = false;
    cmp->add_option("configs", configs, "experiment JSON files")->required()->check(CLI::ExistingFile);
    cmp->add_option("--out", table_out, "CSV output (default: stdout table only)");
    cmp->add_flag("--run", run_missing, "train and evaluate runs whose summary is missing");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("usage", e.what(), 64);
    }

    auto load = [&](const fs::path& p) {
        ex::ExperimentConfig cfg = ex::load_config(p);
        if (seed) ex::override_seed(cfg, *seed);
        if (output) cfg.output_dir = *output;
        return cfg;
    };

    try {
        apply_thread_env();
        if (*synth) {
            const int t = test.value_or(n / 5);
            if (t > n) throw UsageError("--test must not exceed --n");
            ex::synth(dunet::pipeline::task_from_string(task), n, t, static_cast<std::uint64_t>(seed_synth), size, out);
            std::cout << "wrote " << n << " samples to " << out.generic_string() << "\n";
        } else if (*scatter) {
            const auto res = ex::scatter_png(input, scfg, color, sct_out);
            std::cout << "wrote " << res.coeffs.shape().str() << " coefficients to " << sct_out.generic_string() << "\n";
        } else if (*train) {
            ex::ExperimentConfig cfg = load(config);
            if (warm) cfg.train.warm_start = *warm;
            if (epochs) cfg.train.epochs = *epochs;
            cfg.train.validate();
            const auto run = ex::run_train(cfg, &std::cout);
            (void)run;
        } else if (*eval) {
            ex::ExperimentConfig cfg = load(config);
            if (split) cfg.eval.split = *split;
            ex::run_eval(cfg, checkpoint.value_or(cfg.output_dir / "model.sgw"), &std::cout);
            std::cout << "wrote " << ex::eval_dir(cfg).generic_string() << "\n";
        } else if (*cmp) {
            std::vector<ex::ExperimentConfig> runs;
            for (const auto& p : configs) runs.push_back(load(p));
            if (run_missing) {
                for (const auto& cfg : runs) {
                    if (fs::exists(ex::eval_dir(cfg) / "summary.json")) continue;
                    ex::run_train(cfg, &std::cout);
                    ex::run_eval(cfg, cfg.output_dir / "model.sgw", &std::cout);
                }
            }
            const auto rows = ex::compare(runs);
            if (!table_out.empty()) ex::write_compare_csv(table_out, rows);
            std::cout << ex::format_compare_table(rows);
        }
    } catch (const UsageError& e) {
        return fail("usage", e.what(), 64);
    } catch (const ex::ConfigError& e) {
        return fail("config", e.what(), 65);
    } catch (const dunet::CheckpointError& e) {
        return fail("checkpoint", e.what(), 2);
    } catch (const std::exception& e) {
        return fail("runtime", e.what(), 1);
    }
    return 0;
}
