// fixsynth <command> [--config <path>] [--seed <u64>] [--workers <n>] [--out <dir>]

#include <cstdint>
#include <exception>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "fixsynth/error.hpp"
#include "fixsynth/parallel.hpp"
#include "fixsynth/pipeline.hpp"

namespace {

using Stage = std::function<nlohmann::json(const fixsynth::RunConfig&)>;

const std::map<std::string, Stage>& stages() {
    static const std::map<std::string, Stage> m = {
        {"ingest", fixsynth::stage_ingest},
        {"synth-corpus", fixsynth::stage_synth_corpus},
        {"train-gan", fixsynth::stage_train_gan},
        {"sample", fixsynth::stage_sample},
        {"train-ae", fixsynth::stage_train_ae},
        {"generate-dataset", fixsynth::stage_generate_dataset},
        {"metrics", fixsynth::stage_metrics},
        {"backtest", fixsynth::stage_backtest},
        {"report", fixsynth::stage_report},
        {"run", fixsynth::run_pipeline},
    };
    return m;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Synthetic correlation matrices and attribute vectors for tracking-error portfolio construction"};
    app.require_subcommand(1, 1);
    app.set_version_flag("--version", fixsynth::version_string());

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> workers;
    std::string out;
    app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "master seed (overrides the config)");
    app.add_option("--workers", workers, "worker threads (overrides the config)")->check(CLI::PositiveNumber);
    app.add_option("--out", out, "output directory (overrides the config)");
    app.fallthrough();

    const std::map<std::string, std::string> help = {
        {"ingest", "read a return CSV, split by date and build training snapshots"},
        {"synth-corpus", "generate the synthetic market, split by date and build training snapshots"},
        {"train-gan", "train the correlation GAN on the training snapshots"},
        {"sample", "sample correlation matrices from the trained GAN"},
        {"train-ae", "train the encoder-decoder on the training snapshots"},
        {"generate-dataset", "attach generated attribute vectors to the sampled matrices"},
        {"metrics", "score empirical and generated matrices"},
        {"backtest", "run the experiment grid and write the comparison table"},
        {"report", "rebuild the comparison table from experiments.jsonl"},
        {"run", "every stage in order"},
    };
    for (const auto& [name, text] : help) app.add_subcommand(name, text);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    fixsynth::init_logging();
    const std::string command = app.get_subcommands().front()->get_name();
    try {
        fixsynth::RunConfig cfg;
        if (config_path.empty()) {
            cfg = fixsynth::RunConfig::defaults();
        } else {
            cfg = fixsynth::RunConfig::load(config_path);
        }
        if (seed) cfg.seed = *seed;
        if (workers) cfg.workers = *workers;
        if (!out.empty()) cfg.out = out;
        cfg.validate();
        fixsynth::set_default_workers(cfg.workers);

        const auto result = stages().at(command)(cfg);
        std::cout << result.dump(2) << '\n';
        return 0;
    } catch (const fixsynth::ValidationError& e) {
        spdlog::error("{}: {}", command, e.what());
        return 1;
    } catch (const fixsynth::NumericalError& e) {
        spdlog::error("{}: {}", command, e.what());
        return 2;
    } catch (const std::exception& e) {
        spdlog::error("{}: {}", command, e.what());
        return 2;
    }
}
