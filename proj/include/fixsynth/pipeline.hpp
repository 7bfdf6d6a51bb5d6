#pragma once

// Run configuration and the file-based pipeline stages behind the command-line tool.
// Every stage reads and writes fixed file names under the output directory and leaves
// a manifest in <out>/manifests/<stage>.json.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fixsynth/attr_autoencoder.hpp"
#include "fixsynth/backtest.hpp"
#include "fixsynth/corrgan.hpp"
#include "fixsynth/market_data.hpp"
#include "fixsynth/simulation.hpp"

namespace fixsynth {

struct RunConfig {
    std::uint64_t seed = 0;  // master seed; stage seeds derive from it unless given explicitly
    std::size_t workers = 1;
    std::filesystem::path out = "fixsynth-out";

    std::optional<std::filesystem::path> csv;  // ingest source; synth-corpus uses `synth`
    SynthCorpusConfig synth;
    std::optional<std::string> test_start;     // first test date; else the trailing test_fraction of dates
    double test_fraction = 0.35;
    SnapshotOptions snapshots;

    GanConfig gan;
    AeConfig ae;
    std::size_t sample_count = 4000;
    MvConfig mv;
    GridConfig grid;
    std::map<std::string, std::uint64_t> seeds;  // explicit per-stage seeds; gan.seed / ae.seed land here too

    /// Desk-scale profile: n = 16, 5,000 GAN steps, 4,000 sampled matrices, 12 bond benchmarks.
    static RunConfig defaults();
    /// Relative csv paths resolve against `base_dir`.
    static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
    static RunConfig load(const std::filesystem::path& path);
    /// Everything that determines outputs; `out` and `workers` are recorded separately.
    nlohmann::json to_json() const;
    void validate() const;

    std::uint64_t stage_seed(const std::string& stage) const;
    GanConfig gan_config() const;  // with the effective seed
    AeConfig ae_config() const;
};

/// Fixed artifact names under the output directory.
namespace artifacts {
inline constexpr const char* panel = "panel.csv";
inline constexpr const char* train_snapshots = "train_snapshots.jsonl";
inline constexpr const char* test_panel = "test_panel.csv";
inline constexpr const char* gan = "gan.bin";
inline constexpr const char* gan_history = "gan_history.csv";
inline constexpr const char* samples = "samples.jsonl";
inline constexpr const char* ae = "ae.bin";
inline constexpr const char* ae_history = "ae_history.csv";
inline constexpr const char* synthetic_snapshots = "synthetic_snapshots.jsonl";
inline constexpr const char* metrics = "metrics.csv";
inline constexpr const char* experiments = "experiments.jsonl";
inline constexpr const char* table4 = "table4.csv";
inline constexpr const char* summary = "summary.txt";
}  // namespace artifacts

/// Train/test split of a panel by date.
struct PanelSplit {
    ReturnPanel train, test;
};
PanelSplit split_panel(const ReturnPanel& panel, const RunConfig& cfg);

/// Stage results are small JSON summaries, also stored in the stage manifest.
nlohmann::json stage_ingest(const RunConfig& cfg);
nlohmann::json stage_synth_corpus(const RunConfig& cfg);
nlohmann::json stage_train_gan(const RunConfig& cfg);
nlohmann::json stage_sample(const RunConfig& cfg);
nlohmann::json stage_train_ae(const RunConfig& cfg);
nlohmann::json stage_generate_dataset(const RunConfig& cfg);
nlohmann::json stage_metrics(const RunConfig& cfg);
nlohmann::json stage_backtest(const RunConfig& cfg);
nlohmann::json stage_report(const RunConfig& cfg);

/// Every stage in order: corpus (ingest when csv is set), models, samples, dataset,
/// metrics, backtest.
nlohmann::json run_pipeline(const RunConfig& cfg);

/// Lowercase hex SHA-256 of a file's bytes or of a string.
std::string sha256_file(const std::filesystem::path& path);
std::string sha256_hex(const std::string& bytes);

std::string version_string();

/// Stderr logger at the level named by FIXSYNTH_LOG (trace..off; default info).
void init_logging();

}  // namespace fixsynth
