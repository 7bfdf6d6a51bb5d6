#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "fixsynth/pipeline.hpp"
#include "fixsynth/rng.hpp"
#include "unit/helpers.hpp"

using namespace fixsynth;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Stage progress goes to stderr at warn level unless FIXSYNTH_LOG asks for more.
const bool quiet_logs = [] {
    setenv("FIXSYNTH_LOG", "warn", 0);
    init_logging();
    return true;
}();

json small_config() {
    return json::parse(R"({
        "seed": 5,
        "data": {"synth": {"n_assets": 8, "n_fx": 2, "blocks": 2, "weeks": 300}},
        "gan": {"n": 8, "generator_channels": [8], "critic_channels": [8], "steps": 20},
        "ae": {"n": 8, "encoder_channels": [4], "steps": 30, "batch": 16},
        "sample": {"count": 60},
        "grid": {"targets_bps": [20, 50]}
    })");
}

RunConfig small(const std::string& dir) {
    auto cfg = RunConfig::from_json(small_config());
    cfg.out = testing::temp_path(dir);
    fs::remove_all(cfg.out);
    return cfg;
}

std::string error_of(const json& j) {
    try {
        RunConfig::from_json(j);
    } catch (const ValidationError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_CASE("config errors name the field path") {
    auto j = small_config();
    j["gan"]["stepz"] = 1;
    CHECK(error_of(j).find("gan.stepz") != std::string::npos);

    j = small_config();
    j["grid"]["eval"]["period_weeks"] = "four";
    CHECK(error_of(j).find("grid.eval.period_weeks") != std::string::npos);

    j = small_config();
    j["ae"]["n"] = 16;
    CHECK(error_of(j).find("ae.n") != std::string::npos);

    j = small_config();
    j["data"]["csv"] = "/no/such/file.csv";
    j["data"].erase("synth");
    CHECK(error_of(j).find("data.csv") != std::string::npos);

    j = small_config();
    j["split"] = {{"test_start", "2010-13-40"}};
    CHECK(error_of(j).find("split.test_start") != std::string::npos);

    j = small_config();
    j["grid"]["kinds"] = {"FR", "XX"};
    CHECK(error_of(j).find("grid.kinds") != std::string::npos);
}

TEST_CASE("defaults are the desk-scale profile") {
    const auto d = RunConfig::defaults();
    CHECK(d.gan.n == 16);
    CHECK(d.gan.steps == 5000);
    CHECK(d.sample_count == 4000);
    CHECK(d.synth.n_assets - d.synth.n_fx == 12);
    CHECK(RunConfig::from_json(json::object()).to_json() == d.to_json());
}

TEST_CASE("stage seeds fan out from the master seed") {
    auto cfg = RunConfig::from_json(small_config());
    CHECK(cfg.stage_seed("train-gan") == rng::derive_seed(5, "train-gan"));
    CHECK(cfg.stage_seed("train-gan") != cfg.stage_seed("train-ae"));
    CHECK(cfg.gan_config().seed == cfg.stage_seed("train-gan"));

    auto j = small_config();
    j["gan"]["seed"] = 42;
    j["seeds"] = {{"sample", 9}};
    cfg = RunConfig::from_json(j);
    CHECK(cfg.gan_config().seed == 42);
    CHECK(cfg.stage_seed("sample") == 9);
    CHECK(cfg.stage_seed("train-ae") == rng::derive_seed(5, "train-ae"));
    // Round trip keeps explicit seeds.
    CHECK(RunConfig::from_json(cfg.to_json()).stage_seed("train-gan") == 42);
}

TEST_CASE("date split puts the test period strictly after training") {
    auto cfg = RunConfig::from_json(small_config());
    const auto panel = synth_corpus(cfg.synth, 1);
    auto s = split_panel(panel, cfg);
    CHECK(s.train.n_dates() + s.test.n_dates() == panel.n_dates());
    CHECK(s.train.dates.back() < s.test.dates.front());
    CHECK(s.test.n_dates() == 105);  // round(300 * 0.35)

    cfg.test_start = format_date(panel.dates[200]);
    s = split_panel(panel, cfg);
    CHECK(s.train.n_dates() == 200);
    CHECK(s.test.dates.front() == panel.dates[200]);

    cfg.test_start = format_date(panel.dates[10]);
    CHECK_THROWS_AS(split_panel(panel, cfg), ValidationError);
    cfg.test_start = "2100-01-01";
    CHECK_THROWS_AS(split_panel(panel, cfg), ValidationError);
}

TEST_CASE("stages report missing upstream artifacts") {
    const auto cfg = small("pipe_missing");
    for (auto stage : {stage_train_gan, stage_train_ae, stage_sample, stage_metrics, stage_report}) {
        try {
            stage(cfg);
            FAIL("expected a ValidationError");
        } catch (const ValidationError& e) {
            CHECK(std::string(e.what()).find("missing upstream artifact") != std::string::npos);
        }
    }
    stage_synth_corpus(cfg);
    try {
        stage_backtest(cfg);
        FAIL("expected a ValidationError");
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("gan.bin") != std::string::npos);
        CHECK(msg.find("ae.bin") != std::string::npos);
    }
}

TEST_CASE("stages are idempotent and manifests record hashes and seeds") {
    const auto cfg = small("pipe_idem");
    run_pipeline(cfg);
    const auto first = json::parse(std::ifstream(cfg.out / "manifests" / "backtest.json"));
    CHECK(first["command"] == "backtest");
    CHECK(first["master_seed"] == 5);
    CHECK(first["stage_seeds"]["backtest"] == cfg.stage_seed("backtest"));
    CHECK(first["config_sha256"] == sha256_hex(cfg.to_json().dump()));
    CHECK(first["outputs"]["table4.csv"] == sha256_file(cfg.out / artifacts::table4));
    CHECK(first["inputs"].contains("gan.bin"));

    // Re-running a stage over the same inputs reproduces its outputs and manifest exactly.
    const auto gan_hash = sha256_file(cfg.out / artifacts::gan);
    stage_train_gan(cfg);
    CHECK(sha256_file(cfg.out / artifacts::gan) == gan_hash);
    stage_backtest(cfg);
    const auto second = json::parse(std::ifstream(cfg.out / "manifests" / "backtest.json"));
    CHECK(second == first);

    // report rebuilds the same table from experiments.jsonl.
    const auto table = sha256_file(cfg.out / artifacts::table4);
    fs::remove(cfg.out / artifacts::table4);
    stage_report(cfg);
    CHECK(sha256_file(cfg.out / artifacts::table4) == table);

    // Metrics carry the empirical row plus the generated one.
    std::ifstream f(cfg.out / artifacts::metrics);
    std::string line;
    int rows = 0;
    while (std::getline(f, line)) ++rows;
    CHECK(rows == 3);
}

TEST_CASE("worker count does not change results") {
    auto a = small("pipe_w1");
    auto b = small("pipe_w3");
    b.workers = 3;
    run_pipeline(a);
    run_pipeline(b);
    for (auto name : {artifacts::gan, artifacts::samples, artifacts::ae, artifacts::synthetic_snapshots, artifacts::table4})
        CHECK(sha256_file(a.out / name) == sha256_file(b.out / name));
}

TEST_CASE("sha256 known answers") {
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
