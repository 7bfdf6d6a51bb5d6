#include "fixsynth/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "fixsynth/corr_metrics.hpp"
#include "fixsynth/error.hpp"
#include "fixsynth/json_fields.hpp"
#include "fixsynth/parallel.hpp"
#include "fixsynth/rng.hpp"

#ifndef FIXSYNTH_VERSION
#define FIXSYNTH_VERSION "0.0.0"
#endif

namespace fixsynth {

namespace fs = std::filesystem;
namespace jf = json_fields;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Sub-config parsing

SynthCorpusConfig synth_from_json(const json& j, const std::string& path) {
    jf::reject_unknown(j, path, {"n_assets", "n_fx", "blocks", "weeks", "start_date", "intra_corr_lo", "intra_corr_hi",
                                 "loading_lo", "loading_hi", "vol_lo", "vol_hi", "fx_vol_lo", "fx_vol_hi", "yield_lo",
                                 "yield_hi", "fx_carry", "er_noise", "er_reversion", "spread_beta", "regimes"});
    SynthCorpusConfig c;
    jf::read(j, path, "n_assets", c.n_assets);
    jf::read(j, path, "n_fx", c.n_fx);
    jf::read(j, path, "blocks", c.blocks);
    jf::read(j, path, "weeks", c.weeks);
    jf::read(j, path, "start_date", c.start_date);
    jf::read(j, path, "intra_corr_lo", c.intra_corr_lo);
    jf::read(j, path, "intra_corr_hi", c.intra_corr_hi);
    jf::read(j, path, "loading_lo", c.loading_lo);
    jf::read(j, path, "loading_hi", c.loading_hi);
    jf::read(j, path, "vol_lo", c.vol_lo);
    jf::read(j, path, "vol_hi", c.vol_hi);
    jf::read(j, path, "fx_vol_lo", c.fx_vol_lo);
    jf::read(j, path, "fx_vol_hi", c.fx_vol_hi);
    jf::read(j, path, "yield_lo", c.yield_lo);
    jf::read(j, path, "yield_hi", c.yield_hi);
    jf::read(j, path, "fx_carry", c.fx_carry);
    jf::read(j, path, "er_noise", c.er_noise);
    jf::read(j, path, "er_reversion", c.er_reversion);
    jf::read(j, path, "spread_beta", c.spread_beta);
    if (j.contains("regimes")) {
        const auto rpath = jf::join(path, "regimes");
        jf::require(j.at("regimes").is_array(), rpath, "expected an array");
        for (std::size_t i = 0; i < j.at("regimes").size(); ++i) {
            const auto& r = j.at("regimes")[i];
            const auto p = rpath + "[" + std::to_string(i) + "]";
            jf::reject_unknown(r, p, {"start_week", "corr_scale", "vol_scale"});
            RegimeShift s;
            jf::read(r, p, "start_week", s.start_week);
            jf::read(r, p, "corr_scale", s.corr_scale);
            jf::read(r, p, "vol_scale", s.vol_scale);
            c.regimes.push_back(s);
        }
    }
    return c;
}

json synth_to_json(const SynthCorpusConfig& c) {
    json regimes = json::array();
    for (const auto& r : c.regimes)
        regimes.push_back({{"start_week", r.start_week}, {"corr_scale", r.corr_scale}, {"vol_scale", r.vol_scale}});
    return {{"n_assets", c.n_assets},       {"n_fx", c.n_fx},
            {"blocks", c.blocks},           {"weeks", c.weeks},
            {"start_date", c.start_date},   {"intra_corr_lo", c.intra_corr_lo},
            {"intra_corr_hi", c.intra_corr_hi}, {"loading_lo", c.loading_lo},
            {"loading_hi", c.loading_hi},   {"vol_lo", c.vol_lo},
            {"vol_hi", c.vol_hi},           {"fx_vol_lo", c.fx_vol_lo},
            {"fx_vol_hi", c.fx_vol_hi},     {"yield_lo", c.yield_lo},
            {"yield_hi", c.yield_hi},       {"fx_carry", c.fx_carry},
            {"er_noise", c.er_noise},       {"er_reversion", c.er_reversion},
            {"spread_beta", c.spread_beta}, {"regimes", regimes}};
}

void read_grid(const json& j, const std::string& path, GridConfig& g) {
    jf::reject_unknown(j, path, {"targets_bps", "kinds", "benchmarks", "bounds", "qp", "eval"});
    jf::read(j, path, "targets_bps", g.targets_bps);
    jf::read(j, path, "benchmarks", g.benchmarks);
    if (j.contains("kinds")) {
        std::vector<std::string> kinds;
        jf::read(j, path, "kinds", kinds);
        g.kinds.clear();
        for (const auto& k : kinds) {
            try {
                g.kinds.push_back(parse_sim_source(k));
            } catch (const ValidationError&) {
                throw ValidationError("config field '" + jf::join(path, "kinds") + "': unknown kind '" + k + "' (FR or MV)");
            }
        }
    }
    if (j.contains("bounds")) {
        const auto& b = j.at("bounds");
        const auto p = jf::join(path, "bounds");
        jf::reject_unknown(b, p, {"bond_lo", "bond_hi", "fx_lo", "fx_hi"});
        jf::read(b, p, "bond_lo", g.bounds.bond_lo);
        jf::read(b, p, "bond_hi", g.bounds.bond_hi);
        jf::read(b, p, "fx_lo", g.bounds.fx_lo);
        jf::read(b, p, "fx_hi", g.bounds.fx_hi);
    }
    if (j.contains("qp")) {
        const auto& q = j.at("qp");
        const auto p = jf::join(path, "qp");
        jf::reject_unknown(q, p, {"eps_abs", "eps_rel", "eps_infeasible", "max_iter", "rho", "sigma", "alpha",
                                  "adaptive_rho", "adapt_interval", "polish"});
        jf::read(q, p, "eps_abs", g.qp.eps_abs);
        jf::read(q, p, "eps_rel", g.qp.eps_rel);
        jf::read(q, p, "eps_infeasible", g.qp.eps_infeasible);
        jf::read(q, p, "max_iter", g.qp.max_iter);
        jf::read(q, p, "rho", g.qp.rho);
        jf::read(q, p, "sigma", g.qp.sigma);
        jf::read(q, p, "alpha", g.qp.alpha);
        jf::read(q, p, "adaptive_rho", g.qp.adaptive_rho);
        jf::read(q, p, "adapt_interval", g.qp.adapt_interval);
        jf::read(q, p, "polish", g.qp.polish);
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        const auto p = jf::join(path, "eval");
        jf::reject_unknown(e, p, {"period_weeks", "periods_per_year", "min_periods"});
        jf::read(e, p, "period_weeks", g.eval.period_weeks);
        jf::read(e, p, "periods_per_year", g.eval.periods_per_year);
        jf::read(e, p, "min_periods", g.eval.min_periods);
    }
}

json grid_to_json(const GridConfig& g) {
    json kinds = json::array();
    for (auto k : g.kinds) kinds.push_back(to_string(k));
    return {{"targets_bps", g.targets_bps},
            {"kinds", kinds},
            {"benchmarks", g.benchmarks},
            {"bounds", {{"bond_lo", g.bounds.bond_lo}, {"bond_hi", g.bounds.bond_hi}, {"fx_lo", g.bounds.fx_lo}, {"fx_hi", g.bounds.fx_hi}}},
            {"qp",
             {{"eps_abs", g.qp.eps_abs},
              {"eps_rel", g.qp.eps_rel},
              {"eps_infeasible", g.qp.eps_infeasible},
              {"max_iter", g.qp.max_iter},
              {"rho", g.qp.rho},
              {"sigma", g.qp.sigma},
              {"alpha", g.qp.alpha},
              {"adaptive_rho", g.qp.adaptive_rho},
              {"adapt_interval", g.qp.adapt_interval},
              {"polish", g.qp.polish}}},
            {"eval",
             {{"period_weeks", g.eval.period_weeks},
              {"periods_per_year", g.eval.periods_per_year},
              {"min_periods", g.eval.min_periods}}}};
}

// ---------------------------------------------------------------------------
// Files and manifests

fs::path out_file(const RunConfig& cfg, const char* name) { return cfg.out / name; }

void require_inputs(const std::vector<fs::path>& paths) {
    std::vector<std::string> missing;
    for (const auto& p : paths)
        if (!fs::exists(p)) missing.push_back(p.string());
    if (missing.empty()) return;
    std::string msg = "missing upstream artifact";
    msg += missing.size() > 1 ? "s: " : ": ";
    for (std::size_t i = 0; i < missing.size(); ++i) msg += (i ? ", " : "") + missing[i];
    throw ValidationError(msg);
}

json hashes(const RunConfig& cfg, const std::vector<const char*>& names) {
    json h = json::object();
    for (const char* n : names)
        if (fs::exists(out_file(cfg, n))) h[n] = sha256_file(out_file(cfg, n));
    return h;
}

void write_manifest(const RunConfig& cfg, const std::string& command, const std::vector<const char*>& inputs,
                    const std::vector<const char*>& outputs, const std::vector<std::string>& stages, const json& result) {
    const json config = cfg.to_json();
    json seeds = json::object();
    for (const auto& s : stages) seeds[s] = cfg.stage_seed(s);
    json m = {{"command", command},
              {"version", version_string()},
              {"config", config},
              {"config_sha256", sha256_hex(config.dump())},
              {"master_seed", cfg.seed},
              {"stage_seeds", seeds},
              {"workers", cfg.workers},
              {"out", cfg.out.string()},
              {"inputs", hashes(cfg, inputs)},
              {"outputs", hashes(cfg, outputs)},
              {"result", result}};
    fs::create_directories(cfg.out / "manifests");
    std::ofstream f(cfg.out / "manifests" / (command + ".json"));
    if (!f) throw ValidationError("cannot write manifest under " + (cfg.out / "manifests").string());
    f << m.dump(2) << '\n';
}

ReturnPanel slice_panel(const ReturnPanel& p, std::size_t begin, std::size_t end) {
    ReturnPanel s;
    s.asset_ids = p.asset_ids;
    s.kinds = p.kinds;
    s.dates.assign(p.dates.begin() + static_cast<std::ptrdiff_t>(begin), p.dates.begin() + static_cast<std::ptrdiff_t>(end));
    const auto b = static_cast<Eigen::Index>(begin), len = static_cast<Eigen::Index>(end - begin);
    s.weekly_returns = p.weekly_returns.middleRows(b, len);
    s.expected_returns = p.expected_returns.middleRows(b, len);
    return s;
}

void check_universe(const RunConfig& cfg, std::size_t n_assets) {
    if (cfg.gan.n != n_assets)
        throw ValidationError("config field 'gan.n': " + std::to_string(cfg.gan.n) + " does not match the " +
                              std::to_string(n_assets) + "-asset panel");
    if (cfg.ae.n != n_assets)
        throw ValidationError("config field 'ae.n': " + std::to_string(cfg.ae.n) + " does not match the " +
                              std::to_string(n_assets) + "-asset panel");
}

json prepare_corpus(const RunConfig& cfg, const ReturnPanel& panel, const std::string& command,
                    const std::vector<const char*>& inputs, const std::vector<std::string>& stages) {
    check_universe(cfg, panel.n_assets());
    const auto split = split_panel(panel, cfg);
    SnapshotOptions so = cfg.snapshots;
    so.workers = cfg.workers;
    const auto train = build_snapshots(split.train, so);
    fs::create_directories(cfg.out);
    write_returns_csv(panel, out_file(cfg, artifacts::panel));
    write_snapshots_jsonl(out_file(cfg, artifacts::train_snapshots), train);
    write_returns_csv(split.test, out_file(cfg, artifacts::test_panel));
    json result = {{"assets", panel.n_assets()},
                   {"bonds", panel.bond_count()},
                   {"dates", panel.n_dates()},
                   {"train_dates", split.train.n_dates()},
                   {"test_dates", split.test.n_dates()},
                   {"train_snapshots", train.size()},
                   {"first_test_date", format_date(split.test.dates.front())}};
    spdlog::info("{}: {} assets, {} train dates ({} snapshots), {} test dates from {}", command, panel.n_assets(),
                 split.train.n_dates(), train.size(), split.test.n_dates(), format_date(split.test.dates.front()));
    write_manifest(cfg, command, inputs, {artifacts::panel, artifacts::train_snapshots, artifacts::test_panel}, stages,
                   result);
    return result;
}

std::vector<CorrelationMatrix> matrices_of(const std::vector<MarketSnapshot>& snaps) {
    std::vector<CorrelationMatrix> out;
    out.reserve(snaps.size());
    for (const auto& s : snaps) out.push_back(s.corr);
    return out;
}

std::string label_of(GanVariant v) { return v == GanVariant::wgan ? "WGAN" : "DCGAN"; }

std::vector<CorrelationMatrix> sample_matrices(const RunConfig& cfg, const TrainedGan& gan,
                                               const std::vector<std::string>& asset_ids) {
    auto s = sample_gan(gan, cfg.sample_count, cfg.stage_seed("sample"), asset_ids, cfg.workers);
    if (s.failed) spdlog::warn("sample: {} of {} matrices failed projection and were skipped", s.failed, cfg.sample_count);
    return std::move(s.matrices);
}

std::vector<std::string> panel_ids(const RunConfig& cfg) {
    const auto snaps = read_snapshots_jsonl(out_file(cfg, artifacts::train_snapshots));
    if (snaps.empty()) throw ValidationError(out_file(cfg, artifacts::train_snapshots).string() + " holds no snapshots");
    return snaps.front().asset_ids();
}

json report_outputs(const RunConfig& cfg, const std::vector<ExperimentResult>& results, std::size_t cells) {
    const auto r = report(results, cells);
    write_table4_csv(r, out_file(cfg, artifacts::table4));
    const auto text = summary_text(r);
    std::ofstream f(out_file(cfg, artifacts::summary));
    if (!f) throw ValidationError("cannot write " + out_file(cfg, artifacts::summary).string());
    f << text;
    spdlog::info("report: {} of {} cells retained", r.retained_cells, r.cells);
    return {{"cells", r.cells}, {"retained_cells", r.retained_cells}, {"experiments", results.size()}};
}

}  // namespace

// ---------------------------------------------------------------------------
// RunConfig

RunConfig RunConfig::defaults() {
    RunConfig c;
    c.gan = GanConfig::defaults(GanVariant::wgan);
    c.gan.steps = 5000;
    return c;
}

RunConfig RunConfig::from_json(const json& j, const fs::path& base_dir) {
    jf::reject_unknown(j, "", {"seed", "workers", "out", "data", "split", "snapshots", "gan", "ae", "sample", "mv", "grid", "seeds"});
    RunConfig c = defaults();
    jf::read(j, "", "seed", c.seed);
    jf::read(j, "", "workers", c.workers);
    if (j.contains("out")) {
        std::string out;
        jf::read(j, "", "out", out);
        c.out = fs::path(out).is_relative() && !base_dir.empty() ? base_dir / out : fs::path(out);
    }
    if (j.contains("data")) {
        const auto& d = j.at("data");
        jf::reject_unknown(d, "data", {"csv", "synth"});
        jf::require(!(d.contains("csv") && d.contains("synth")), "data", "give either csv or synth, not both");
        if (d.contains("csv")) {
            std::string csv;
            jf::read(d, "data", "csv", csv);
            c.csv = fs::path(csv).is_relative() && !base_dir.empty() ? base_dir / csv : fs::path(csv);
        }
        if (d.contains("synth")) c.synth = synth_from_json(d.at("synth"), "data.synth");
    }
    if (j.contains("split")) {
        const auto& s = j.at("split");
        jf::reject_unknown(s, "split", {"test_start", "test_fraction"});
        jf::require(!(s.contains("test_start") && s.contains("test_fraction")), "split",
                    "give either test_start or test_fraction, not both");
        if (s.contains("test_start")) {
            std::string d;
            jf::read(s, "split", "test_start", d);
            try {
                parse_date(d);
            } catch (const std::exception& e) {
                throw ValidationError("config field 'split.test_start': " + std::string(e.what()));
            }
            c.test_start = d;
        }
        jf::read(s, "split", "test_fraction", c.test_fraction);
    }
    if (j.contains("snapshots")) {
        const auto& s = j.at("snapshots");
        jf::reject_unknown(s, "snapshots", {"window", "horizon"});
        jf::read(s, "snapshots", "window", c.snapshots.window);
        jf::read(s, "snapshots", "horizon", c.snapshots.horizon);
    }
    if (j.contains("gan")) {
        const auto& g = j.at("gan");
        c.gan = GanConfig::from_json(g, "gan");
        if (!g.contains("steps")) c.gan.steps = 5000;
        if (g.contains("seed")) c.seeds["train-gan"] = c.gan.seed;
    }
    if (j.contains("ae")) {
        c.ae = AeConfig::from_json(j.at("ae"), "ae");
        if (j.at("ae").contains("seed")) c.seeds["train-ae"] = c.ae.seed;
    }
    if (j.contains("sample")) {
        const auto& s = j.at("sample");
        jf::reject_unknown(s, "sample", {"count"});
        jf::read(s, "sample", "count", c.sample_count);
    }
    if (j.contains("mv")) {
        const auto& m = j.at("mv");
        jf::reject_unknown(m, "mv", {"draws", "horizon"});
        jf::read(m, "mv", "draws", c.mv.draws);
        jf::read(m, "mv", "horizon", c.mv.horizon);
    }
    if (j.contains("grid")) read_grid(j.at("grid"), "grid", c.grid);
    if (j.contains("seeds")) {
        const auto& s = j.at("seeds");
        jf::require(s.is_object(), "seeds", "expected an object");
        for (auto it = s.begin(); it != s.end(); ++it) {
            std::uint64_t v = 0;
            jf::read(s, "seeds", it.key().c_str(), v);
            c.seeds[it.key()] = v;
        }
    }
    c.validate();
    return c;
}

RunConfig RunConfig::load(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(f);
    } catch (const json::parse_error& e) {
        throw ValidationError("config " + path.string() + ": " + e.what());
    }
    return from_json(j, path.parent_path());
}

json RunConfig::to_json() const {
    json data = json::object();
    if (csv)
        data["csv"] = csv->string();
    else
        data["synth"] = synth_to_json(synth);
    json split = json::object();
    if (test_start)
        split["test_start"] = *test_start;
    else
        split["test_fraction"] = test_fraction;
    json seed_map = json::object();
    for (const auto& [k, v] : seeds) seed_map[k] = v;
    auto gan_json = gan_config().to_json();
    auto ae_json = ae_config().to_json();
    return {{"seed", seed},
            {"data", data},
            {"split", split},
            {"snapshots", {{"window", snapshots.window}, {"horizon", snapshots.horizon}}},
            {"gan", gan_json},
            {"ae", ae_json},
            {"sample", {{"count", sample_count}}},
            {"mv", {{"draws", mv.draws}, {"horizon", mv.horizon}}},
            {"grid", grid_to_json(grid)},
            {"seeds", seed_map}};
}

void RunConfig::validate() const {
    jf::require(workers >= 1, "workers", "must be at least 1");
    if (csv) jf::require(fs::exists(*csv), "data.csv", "file not found: " + csv->string());
    jf::require(test_fraction > 0.0 && test_fraction < 1.0, "split.test_fraction", "must lie in (0, 1)");
    jf::require(snapshots.window >= 2, "snapshots.window", "must be at least 2");
    jf::require(snapshots.horizon >= 1, "snapshots.horizon", "must be at least 1");
    jf::require(sample_count >= 1, "sample.count", "must be positive");
    jf::require(mv.draws >= 1, "mv.draws", "must be positive");
    jf::require(mv.horizon > 0.0, "mv.horizon", "must be positive");
    jf::require(!grid.targets_bps.empty(), "grid.targets_bps", "must not be empty");
    for (double t : grid.targets_bps) jf::require(t >= 0.0 && std::isfinite(t), "grid.targets_bps", "targets must be non-negative");
    jf::require(!grid.kinds.empty(), "grid.kinds", "must not be empty");
    jf::require(grid.eval.period_weeks >= 1, "grid.eval.period_weeks", "must be positive");
    jf::require(grid.eval.periods_per_year > 0.0, "grid.eval.periods_per_year", "must be positive");
    jf::require(grid.eval.min_periods >= 2, "grid.eval.min_periods", "must be at least 2");
    jf::require(gan.n == ae.n, "ae.n", "must equal gan.n");
    if (!csv) {
        jf::require(synth.n_assets == gan.n, "gan.n", "must equal data.synth.n_assets");
        jf::require(synth.n_fx < synth.n_assets, "data.synth.n_fx", "must leave at least one bond");
    }
    gan_config().validate();
    ae_config().validate();
}

std::uint64_t RunConfig::stage_seed(const std::string& stage) const {
    if (auto it = seeds.find(stage); it != seeds.end()) return it->second;
    return rng::derive_seed(seed, stage);
}

GanConfig RunConfig::gan_config() const {
    GanConfig g = gan;
    g.seed = stage_seed("train-gan");
    return g;
}

AeConfig RunConfig::ae_config() const {
    AeConfig a = ae;
    a.seed = stage_seed("train-ae");
    return a;
}

PanelSplit split_panel(const ReturnPanel& panel, const RunConfig& cfg) {
    const std::size_t n = panel.n_dates();
    std::size_t first_test = 0;
    if (cfg.test_start) {
        const Date d = parse_date(*cfg.test_start);
        first_test = static_cast<std::size_t>(std::lower_bound(panel.dates.begin(), panel.dates.end(), d) - panel.dates.begin());
    } else {
        first_test = n - static_cast<std::size_t>(std::llround(static_cast<double>(n) * cfg.test_fraction));
    }
    const std::size_t need = cfg.snapshots.window + cfg.snapshots.horizon;
    if (first_test < need)
        throw ValidationError("config field 'split': the train period has " + std::to_string(first_test) +
                              " dates; snapshots need at least " + std::to_string(need));
    if (first_test >= n) throw ValidationError("config field 'split': the test period is empty");
    return {slice_panel(panel, 0, first_test), slice_panel(panel, first_test, n)};
}

// ---------------------------------------------------------------------------
// Stages

json stage_ingest(const RunConfig& cfg) {
    if (!cfg.csv) throw ValidationError("config field 'data.csv': ingest needs an input CSV");
    require_inputs({*cfg.csv});
    const auto panel = ingest_returns(*cfg.csv);
    auto result = prepare_corpus(cfg, panel, "ingest", {}, {});
    return result;
}

json stage_synth_corpus(const RunConfig& cfg) {
    const auto panel = synth_corpus(cfg.synth, cfg.stage_seed("synth-corpus"));
    return prepare_corpus(cfg, panel, "synth-corpus", {}, {"synth-corpus"});
}

json stage_train_gan(const RunConfig& cfg) {
    require_inputs({out_file(cfg, artifacts::train_snapshots)});
    const auto corpus = matrices_of(read_snapshots_jsonl(out_file(cfg, artifacts::train_snapshots)));
    check_universe(cfg, corpus.empty() ? 0 : corpus.front().size());
    const auto gc = cfg.gan_config();
    spdlog::info("train-gan: {} on {} matrices, {} steps", label_of(gc.variant), corpus.size(), gc.steps);
    const std::size_t every = std::max<std::size_t>(1, gc.steps / 10);
    const auto gan = train_gan(corpus, gc, [&](std::size_t step, const GanStep& s) {
        if ((step + 1) % every == 0)
            spdlog::info("train-gan: step {}/{} critic {:.5f} generator {:.5f} spread {:.4f}", step + 1, gc.steps,
                         s.critic_loss, s.generator_loss, s.spread);
    });
    if (gan.history.collapse_warning) spdlog::warn("train-gan: mode-collapse warning at step {}", gan.history.collapse_step);
    save_gan(gan, out_file(cfg, artifacts::gan));
    {
        std::ofstream f(out_file(cfg, artifacts::gan_history));
        f << "step,critic_loss,generator_loss,critic_gap,spread\n";
        for (std::size_t i = 0; i < gan.history.steps.size(); ++i) {
            const auto& s = gan.history.steps[i];
            f << fmt::format("{},{:.10g},{:.10g},{:.10g},{:.10g}\n", i + 1, s.critic_loss, s.generator_loss, s.critic_gap, s.spread);
        }
    }
    const double diag = raw_diagonal_mean(gan, 256, rng::derive_seed(cfg.stage_seed("train-gan"), "diagonal"), cfg.workers);
    json result = {{"variant", to_string(gc.variant)},
                   {"steps", gc.steps},
                   {"corpus", corpus.size()},
                   {"collapse_warning", gan.history.collapse_warning},
                   {"raw_diagonal_mean", diag}};
    spdlog::info("train-gan: raw diagonal mean {:.4f}", diag);
    write_manifest(cfg, "train-gan", {artifacts::train_snapshots}, {artifacts::gan, artifacts::gan_history}, {"train-gan"},
                   result);
    return result;
}

json stage_sample(const RunConfig& cfg) {
    require_inputs({out_file(cfg, artifacts::gan), out_file(cfg, artifacts::train_snapshots)});
    const auto gan = load_gan(out_file(cfg, artifacts::gan));
    const auto ids = panel_ids(cfg);
    const auto mats = sample_matrices(cfg, gan, ids);
    write_matrices_jsonl(out_file(cfg, artifacts::samples), mats);
    json result = {{"requested", cfg.sample_count}, {"written", mats.size()}};
    spdlog::info("sample: wrote {} matrices", mats.size());
    write_manifest(cfg, "sample", {artifacts::gan, artifacts::train_snapshots}, {artifacts::samples}, {"sample"}, result);
    return result;
}

json stage_train_ae(const RunConfig& cfg) {
    require_inputs({out_file(cfg, artifacts::train_snapshots)});
    const auto snaps = read_snapshots_jsonl(out_file(cfg, artifacts::train_snapshots));
    check_universe(cfg, snaps.empty() ? 0 : snaps.front().corr.size());
    const auto ac = cfg.ae_config();
    spdlog::info("train-ae: {} snapshots, {} steps", snaps.size(), ac.steps);
    const std::size_t every = std::max<std::size_t>(1, ac.steps / 10);
    const auto model = train_attr_model(snaps, ac, [&](std::size_t step, const AeStep& s) {
        if ((step + 1) % every == 0)
            spdlog::info("train-ae: step {}/{} loss {:.5f} (vol {:.5f} er {:.5f} fr {:.5f})", step + 1, ac.steps, s.total(),
                         s.volatility, s.expected_return, s.forward_return);
    });
    save_attr_model(model, out_file(cfg, artifacts::ae));
    {
        std::ofstream f(out_file(cfg, artifacts::ae_history));
        f << "step,volatility,expected_return,forward_return\n";
        for (std::size_t i = 0; i < model.history.steps.size(); ++i) {
            const auto& s = model.history.steps[i];
            f << fmt::format("{},{:.10g},{:.10g},{:.10g}\n", i + 1, s.volatility, s.expected_return, s.forward_return);
        }
    }
    json result = {{"steps", ac.steps},
                   {"train_count", model.history.train_count},
                   {"validation_count", model.history.validation_count},
                   {"selected_step", model.history.selected_step}};
    if (model.history.validation) {
        const auto& v = *model.history.validation;
        result["validation"] = {{"volatility", v.volatility}, {"expected_return", v.expected_return}, {"forward_return", v.forward_return}};
    }
    write_manifest(cfg, "train-ae", {artifacts::train_snapshots}, {artifacts::ae, artifacts::ae_history}, {"train-ae"}, result);
    return result;
}

json stage_generate_dataset(const RunConfig& cfg) {
    require_inputs({out_file(cfg, artifacts::ae), out_file(cfg, artifacts::samples)});
    const auto model = load_attr_model(out_file(cfg, artifacts::ae));
    const auto mats = read_matrices_jsonl(out_file(cfg, artifacts::samples));
    const auto synth = synthesize_snapshots(model, mats, cfg.workers);
    write_snapshots_jsonl(out_file(cfg, artifacts::synthetic_snapshots), synth);
    json result = {{"snapshots", synth.size()}};
    spdlog::info("generate-dataset: wrote {} synthetic snapshots", synth.size());
    write_manifest(cfg, "generate-dataset", {artifacts::ae, artifacts::samples}, {artifacts::synthetic_snapshots}, {}, result);
    return result;
}

json stage_metrics(const RunConfig& cfg) {
    require_inputs({out_file(cfg, artifacts::train_snapshots)});
    std::vector<std::pair<std::string, MetricSummary>> rows;
    const auto empirical = matrices_of(read_snapshots_jsonl(out_file(cfg, artifacts::train_snapshots)));
    rows.emplace_back("Empirical", summarize(empirical, cfg.workers));
    std::vector<const char*> inputs = {artifacts::train_snapshots};
    json result = {{"Empirical", empirical.size()}};
    if (fs::exists(out_file(cfg, artifacts::samples))) {
        const auto gen = read_matrices_jsonl(out_file(cfg, artifacts::samples));
        std::string label = label_of(cfg.gan.variant);
        if (fs::exists(out_file(cfg, artifacts::gan))) label = label_of(load_gan(out_file(cfg, artifacts::gan)).config.variant);
        rows.emplace_back(label, summarize(gen, cfg.workers));
        inputs.push_back(artifacts::samples);
        result[label] = gen.size();
    }
    write_metric_table_csv(out_file(cfg, artifacts::metrics), rows);
    spdlog::info("metrics: {} rows written", rows.size());
    write_manifest(cfg, "metrics", inputs, {artifacts::metrics}, {}, result);
    return result;
}

json stage_backtest(const RunConfig& cfg) {
    require_inputs({out_file(cfg, artifacts::gan), out_file(cfg, artifacts::ae)});
    require_inputs({out_file(cfg, artifacts::train_snapshots), out_file(cfg, artifacts::test_panel)});
    const auto train = read_snapshots_jsonl(out_file(cfg, artifacts::train_snapshots));
    const auto test = ingest_returns(out_file(cfg, artifacts::test_panel));
    std::vector<const char*> inputs = {artifacts::gan, artifacts::ae, artifacts::train_snapshots, artifacts::test_panel};

    if (!fs::exists(out_file(cfg, artifacts::synthetic_snapshots))) {
        spdlog::info("backtest: {} absent, generating it", artifacts::synthetic_snapshots);
        std::vector<CorrelationMatrix> mats;
        if (fs::exists(out_file(cfg, artifacts::samples))) {
            mats = read_matrices_jsonl(out_file(cfg, artifacts::samples));
        } else {
            mats = sample_matrices(cfg, load_gan(out_file(cfg, artifacts::gan)), train.front().asset_ids());
            write_matrices_jsonl(out_file(cfg, artifacts::samples), mats);
        }
        const auto model = load_attr_model(out_file(cfg, artifacts::ae));
        write_snapshots_jsonl(out_file(cfg, artifacts::synthetic_snapshots), synthesize_snapshots(model, mats, cfg.workers));
    }
    inputs.push_back(artifacts::synthetic_snapshots);
    const auto synthetic = read_snapshots_jsonl(out_file(cfg, artifacts::synthetic_snapshots));

    GridConfig g = cfg.grid;
    g.mv = cfg.mv;
    g.seed = cfg.stage_seed("backtest");
    g.workers = cfg.workers;
    spdlog::info("backtest: {} empirical and {} synthetic snapshots, {} test dates", train.size(), synthetic.size(),
                 test.n_dates());
    const auto grid = run_grid(train, synthetic, test, g);
    write_experiments_jsonl(grid, out_file(cfg, artifacts::experiments));
    auto result = report_outputs(cfg, grid.results, grid.cells);
    write_manifest(cfg, "backtest", inputs, {artifacts::experiments, artifacts::table4, artifacts::summary}, {"backtest"}, result);
    return result;
}

json stage_report(const RunConfig& cfg) {
    require_inputs({out_file(cfg, artifacts::experiments)});
    const auto results = read_experiments_jsonl(out_file(cfg, artifacts::experiments));
    auto result = report_outputs(cfg, results, 0);
    write_manifest(cfg, "report", {artifacts::experiments}, {artifacts::table4, artifacts::summary}, {}, result);
    return result;
}

json run_pipeline(const RunConfig& cfg) {
    json out = json::object();
    if (cfg.csv)
        out["ingest"] = stage_ingest(cfg);
    else
        out["synth-corpus"] = stage_synth_corpus(cfg);
    out["train-gan"] = stage_train_gan(cfg);
    out["sample"] = stage_sample(cfg);
    out["train-ae"] = stage_train_ae(cfg);
    out["generate-dataset"] = stage_generate_dataset(cfg);
    out["metrics"] = stage_metrics(cfg);
    out["backtest"] = stage_backtest(cfg);
    return out;
}

// ---------------------------------------------------------------------------

namespace {

std::string digest_hex(EVP_MD_CTX* ctx) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx, md, &len) != 1) throw NumericalError("SHA-256 finalization failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string s;
    for (unsigned int i = 0; i < len; ++i) {
        s += hex[md[i] >> 4];
        s += hex[md[i] & 15];
    }
    return s;
}

struct MdCtx {
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    MdCtx() {
        if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) throw NumericalError("SHA-256 init failed");
    }
    ~MdCtx() { EVP_MD_CTX_free(ctx); }
    MdCtx(const MdCtx&) = delete;
    MdCtx& operator=(const MdCtx&) = delete;
};

}  // namespace

std::string sha256_hex(const std::string& bytes) {
    MdCtx c;
    EVP_DigestUpdate(c.ctx, bytes.data(), bytes.size());
    return digest_hex(c.ctx);
}

std::string sha256_file(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot read " + path.string());
    MdCtx c;
    std::vector<char> buf(1 << 16);
    while (f) {
        f.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (f.gcount() > 0) EVP_DigestUpdate(c.ctx, buf.data(), static_cast<std::size_t>(f.gcount()));
    }
    return digest_hex(c.ctx);
}

std::string version_string() { return FIXSYNTH_VERSION; }

void init_logging() {
    auto logger = spdlog::get("fixsynth");
    if (!logger) logger = spdlog::stderr_logger_mt("fixsynth");
    logger->set_pattern("[%H:%M:%S] [%l] %v");
    spdlog::set_default_logger(logger);
    const char* env = std::getenv("FIXSYNTH_LOG");
    spdlog::set_level(env && *env ? spdlog::level::from_str(env) : spdlog::level::info);
}

}  // namespace fixsynth
