#include "fixsynth/backtest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "fixsynth/parallel.hpp"
#include "fixsynth/rng.hpp"

namespace fixsynth {

nlohmann::json ExperimentResult::to_json(const std::vector<std::string>& asset_ids) const {
    nlohmann::json j{{"cell", cell},
                     {"bench_id", bench_id},
                     {"bench", bench},
                     {"target_bps", target_bps},
                     {"variant", to_string(variant)},
                     {"kind", to_string(kind)},
                     {"status", to_string(status)},
                     {"converged", converged},
                     {"excluded", excluded},
                     {"tev_bps", tev_bps},
                     {"excess_er_bps", excess_er_bps},
                     {"assets", asset_ids},
                     {"weights", std::vector<double>(weights.data(), weights.data() + weights.size())}};
    j["ratio"] = ratio ? nlohmann::json(*ratio) : nlohmann::json(nullptr);
    return j;
}

// ---------------------------------------------------------------------------
// Evaluation

Evaluation evaluate(const Eigen::VectorXd& weights, const ReturnPanel& test_panel, std::size_t bench,
                    const EvalOptions& opts) {
    const std::size_t m = test_panel.n_assets();
    if (static_cast<std::size_t>(weights.size()) != m)
        throw ValidationError("weight vector has " + std::to_string(weights.size()) + " entries for " +
                              std::to_string(m) + " assets");
    if (bench >= m) throw ValidationError("benchmark index out of range");
    if (opts.period_weeks == 0) throw ValidationError("period length must be >= 1 week");
    const std::size_t periods = test_panel.n_dates() / opts.period_weeks;
    if (periods < opts.min_periods || periods < 2)
        throw ValidationError("test panel covers " + std::to_string(periods) + " periods of " +
                              std::to_string(opts.period_weeks) + " weeks; at least " +
                              std::to_string(std::max<std::size_t>(opts.min_periods, 2)) + " needed");
    std::vector<double> port(periods), bench_r(periods);
    double er = 0.0;
    const auto b = static_cast<Eigen::Index>(bench);
    for (std::size_t p = 0; p < periods; ++p) {
        const std::size_t start = p * opts.period_weeks;
        Eigen::VectorXd growth = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(m));
        for (std::size_t w = start; w < start + opts.period_weeks; ++w)
            growth.array() *= 1.0 + test_panel.weekly_returns.row(static_cast<Eigen::Index>(w)).transpose().array();
        const Eigen::VectorXd r = growth.array() - 1.0;
        port[p] = weights.dot(r);
        bench_r[p] = r(b);
        const auto mu = test_panel.expected_returns.row(static_cast<Eigen::Index>(start));
        er += mu.dot(weights) - mu(b);
    }
    return {tev(port, bench_r, opts.periods_per_year), 1e4 * er / static_cast<double>(periods), periods};
}

// ---------------------------------------------------------------------------
// Grid

namespace {

void check_universe(std::span<const MarketSnapshot> snaps, const std::vector<std::string>& ids, const char* what) {
    if (snaps.empty()) throw ValidationError(std::string("no ") + what + " snapshots");
    for (const auto& s : snaps)
        if (s.asset_ids() != ids)
            throw ValidationError(std::string(what) + " snapshots do not match the test panel's asset order");
}

constexpr DatasetLabel kVariants[] = {DatasetLabel::empirical, DatasetLabel::synthetic, DatasetLabel::combined};

}  // namespace

GridResult run_grid(std::span<const MarketSnapshot> train, std::span<const MarketSnapshot> synthetic,
                    const ReturnPanel& test_panel, const GridConfig& cfg) {
    if (test_panel.n_dates() == 0) throw ValidationError("empty test panel");
    const auto& ids = test_panel.asset_ids;
    check_universe(train, ids, "training");
    check_universe(synthetic, ids, "synthetic");
    if (cfg.targets_bps.empty()) throw ValidationError("no excess-return targets");
    for (double t : cfg.targets_bps)
        if (!(t >= 0.0)) throw ValidationError("excess-return targets must be >= 0 bps");
    if (cfg.kinds.empty()) throw ValidationError("no simulation sources selected");

    std::vector<std::size_t> benches;
    if (cfg.benchmarks.empty()) {
        for (std::size_t i = 0; i < ids.size(); ++i)
            if (test_panel.kinds[i] == AssetKind::bond) benches.push_back(i);
    } else {
        for (const auto& b : cfg.benchmarks) {
            const auto it = std::find(ids.begin(), ids.end(), b);
            if (it == ids.end()) throw ValidationError("benchmark '" + b + "' is not in the universe");
            const auto i = static_cast<std::size_t>(it - ids.begin());
            if (test_panel.kinds[i] != AssetKind::bond) throw ValidationError("benchmark '" + b + "' is not a bond");
            benches.push_back(i);
        }
    }
    const std::size_t n_cells = benches.size() * cfg.targets_bps.size();

    // One tracking model per (kind, variant).
    std::vector<TrackingModel> models;
    for (SimSource kind : cfg.kinds) {
        SimulationSet emp, syn;
        if (kind == SimSource::fr) {
            emp = fr_sims(train, DatasetLabel::empirical);
            syn = fr_sims(synthetic, DatasetLabel::synthetic);
        } else {
            MvConfig mv = cfg.mv;
            mv.workers = cfg.workers;
            mv.seed = rng::derive_seed(cfg.seed, "grid.mv.empirical");
            emp = mv_sims(train, mv, DatasetLabel::empirical);
            mv.seed = rng::derive_seed(cfg.seed, "grid.mv.synthetic");
            syn = mv_sims(synthetic, mv, DatasetLabel::synthetic);
        }
        const SimulationSet both[] = {emp, syn};
        const SimulationSet comb = combine(both);
        models.emplace_back(emp, test_panel.kinds);
        models.emplace_back(syn, test_panel.kinds);
        models.emplace_back(comb, test_panel.kinds);
    }

    GridResult g;
    g.cells = n_cells;
    g.asset_ids = ids;
    g.results.resize(cfg.kinds.size() * 3 * n_cells);
    parallel_for(
        g.results.size(),
        [&](std::size_t job) {
            const std::size_t block = job / n_cells, cell = job % n_cells;
            const std::size_t bench = benches[cell / cfg.targets_bps.size()];
            const double target = cfg.targets_bps[cell % cfg.targets_bps.size()];
            ExperimentResult r;
            r.cell = cell;
            r.bench = bench;
            r.bench_id = ids[bench];
            r.target_bps = target;
            r.kind = cfg.kinds[block / 3];
            r.variant = kVariants[block % 3];
            const PortfolioProblem prob = build_problem(models[block], bench, target * 1e-4, cfg.bounds);
            const QpSolution sol = solve_portfolio(prob, cfg.qp);
            r.status = sol.status;
            r.weights = sol.weights;
            r.converged = sol.status == QpStatus::solved;
            if (r.converged) {
                const Evaluation e = evaluate(sol.weights, test_panel, bench, cfg.eval);
                r.tev_bps = e.tev_bps;
                r.excess_er_bps = e.excess_er_bps;
                if (e.tev_bps > 0.0) r.ratio = e.excess_er_bps / e.tev_bps;
            }
            g.results[job] = std::move(r);
        },
        cfg.workers);

    std::vector<bool> drop(n_cells, false);
    for (const auto& r : g.results)
        if (!r.converged || !r.ratio) drop[r.cell] = true;
    for (auto& r : g.results) r.excluded = drop[r.cell];
    g.retained_cells = static_cast<std::size_t>(std::count(drop.begin(), drop.end(), false));
    return g;
}

// ---------------------------------------------------------------------------
// Statistics

double incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0 && b > 0.0)) throw ValidationError("incomplete beta needs a, b > 0");
    if (!(x >= 0.0 && x <= 1.0)) throw ValidationError("incomplete beta needs x in [0, 1]");
    if (x == 0.0 || x == 1.0) return x;
    // Continued fraction (modified Lentz), applied on the side where it converges fast.
    const auto cf = [](double a, double b, double x) {
        constexpr double tiny = 1e-300;
        double c = 1.0, d = 1.0 - (a + b) * x / (a + 1.0);
        if (std::abs(d) < tiny) d = tiny;
        d = 1.0 / d;
        double h = d;
        for (int m = 1; m <= 10000; ++m) {
            const double m2 = 2.0 * m;
            double aa = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
            d = 1.0 + aa * d;
            if (std::abs(d) < tiny) d = tiny;
            c = 1.0 + aa / c;
            if (std::abs(c) < tiny) c = tiny;
            d = 1.0 / d;
            h *= d * c;
            aa = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
            d = 1.0 + aa * d;
            if (std::abs(d) < tiny) d = tiny;
            c = 1.0 + aa / c;
            if (std::abs(c) < tiny) c = tiny;
            d = 1.0 / d;
            const double del = d * c;
            h *= del;
            if (std::abs(del - 1.0) < 1e-16) return h;
        }
        throw NumericalError("incomplete beta continued fraction did not converge");
    };
    const double front =
        std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x));
    if (x < (a + 1.0) / (a + b + 2.0)) return front * cf(a, b, x) / a;
    return 1.0 - front * cf(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double dof) {
    if (!(dof > 0.0)) throw ValidationError("degrees of freedom must be > 0");
    if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
    const double tail = 0.5 * incomplete_beta(0.5 * dof, 0.5, dof / (dof + t * t));
    return t < 0.0 ? tail : 1.0 - tail;
}

TTest paired_t_test(std::span<const double> baseline, std::span<const double> variant) {
    if (baseline.size() != variant.size()) throw ValidationError("paired samples differ in length");
    const std::size_t n = baseline.size();
    if (n < 3) throw ValidationError("paired t-test needs at least 3 pairs");
    std::vector<double> d(n);
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        d[i] = baseline[i] - variant[i];
        mean += d[i];
    }
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double v : d) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    if (!(sd > 0.0)) throw ValidationError("paired differences have zero variance; t is undefined");
    const double t = mean / (sd / std::sqrt(static_cast<double>(n)));
    return {t, student_t_cdf(t, static_cast<double>(n - 1))};
}

// ---------------------------------------------------------------------------
// Report

namespace {

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t k = v.size();
    return k % 2 ? v[k / 2] : 0.5 * (v[k / 2 - 1] + v[k / 2]);
}

}  // namespace

ComparisonReport report(std::span<const ExperimentResult> results, std::size_t cells) {
    // (kind, variant) -> cell -> ratio, retained cells only.
    std::vector<SimSource> kinds;
    std::map<std::pair<int, int>, std::map<std::size_t, const ExperimentResult*>> blocks;
    std::size_t max_cell = 0;
    for (const auto& r : results) {
        max_cell = std::max(max_cell, r.cell + 1);
        if (std::find(kinds.begin(), kinds.end(), r.kind) == kinds.end()) kinds.push_back(r.kind);
        if (r.excluded) continue;
        if (!r.converged || !r.ratio)
            throw ValidationError("cell " + std::to_string(r.cell) + " is retained without a ratio");
        auto& slot = blocks[{static_cast<int>(r.kind), static_cast<int>(r.variant)}][r.cell];
        if (slot) throw ValidationError("duplicate result for cell " + std::to_string(r.cell));
        slot = &r;
    }
    if (blocks.empty()) throw ValidationError("no converged cells to report");
    const auto& first = blocks.begin()->second;
    for (const auto& [key, cellmap] : blocks) {
        bool same = cellmap.size() == first.size();
        for (auto a = cellmap.begin(), b = first.begin(); same && a != cellmap.end(); ++a, ++b) same = a->first == b->first;
        if (!same) throw ValidationError("result blocks do not share one set of cells; the design is not paired");
    }

    ComparisonReport rep;
    rep.cells = cells ? cells : max_cell;
    rep.retained_cells = first.size();
    for (SimSource kind : kinds) {
        const auto base_it = blocks.find({static_cast<int>(kind), static_cast<int>(DatasetLabel::empirical)});
        std::vector<double> base;
        if (base_it != blocks.end())
            for (const auto& [c, r] : base_it->second) base.push_back(*r->ratio);
        for (DatasetLabel v : kVariants) {
            const auto it = blocks.find({static_cast<int>(kind), static_cast<int>(v)});
            if (it == blocks.end()) continue;
            ReportRow row;
            row.kind = kind;
            row.variant = v;
            std::vector<double> ratios;
            for (const auto& [c, r] : it->second) {
                row.tev_bps += r->tev_bps;
                row.excess_er_bps += r->excess_er_bps;
                ratios.push_back(*r->ratio);
            }
            row.obs = ratios.size();
            const double n = static_cast<double>(row.obs);
            row.tev_bps /= n;
            row.excess_er_bps /= n;
            for (double x : ratios) row.ratio_mean += x;
            row.ratio_mean /= n;
            row.ratio_min = *std::min_element(ratios.begin(), ratios.end());
            row.ratio_max = *std::max_element(ratios.begin(), ratios.end());
            row.ratio_median = median_of(ratios);
            if (v != DatasetLabel::empirical && !base.empty()) {
                for (std::size_t i = 0; i < ratios.size(); ++i) {
                    if (ratios[i] > base[i]) ++row.wins;
                    else if (ratios[i] == base[i]) ++row.ties;
                }
                row.share = static_cast<double>(row.wins) / n;
                try {
                    const TTest tt = paired_t_test(base, ratios);
                    row.t_stat = tt.t;
                    row.p_value = tt.p;
                } catch (const ValidationError&) {
                    // fewer than 3 cells or identical ratios: no test
                }
            }
            rep.rows.push_back(row);
        }
    }
    return rep;
}

namespace {

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string opt(const char* f, const std::optional<double>& v) { return v ? fmt(f, *v) : ""; }

std::string sims_label(SimSource k) { return k == SimSource::fr ? "FR Sims" : "MV Sims"; }

}  // namespace

void write_table4_csv(const ComparisonReport& r, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write '" + path.string() + "'");
    out << "sims,variant,obs,tev_bps,excess_er_bps,ratio_mean,t_stat,p_value,ratio_min,ratio_median,ratio_max,"
           "share_gt_empirical\n";
    for (const auto& row : r.rows) {
        out << sims_label(row.kind) << ',' << to_string(row.variant) << ',' << row.obs << ','
            << fmt("%.4f", row.tev_bps) << ',' << fmt("%.4f", row.excess_er_bps) << ',' << fmt("%.6f", row.ratio_mean)
            << ',' << opt("%.4f", row.t_stat) << ',' << opt("%.6g", row.p_value) << ',' << fmt("%.6f", row.ratio_min)
            << ',' << fmt("%.6f", row.ratio_median) << ',' << fmt("%.6f", row.ratio_max) << ','
            << opt("%.6f", row.share) << '\n';
    }
    if (!out) throw NumericalError("write to '" + path.string() + "' failed");
}

void write_experiments_jsonl(const GridResult& g, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write '" + path.string() + "'");
    for (const auto& r : g.results) out << r.to_json(g.asset_ids).dump() << '\n';
    if (!out) throw NumericalError("write to '" + path.string() + "' failed");
}

std::vector<ExperimentResult> read_experiments_jsonl(const std::filesystem::path& path,
                                                     std::vector<std::string>* asset_ids) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read '" + path.string() + "'");
    std::vector<ExperimentResult> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            ExperimentResult r;
            r.cell = j.at("cell").get<std::size_t>();
            r.bench_id = j.at("bench_id").get<std::string>();
            r.bench = j.at("bench").get<std::size_t>();
            r.target_bps = j.at("target_bps").get<double>();
            r.variant = parse_dataset_label(j.at("variant").get<std::string>());
            r.kind = parse_sim_source(j.at("kind").get<std::string>());
            const auto st = j.at("status").get<std::string>();
            r.status = st == "solved" ? QpStatus::solved : st == "infeasible" ? QpStatus::infeasible : QpStatus::max_iter;
            r.converged = j.at("converged").get<bool>();
            r.excluded = j.at("excluded").get<bool>();
            r.tev_bps = j.at("tev_bps").get<double>();
            r.excess_er_bps = j.at("excess_er_bps").get<double>();
            const auto w = j.at("weights").get<std::vector<double>>();
            r.weights = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
            if (!j.at("ratio").is_null()) r.ratio = j.at("ratio").get<double>();
            if (asset_ids && asset_ids->empty()) *asset_ids = j.at("assets").get<std::vector<std::string>>();
            out.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError("'" + path.string() + "' line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

std::string summary_text(const ComparisonReport& r) {
    std::ostringstream s;
    s << "cells: " << r.cells << " (benchmark x target), retained in every variant and source: " << r.retained_cells
      << "\n";
    s << "excess ER: mean over test-period expected returns at period starts, in bps\n";
    s << "share: cells where the variant's excess ER / TEV is strictly greater than Empirical's; ties reported apart\n\n";
    for (const auto& row : r.rows) {
        s << sims_label(row.kind) << " / " << to_string(row.variant) << ": obs " << row.obs << ", TEV "
          << fmt("%.2f", row.tev_bps) << " bps, excess ER " << fmt("%.2f", row.excess_er_bps) << " bps, ratio mean "
          << fmt("%.4f", row.ratio_mean) << " [min " << fmt("%.4f", row.ratio_min) << ", median "
          << fmt("%.4f", row.ratio_median) << ", max " << fmt("%.4f", row.ratio_max) << "]";
        if (row.t_stat) s << ", t " << fmt("%.3f", *row.t_stat) << ", p " << fmt("%.3g", *row.p_value);
        if (row.share)
            s << ", wins " << row.wins << "/" << row.obs << " (" << fmt("%.1f", 100.0 * *row.share) << "%), ties "
              << row.ties;
        s << "\n";
    }
    return s.str();
}

}  // namespace fixsynth
