#pragma once

// Experiment grid over benchmarks x excess targets x dataset variants x simulation
// sources, out-of-sample evaluation with fixed weights, and the paired comparison table.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fixsynth/allocator.hpp"
#include "fixsynth/market_data.hpp"
#include "fixsynth/simulation.hpp"

namespace fixsynth {

struct ExperimentResult {
    std::size_t cell = 0;  // index of the (benchmark, target) pair, shared by all variants and sources
    std::string bench_id;
    std::size_t bench = 0;
    double target_bps = 0.0;
    DatasetLabel variant = DatasetLabel::empirical;
    SimSource kind = SimSource::fr;
    Eigen::VectorXd weights;
    QpStatus status = QpStatus::max_iter;
    bool converged = false;
    bool excluded = false;  // dropped from the paired comparison
    double tev_bps = 0.0;
    double excess_er_bps = 0.0;
    std::optional<double> ratio;  // excess ER / TEV when converged and TEV > 0

    nlohmann::json to_json(const std::vector<std::string>& asset_ids) const;
};

struct Evaluation {
    double tev_bps = 0.0;
    double excess_er_bps = 0.0;
    std::size_t periods = 0;
};

struct EvalOptions {
    std::size_t period_weeks = 4;
    double periods_per_year = 12.0;  // each period is treated as one month
    std::size_t min_periods = 12;
};

/// Fixed weights over non-overlapping periods of the test panel: TEV of the compounded
/// period returns against the benchmark's, and the mean over period starts of mu'w - mu_bench.
Evaluation evaluate(const Eigen::VectorXd& weights, const ReturnPanel& test_panel, std::size_t bench,
                    const EvalOptions& opts = {});

struct GridConfig {
    std::vector<double> targets_bps = {20, 30, 40, 50, 60, 70, 80, 90, 100};
    std::vector<SimSource> kinds = {SimSource::fr, SimSource::mv};
    std::vector<std::string> benchmarks;  // empty = every bond asset
    MvConfig mv;
    WeightBounds bounds;
    QpConfig qp;
    EvalOptions eval;
    std::uint64_t seed = 0;
    std::size_t workers = 0;
};

struct GridResult {
    std::vector<ExperimentResult> results;  // ordered by kind, variant, cell
    std::size_t cells = 0;
    std::size_t retained_cells = 0;
    std::vector<std::string> asset_ids;
};

/// Empirical sets from `train`, Synthetic from `synthetic`, Combined from both; every
/// portfolio is scored on `test_panel`. A cell that fails for any variant or source is
/// excluded everywhere.
GridResult run_grid(std::span<const MarketSnapshot> train, std::span<const MarketSnapshot> synthetic,
                    const ReturnPanel& test_panel, const GridConfig& cfg);

struct TTest {
    double t = 0.0;
    double p = 0.0;
};

/// d = baseline - variant; one-sided p for "variant > baseline", i.e. P(T <= t) with n - 1
/// degrees of freedom. Negative t favours the variant.
TTest paired_t_test(std::span<const double> baseline, std::span<const double> variant);

/// Student-t CDF through the regularized incomplete beta function.
double student_t_cdf(double t, double dof);
double incomplete_beta(double a, double b, double x);

struct ReportRow {
    SimSource kind = SimSource::fr;
    DatasetLabel variant = DatasetLabel::empirical;
    std::size_t obs = 0;
    double tev_bps = 0.0;
    double excess_er_bps = 0.0;
    double ratio_mean = 0.0;
    std::optional<double> t_stat, p_value;  // absent for the Empirical baseline or a degenerate test
    double ratio_min = 0.0, ratio_median = 0.0, ratio_max = 0.0;
    std::optional<double> share;            // wins / obs against Empirical
    std::size_t wins = 0, ties = 0;
};

struct ComparisonReport {
    std::vector<ReportRow> rows;  // per kind: Empirical, Synthetic, Combined
    std::size_t cells = 0;
    std::size_t retained_cells = 0;
};

ComparisonReport report(std::span<const ExperimentResult> results, std::size_t cells = 0);

/// Two label columns then the ten table columns.
void write_table4_csv(const ComparisonReport& r, const std::filesystem::path& path);
void write_experiments_jsonl(const GridResult& g, const std::filesystem::path& path);
std::vector<ExperimentResult> read_experiments_jsonl(const std::filesystem::path& path, std::vector<std::string>* asset_ids = nullptr);
std::string summary_text(const ComparisonReport& r);

}  // namespace fixsynth
