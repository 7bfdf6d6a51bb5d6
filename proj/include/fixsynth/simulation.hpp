#pragma once

// Simulation sets: forward-return rows (FR) and multivariate-normal draws (MV).

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fixsynth/market_data.hpp"

namespace fixsynth {

enum class DatasetLabel { empirical, synthetic, combined };
enum class SimSource { fr, mv };

std::string to_string(DatasetLabel l);
std::string to_string(SimSource s);
DatasetLabel parse_dataset_label(const std::string& s);
SimSource parse_sim_source(const std::string& s);

struct SimulationSet {
    Eigen::MatrixXd returns;  // n_sims x m, one-month returns
    Eigen::VectorXd mu;       // mean expected returns, decimal per year
    std::vector<std::string> asset_ids;
    DatasetLabel label = DatasetLabel::empirical;
    SimSource kind = SimSource::fr;

    std::size_t n_sims() const noexcept { return static_cast<std::size_t>(returns.rows()); }
    std::size_t n_assets() const noexcept { return asset_ids.size(); }
};

struct MvConfig {
    std::size_t draws = 10;
    double horizon = 1.0 / 12.0;  // years
    std::uint64_t seed = 0;
    std::size_t workers = 0;

    void validate() const;
};

SimulationSet fr_sims(std::span<const MarketSnapshot> snapshots, DatasetLabel label);
SimulationSet mv_sims(std::span<const MarketSnapshot> snapshots, const MvConfig& cfg, DatasetLabel label);

struct CholeskyResult {
    Eigen::MatrixXd lower;
    double jitter = 0.0;  // epsilon added to the diagonal
};

/// Default schedule: 0, then 1e-12 .. 1e-6 (decades) times trace / n.
std::vector<double> default_jitter_schedule(const Eigen::MatrixXd& sigma);

/// L with L L^T = sigma + eps I for the first eps in the schedule that factors.
/// Throws NumericalError carrying the final eps when the schedule is exhausted.
CholeskyResult cholesky_psd(const Eigen::MatrixXd& sigma, const std::vector<double>& schedule = {});

SimulationSet combine(std::span<const SimulationSet> sets);

void write_simulation_set(const std::filesystem::path& path, const SimulationSet& set);
SimulationSet read_simulation_set(const std::filesystem::path& path);

}  // namespace fixsynth
