#pragma once

// Return panels, rolling-window market snapshots, correlation repair and the
// ground-truth synthetic market used in place of a vendor data feed.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fixsynth/error.hpp"

namespace fixsynth {

using Date = std::chrono::sys_days;

Date parse_date(const std::string& iso);
std::string format_date(Date d);

enum class AssetKind { bond, fx };

std::string to_string(AssetKind kind);
AssetKind parse_asset_kind(const std::string& s);

/// Weekly total returns and 1-year expected returns on a uniform weekly grid.
/// Assets are ordered bond segment first, then FX.
struct ReturnPanel {
    std::vector<std::string> asset_ids;
    std::vector<AssetKind> kinds;
    std::vector<Date> dates;
    Eigen::MatrixXd weekly_returns;    // dates x assets
    Eigen::MatrixXd expected_returns;  // dates x assets, decimal per year

    std::size_t n_assets() const noexcept { return asset_ids.size(); }
    std::size_t n_dates() const noexcept { return dates.size(); }
    std::size_t bond_count() const noexcept;
};

/// Symmetric, unit-diagonal, PSD matrix over an ordered asset universe.
class CorrelationMatrix {
public:
    static constexpr double kSymmetryTol = 1e-12;
    static constexpr double kEigenTol = -1e-8;

    /// Validates all invariants; throws ValidationError naming the first violation.
    CorrelationMatrix(Eigen::MatrixXd values, std::vector<std::string> asset_ids);
    /// Same, with generated ids "A0".."A{n-1}".
    explicit CorrelationMatrix(Eigen::MatrixXd values);

    /// Description of the first violated invariant, if any.
    static std::optional<std::string> violation(const Eigen::MatrixXd& m);

    const Eigen::MatrixXd& values() const noexcept { return values_; }
    const std::vector<std::string>& asset_ids() const noexcept { return ids_; }
    std::size_t size() const noexcept { return static_cast<std::size_t>(values_.rows()); }
    double operator()(std::size_t i, std::size_t j) const { return values_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)); }

    /// Correlation distance sqrt(2 (1 - rho)).
    Eigen::MatrixXd distance() const;

private:
    Eigen::MatrixXd values_;
    std::vector<std::string> ids_;
};

std::vector<std::string> default_asset_ids(std::size_t n);

struct MarketSnapshot {
    Date date;
    CorrelationMatrix corr;
    Eigen::VectorXd volatility;       // annualized
    Eigen::VectorXd expected_return;  // decimal per year
    Eigen::VectorXd forward_return;   // realized over the following horizon

    const std::vector<std::string>& asset_ids() const noexcept { return corr.asset_ids(); }
};

// ---------------------------------------------------------------------------

/// Reads the long-format CSV `date,asset_id,kind,weekly_return,expected_return`.
ReturnPanel ingest_returns(const std::filesystem::path& csv_path);
void write_returns_csv(const ReturnPanel& panel, const std::filesystem::path& csv_path);

struct SnapshotOptions {
    std::size_t window = 52;   // weeks of trailing returns
    std::size_t horizon = 4;   // weeks of forward return
    std::size_t workers = 0;   // 0 = default_workers()
};

/// One snapshot per eligible date; count = n_dates - window - horizon + 1.
std::vector<MarketSnapshot> build_snapshots(const ReturnPanel& panel, const SnapshotOptions& opts = {});

struct NearestCorrelationResult {
    CorrelationMatrix matrix;
    std::size_t iterations = 0;
    std::vector<double> residuals;  // per iteration: Frobenius gap between the PSD and unit-diagonal iterates
};

class NearestCorrelationError : public NumericalError {
public:
    NearestCorrelationError(const std::string& what, Eigen::MatrixXd last, double residual)
        : NumericalError(what), last_iterate(std::move(last)), residual(residual) {}
    Eigen::MatrixXd last_iterate;
    double residual;
};

/// Alternating projections with Dykstra's correction between the PSD cone and the
/// unit-diagonal set. Valid inputs come back unchanged.
NearestCorrelationResult nearest_correlation(const Eigen::MatrixXd& matrix, double tol = 1e-8,
                                             std::size_t max_iter = 200);
CorrelationMatrix to_correlation(const Eigen::MatrixXd& matrix, std::vector<std::string> asset_ids);

// ---------------------------------------------------------------------------

struct RegimeShift {
    std::size_t start_week = 0;
    double corr_scale = 1.0;  // multiplies market-factor loadings
    double vol_scale = 1.0;   // multiplies volatilities
};

/// One-factor + block model with scheduled regimes.
struct SynthCorpusConfig {
    std::size_t n_assets = 16;
    std::size_t n_fx = 4;
    std::size_t blocks = 4;
    std::size_t weeks = 810;
    std::string start_date = "2007-04-06";
    double intra_corr_lo = 0.3, intra_corr_hi = 0.8;
    double loading_lo = 0.2, loading_hi = 0.6;
    double vol_lo = 0.02, vol_hi = 0.12;       // bonds, annualized
    double fx_vol_lo = 0.06, fx_vol_hi = 0.12;
    double yield_lo = 0.01, yield_hi = 0.07;   // bond base expected returns
    double fx_carry = 0.01;                    // FX base expected returns in [-carry, carry]
    double er_noise = 0.002;                   // weekly innovation of the expected-return deviation
    double er_reversion = 0.05;                // weekly mean reversion of that deviation
    double spread_beta = 0.15;                 // expected-return widening per unit of (vol_scale - 1) x vol
    std::vector<RegimeShift> regimes;          // empty = default schedule
};

std::vector<RegimeShift> default_regimes();

ReturnPanel synth_corpus(const SynthCorpusConfig& config, std::uint64_t seed);

// ---------------------------------------------------------------------------
// JSON-lines persistence. Full records carry all three vectors; matrix-only
// records (sampled matrices) carry just `assets` and `matrix`.

void write_snapshots_jsonl(const std::filesystem::path& path, const std::vector<MarketSnapshot>& snapshots);
std::vector<MarketSnapshot> read_snapshots_jsonl(const std::filesystem::path& path);
void write_matrices_jsonl(const std::filesystem::path& path, const std::vector<CorrelationMatrix>& matrices);
/// Reads the matrix of every record, full or matrix-only.
std::vector<CorrelationMatrix> read_matrices_jsonl(const std::filesystem::path& path);

}  // namespace fixsynth
