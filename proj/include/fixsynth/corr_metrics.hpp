#pragma once

// Realism metrics for correlation matrices and the hierarchical clustering they rely on.

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fixsynth/market_data.hpp"

namespace fixsynth {

enum class LinkageMethod { single, ward };

std::string to_string(LinkageMethod m);

/// One agglomeration step. Leaves are 0..n-1; the cluster formed by merge i gets id n + i.
struct Merge {
    std::size_t left;
    std::size_t right;
    double height;
    std::size_t size;
};

struct LinkageTree {
    std::size_t n = 0;
    std::vector<Merge> merges;  // n - 1 records
};

/// Clusters on D = sqrt(2 (1 - rho)).
LinkageTree linkage_matrix(const CorrelationMatrix& c, LinkageMethod method);
/// Same on an arbitrary symmetric distance matrix.
LinkageTree linkage_from_distance(const Eigen::MatrixXd& d, LinkageMethod method);

/// Height at which each pair first shares a cluster; zero diagonal.
Eigen::MatrixXd cophenetic_matrix(const LinkageTree& tree);

/// Pearson correlation of two vectors; nullopt when either has zero variance.
std::optional<double> pearson(std::span<const double> x, std::span<const double> y);

class DegenerateMetricError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// Throws DegenerateMetricError when either condensed vector is constant.
double cophenetic_corr(const CorrelationMatrix& c, LinkageMethod method);

double mean_correl(const CorrelationMatrix& c);
double eigen_gini(const CorrelationMatrix& c);
/// Gini of an arbitrary non-negative spectrum (negative entries clamped to 0).
double spectrum_gini(std::vector<double> eigenvalues);
/// Negative mass of the unit Perron vector, scaled by n.
double perron_frob_sum_neg(const CorrelationMatrix& c);
double power_eigen_exponent(const CorrelationMatrix& c);
/// Fit on a spectrum; eigenvalues are sorted descending internally.
double spectrum_power_exponent(std::vector<double> eigenvalues);

inline constexpr std::size_t kMetricCount = 6;
inline constexpr std::array<const char*, kMetricCount> kMetricNames = {
    "mean_correl", "eigen_gini", "coph_corr_single", "coph_corr_ward", "perron_frob_sum_neg", "power_eigen_exponent"};

struct MetricVector {
    double mean_correl = 0.0;
    double eigen_gini = 0.0;
    std::optional<double> coph_corr_single;  // empty when degenerate
    std::optional<double> coph_corr_ward;
    double perron_frob_sum_neg = 0.0;
    std::optional<double> power_eigen_exponent;  // empty when too few usable eigenvalues

    std::array<std::optional<double>, kMetricCount> as_array() const;
};

MetricVector compute_metrics(const CorrelationMatrix& c);

/// Column means and population standard deviations; undefined entries are skipped and counted.
struct MetricSummary {
    std::size_t matrices = 0;
    std::array<double, kMetricCount> mean{};
    std::array<double, kMetricCount> stdev{};
    std::array<std::size_t, kMetricCount> used{};
    std::array<std::size_t, kMetricCount> skipped{};
};

MetricSummary summarize(std::span<const CorrelationMatrix> matrices, std::size_t workers = 0);

/// Rows are dataset labels; columns are <metric>_mean,<metric>_std pairs.
void write_metric_table_csv(const std::filesystem::path& path,
                            const std::vector<std::pair<std::string, MetricSummary>>& rows);

}  // namespace fixsynth
