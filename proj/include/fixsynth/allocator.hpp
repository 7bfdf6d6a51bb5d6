#pragma once

// Tracking-error portfolio construction over a simulation set, solved with an
// operator-splitting (ADMM) QP solver.

#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "fixsynth/market_data.hpp"
#include "fixsynth/simulation.hpp"

namespace fixsynth {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// minimize 1/2 x'Px + q'x  subject to  l <= Ax <= u.
struct QpData {
    Eigen::MatrixXd P;
    Eigen::VectorXd q;
    Eigen::MatrixXd A;
    Eigen::VectorXd l;
    Eigen::VectorXd u;
};

struct QpConfig {
    double eps_abs = 1e-6;
    double eps_rel = 1e-6;
    double eps_infeasible = 1e-5;
    std::size_t max_iter = 50000;
    double rho = 0.1;
    double sigma = 1e-6;
    double alpha = 1.6;
    bool adaptive_rho = true;
    std::size_t adapt_interval = 25;
    bool polish = true;
};

enum class QpStatus { solved, max_iter, infeasible };
std::string to_string(QpStatus s);

struct QpResult {
    Eigen::VectorXd x;
    Eigen::VectorXd y;  // constraint duals
    QpStatus status = QpStatus::max_iter;
    std::size_t iterations = 0;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    bool polished = false;
};

/// Deterministic ADMM with per-row step sizes (equality rows get 1e3 rho), adaptive rho,
/// a dual-divergence infeasibility certificate and an optional active-set polish.
QpResult solve_qp(const QpData& qp, const QpConfig& cfg = {});

// ---------------------------------------------------------------------------

struct WeightBounds {
    double bond_lo = 0.0, bond_hi = 1.0;
    double fx_lo = -0.05, fx_hi = 0.05;
};

/// Second moments of a simulation set, shared by every problem built on it.
struct TrackingModel {
    Eigen::MatrixXd gram;  // R'R / n_sims
    Eigen::VectorXd mu;
    std::vector<std::string> asset_ids;
    std::vector<AssetKind> kinds;

    TrackingModel(const SimulationSet& set, std::vector<AssetKind> kinds);
};

struct PortfolioProblem {
    std::size_t bench = 0;
    double target = 0.0;  // decimal per year
    WeightBounds bounds;
    QpData qp;               // Q = 2 R'R/n, c = -2 R'r_bench/n, rows: return floor, budget, bounds
    double constant = 0.0;   // r_bench'r_bench / n, so objective = mean squared deviation
    Eigen::VectorXd mu;
    std::vector<bool> is_bond;
};

PortfolioProblem build_problem(const TrackingModel& model, std::size_t bench, double target,
                               const WeightBounds& bounds = {});
PortfolioProblem build_problem(const SimulationSet& set, const std::vector<AssetKind>& kinds, std::size_t bench,
                               double target, const WeightBounds& bounds = {});

struct QpSolution {
    Eigen::VectorXd weights;
    double objective = 0.0;  // mean squared tracking deviation per simulated period
    std::size_t iterations = 0;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    QpStatus status = QpStatus::max_iter;
};

/// Solves with internal cost and row scaling; the argmin is invariant to scaling the returns.
QpSolution solve_portfolio(const PortfolioProblem& problem, const QpConfig& cfg = {});

double portfolio_objective(const PortfolioProblem& problem, const Eigen::VectorXd& w);

nlohmann::json solution_to_json(const QpSolution& s, const std::vector<std::string>& asset_ids);

/// Sample stdev of (port - bench) times sqrt(periods_per_year), in basis points.
double tev(std::span<const double> port, std::span<const double> bench, double periods_per_year = 12.0);

}  // namespace fixsynth
