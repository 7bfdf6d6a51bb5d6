#pragma once

// Brute-force reference for a 2-bond + 1-FX tracking problem: enumerate the feasible
// set on a 1e-3 lattice and keep the lowest mean squared deviation.

#include <cmath>
#include <limits>

#include <Eigen/Dense>

namespace oracle {

struct GridResult {
    double objective = std::numeric_limits<double>::infinity();
    Eigen::Vector3d w = Eigen::Vector3d::Zero();
    bool feasible = false;
};

/// returns: n x 3 (bond, bond, fx); bench in {0, 1}.
inline GridResult grid_search_3(const Eigen::MatrixXd& returns, const Eigen::Vector3d& mu, int bench, double target,
                                double fx_bound = 0.05, double step = 1e-3) {
    GridResult best;
    const int nb = static_cast<int>(std::lround(1.0 / step));
    const int nf = static_cast<int>(std::lround(fx_bound / step));
    const Eigen::VectorXd rb = returns.col(bench);
    for (int i = 0; i <= nb; ++i) {
        for (int j = -nf; j <= nf; ++j) {
            const Eigen::Vector3d w(i * step, 1.0 - i * step, j * step);
            if (mu.dot(w) < mu(bench) + target) continue;
            const double obj = (returns * w - rb).squaredNorm() / static_cast<double>(returns.rows());
            if (obj < best.objective) {
                best.objective = obj;
                best.w = w;
                best.feasible = true;
            }
        }
    }
    return best;
}

}  // namespace oracle
