#pragma once

#include <filesystem>
#include <string>

#include <Eigen/Dense>

#include "fixsynth/rng.hpp"

namespace testing {

inline std::filesystem::path temp_path(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "fixsynth_tests";
    std::filesystem::create_directories(dir);
    return dir / name;
}

/// Normalized Gram matrix of random Gaussian vectors; always a valid correlation matrix.
inline Eigen::MatrixXd random_correlation(fixsynth::rng::CounterRng& g, int n, int extra = 2) {
    Eigen::MatrixXd v(n, n + extra);
    for (int i = 0; i < v.rows(); ++i)
        for (int j = 0; j < v.cols(); ++j) v(i, j) = g.normal();
    Eigen::MatrixXd c = v * v.transpose();
    Eigen::VectorXd d = c.diagonal().cwiseSqrt().cwiseInverse();
    c = d.asDiagonal() * c * d.asDiagonal();
    for (int i = 0; i < n; ++i) {
        c(i, i) = 1.0;
        for (int j = i + 1; j < n; ++j) c(j, i) = c(i, j);
    }
    return c;
}

inline Eigen::MatrixXd equicorrelated(int n, double rho) {
    Eigen::MatrixXd c = Eigen::MatrixXd::Constant(n, n, rho);
    c.diagonal().setOnes();
    return c;
}

}  // namespace testing
