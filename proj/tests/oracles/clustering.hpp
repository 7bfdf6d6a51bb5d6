#pragma once

// Naive O(n^3) agglomerative clustering used as an independent reference.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

struct NaiveResult {
    std::vector<double> heights;  // in merge order
    Eigen::MatrixXd cophenetic;
};

/// Single linkage: cluster distance is the minimum over all member pairs, recomputed each step.
inline NaiveResult naive_single(const Eigen::MatrixXd& d) {
    const int n = static_cast<int>(d.rows());
    std::vector<std::vector<int>> clusters;
    for (int i = 0; i < n; ++i) clusters.push_back({i});
    NaiveResult out{{}, Eigen::MatrixXd::Zero(n, n)};
    while (clusters.size() > 1) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t ba = 0, bb = 1;
        for (std::size_t a = 0; a < clusters.size(); ++a)
            for (std::size_t b = a + 1; b < clusters.size(); ++b) {
                double m = std::numeric_limits<double>::infinity();
                for (int i : clusters[a])
                    for (int j : clusters[b]) m = std::min(m, d(i, j));
                if (m < best) {
                    best = m;
                    ba = a;
                    bb = b;
                }
            }
        for (int i : clusters[ba])
            for (int j : clusters[bb]) out.cophenetic(i, j) = out.cophenetic(j, i) = best;
        out.heights.push_back(best);
        clusters[ba].insert(clusters[ba].end(), clusters[bb].begin(), clusters[bb].end());
        clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(bb));
    }
    return out;
}

/// Ward linkage computed geometrically: points are the rows of `points`, clusters are
/// compared through their centroids, d(u, v) = sqrt(2 |u| |v| / (|u| + |v|)) * |c_u - c_v|.
inline NaiveResult naive_ward(const Eigen::MatrixXd& points) {
    const int n = static_cast<int>(points.rows());
    std::vector<std::vector<int>> clusters;
    for (int i = 0; i < n; ++i) clusters.push_back({i});
    NaiveResult out{{}, Eigen::MatrixXd::Zero(n, n)};
    auto centroid = [&](const std::vector<int>& c) {
        Eigen::RowVectorXd m = Eigen::RowVectorXd::Zero(points.cols());
        for (int i : c) m += points.row(i);
        return Eigen::RowVectorXd(m / static_cast<double>(c.size()));
    };
    while (clusters.size() > 1) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t ba = 0, bb = 1;
        for (std::size_t a = 0; a < clusters.size(); ++a)
            for (std::size_t b = a + 1; b < clusters.size(); ++b) {
                const double na = static_cast<double>(clusters[a].size()), nb = static_cast<double>(clusters[b].size());
                const double v = std::sqrt(2.0 * na * nb / (na + nb)) * (centroid(clusters[a]) - centroid(clusters[b])).norm();
                if (v < best) {
                    best = v;
                    ba = a;
                    bb = b;
                }
            }
        for (int i : clusters[ba])
            for (int j : clusters[bb]) out.cophenetic(i, j) = out.cophenetic(j, i) = best;
        out.heights.push_back(best);
        clusters[ba].insert(clusters[ba].end(), clusters[bb].begin(), clusters[bb].end());
        clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(bb));
    }
    return out;
}

/// Rows x_i with |x_i - x_j| = sqrt(2 (1 - C_ij)): the symmetric square root of C.
inline Eigen::MatrixXd correlation_embedding(const Eigen::MatrixXd& c) {
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c);
    return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

/// Textbook two-pass Pearson correlation over the strict upper triangles.
inline double upper_pearson(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    std::vector<double> x, y;
    for (int i = 0; i < a.rows(); ++i)
        for (int j = i + 1; j < a.cols(); ++j) {
            x.push_back(a(i, j));
            y.push_back(b(i, j));
        }
    double mx = 0, my = 0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        mx += x[k];
        my += y[k];
    }
    mx /= static_cast<double>(x.size());
    my /= static_cast<double>(y.size());
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        sxy += (x[k] - mx) * (y[k] - my);
        sxx += (x[k] - mx) * (x[k] - mx);
        syy += (y[k] - my) * (y[k] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace oracle
