#include "fixsynth/corr_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "fixsynth/parallel.hpp"

namespace fixsynth {

std::string to_string(LinkageMethod m) { return m == LinkageMethod::single ? "single" : "ward"; }

namespace {

void check_distance(const Eigen::MatrixXd& d) {
    if (d.rows() != d.cols() || d.rows() < 2) throw ValidationError("distance matrix must be square with n >= 2");
    if (!d.allFinite()) throw ValidationError("distance matrix has non-finite entries");
}

struct UnionFind {
    std::vector<std::size_t> parent, cluster;
    explicit UnionFind(std::size_t n) : parent(n), cluster(n) {
        std::iota(parent.begin(), parent.end(), 0);
        std::iota(cluster.begin(), cluster.end(), 0);
    }
    std::size_t find(std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    }
};

LinkageTree single_linkage(const Eigen::MatrixXd& d) {
    const auto n = static_cast<std::size_t>(d.rows());
    // Prim's MST on the dense graph.
    struct Edge {
        std::size_t u, v;
        double w;
    };
    std::vector<Edge> edges;
    std::vector<bool> in_tree(n, false);
    std::vector<double> best(n, std::numeric_limits<double>::infinity());
    std::vector<std::size_t> from(n, 0);
    in_tree[0] = true;
    for (std::size_t j = 1; j < n; ++j) best[j] = d(0, static_cast<Eigen::Index>(j));
    for (std::size_t step = 1; step < n; ++step) {
        std::size_t pick = n;
        for (std::size_t j = 0; j < n; ++j)
            if (!in_tree[j] && (pick == n || best[j] < best[pick])) pick = j;
        edges.push_back({std::min(from[pick], pick), std::max(from[pick], pick), best[pick]});
        in_tree[pick] = true;
        for (std::size_t j = 0; j < n; ++j) {
            const double w = d(static_cast<Eigen::Index>(pick), static_cast<Eigen::Index>(j));
            if (!in_tree[j] && w < best[j]) {
                best[j] = w;
                from[j] = pick;
            }
        }
    }
    std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) { return a.w < b.w; });

    LinkageTree tree{n, {}};
    UnionFind uf(n);
    std::vector<std::size_t> size(2 * n - 1, 1);
    for (std::size_t g = 0; g < edges.size();) {
        std::size_t h = g;
        while (h < edges.size() && edges[h].w == edges[g].w) ++h;
        // Within a tie group, merge the smallest (left, right) cluster-id pair first.
        std::vector<Edge> group(edges.begin() + static_cast<std::ptrdiff_t>(g), edges.begin() + static_cast<std::ptrdiff_t>(h));
        while (!group.empty()) {
            std::size_t pick = 0;
            std::pair<std::size_t, std::size_t> key{SIZE_MAX, SIZE_MAX};
            for (std::size_t e = 0; e < group.size(); ++e) {
                const std::size_t a = uf.cluster[uf.find(group[e].u)], b = uf.cluster[uf.find(group[e].v)];
                const std::pair k{std::min(a, b), std::max(a, b)};
                if (k < key) {
                    key = k;
                    pick = e;
                }
            }
            const std::size_t ru = uf.find(group[pick].u), rv = uf.find(group[pick].v);
            const std::size_t id = n + tree.merges.size();
            size[id] = size[key.first] + size[key.second];
            tree.merges.push_back({key.first, key.second, group[pick].w, size[id]});
            uf.parent[rv] = ru;
            uf.cluster[ru] = id;
            group.erase(group.begin() + static_cast<std::ptrdiff_t>(pick));
        }
        g = h;
    }
    return tree;
}

LinkageTree ward_linkage(const Eigen::MatrixXd& d0) {
    const auto n = static_cast<std::size_t>(d0.rows());
    Eigen::MatrixXd d = d0;                 // indexed by slot
    std::vector<std::size_t> id(n), size(n, 1);
    std::iota(id.begin(), id.end(), 0);
    std::vector<bool> active(n, true);
    LinkageTree tree{n, {}};
    for (std::size_t step = 0; step + 1 < n; ++step) {
        std::size_t bi = n, bj = n;
        double bd = std::numeric_limits<double>::infinity();
        std::pair<std::size_t, std::size_t> bkey{SIZE_MAX, SIZE_MAX};
        for (std::size_t i = 0; i < n; ++i) {
            if (!active[i]) continue;
            for (std::size_t j = i + 1; j < n; ++j) {
                if (!active[j]) continue;
                const double v = d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
                const std::pair key{std::min(id[i], id[j]), std::max(id[i], id[j])};
                if (v < bd || (v == bd && key < bkey)) {
                    bd = v;
                    bi = i;
                    bj = j;
                    bkey = key;
                }
            }
        }
        const double ni = static_cast<double>(size[bi]), nj = static_cast<double>(size[bj]);
        for (std::size_t k = 0; k < n; ++k) {
            if (!active[k] || k == bi || k == bj) continue;
            const double nk = static_cast<double>(size[k]);
            const auto I = static_cast<Eigen::Index>(bi), J = static_cast<Eigen::Index>(bj), K = static_cast<Eigen::Index>(k);
            const double dik = d(I, K), djk = d(J, K);
            const double v = std::sqrt(std::max(
                0.0, ((ni + nk) * dik * dik + (nj + nk) * djk * djk - nk * bd * bd) / (ni + nj + nk)));
            d(I, K) = d(K, I) = v;
        }
        const std::size_t new_id = n + step;
        tree.merges.push_back({bkey.first, bkey.second, bd, size[bi] + size[bj]});
        id[bi] = new_id;
        size[bi] += size[bj];
        active[bj] = false;
    }
    return tree;
}

std::vector<double> condensed(const Eigen::MatrixXd& m) {
    std::vector<double> out;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = i + 1; j < m.cols(); ++j) out.push_back(m(i, j));
    return out;
}

std::vector<double> spectrum(const CorrelationMatrix& c) {
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c.values(), Eigen::EigenvaluesOnly);
    return {es.eigenvalues().data(), es.eigenvalues().data() + es.eigenvalues().size()};
}

}  // namespace

LinkageTree linkage_from_distance(const Eigen::MatrixXd& d, LinkageMethod method) {
    check_distance(d);
    return method == LinkageMethod::single ? single_linkage(d) : ward_linkage(d);
}

LinkageTree linkage_matrix(const CorrelationMatrix& c, LinkageMethod method) {
    return linkage_from_distance(c.distance(), method);
}

Eigen::MatrixXd cophenetic_matrix(const LinkageTree& tree) {
    const std::size_t n = tree.n;
    if (tree.merges.size() + 1 != n) throw ValidationError("linkage tree must have n - 1 merges");
    std::vector<std::vector<std::size_t>> members(2 * n - 1);
    for (std::size_t i = 0; i < n; ++i) members[i] = {i};
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t m = 0; m < tree.merges.size(); ++m) {
        const Merge& mg = tree.merges[m];
        if (mg.left >= n + m || mg.right >= n + m || members[mg.left].empty() || members[mg.right].empty())
            throw ValidationError("linkage tree references an invalid cluster at merge " + std::to_string(m));
        for (std::size_t a : members[mg.left])
            for (std::size_t b : members[mg.right])
                out(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
                    out(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) = mg.height;
        auto& merged = members[n + m];
        merged = std::move(members[mg.left]);
        merged.insert(merged.end(), members[mg.right].begin(), members[mg.right].end());
        members[mg.left].clear();
        members[mg.right].clear();
    }
    return out;
}

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw ValidationError("pearson needs two equal-length vectors, n >= 2");
    const double nx = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / nx, my = std::accumulate(y.begin(), y.end(), 0.0) / nx;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    // Relative floor so rounding noise on constant vectors counts as zero variance.
    const double eps_x = 1e-24 * std::max(1.0, mx * mx) * nx, eps_y = 1e-24 * std::max(1.0, my * my) * nx;
    if (sxx <= eps_x || syy <= eps_y) return std::nullopt;
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double cophenetic_corr(const CorrelationMatrix& c, LinkageMethod method) {
    const Eigen::MatrixXd d = c.distance();
    const auto coph = cophenetic_matrix(linkage_from_distance(d, method));
    const auto a = condensed(d), b = condensed(coph);
    const auto r = pearson(a, b);
    if (!r)
        throw DegenerateMetricError("cophenetic correlation undefined (" + to_string(method) +
                                    "): zero variance in distances or cophenetic heights");
    return *r;
}

double mean_correl(const CorrelationMatrix& c) {
    if (c.size() < 2) throw ValidationError("mean_correl needs n >= 2");
    const auto v = condensed(c.values());
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double spectrum_gini(std::vector<double> lam) {
    if (lam.empty()) throw ValidationError("empty spectrum");
    for (double& l : lam) l = std::max(l, 0.0);
    std::sort(lam.begin(), lam.end());
    const double n = static_cast<double>(lam.size());
    const double total = std::accumulate(lam.begin(), lam.end(), 0.0);
    if (!(total > 0.0)) throw NumericalError("Gini undefined for an all-zero spectrum");
    // sum_ij |x_i - x_j| = 2 sum_i (2i - n - 1) x_(i) with 1-based ascending ranks.
    double s = 0.0;
    for (std::size_t i = 0; i < lam.size(); ++i) s += (2.0 * static_cast<double>(i + 1) - n - 1.0) * lam[i];
    const double mean = total / n;
    return std::max(0.0, 2.0 * s / (2.0 * n * n * mean));
}

double eigen_gini(const CorrelationMatrix& c) { return spectrum_gini(spectrum(c)); }

double perron_frob_sum_neg(const CorrelationMatrix& c) {
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c.values());
    Eigen::VectorXd v = es.eigenvectors().col(es.eigenvectors().cols() - 1).normalized();
    const double sum = v.sum();
    bool flip = sum < 0.0;
    if (std::abs(sum) <= 1e-12) {
        // Balanced vector: orient so the first non-negligible entry is positive.
        for (Eigen::Index i = 0; i < v.size(); ++i)
            if (std::abs(v(i)) > 1e-12) {
                flip = v(i) < 0.0;
                break;
            }
    }
    if (flip) v = -v;
    double neg = 0.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) neg += std::max(-v(i), 0.0);
    return neg * static_cast<double>(v.size());
}

double spectrum_power_exponent(std::vector<double> lam) {
    std::sort(lam.begin(), lam.end(), std::greater<>());
    std::vector<double> x, y;
    std::size_t usable = 0;
    for (std::size_t k = 0; k < lam.size(); ++k) {
        if (!(lam[k] > 1e-10)) continue;
        ++usable;
        if (k == 0) continue;  // rank 1 is the market mode
        x.push_back(std::log(static_cast<double>(k + 1)));
        y.push_back(std::log(lam[k]));
    }
    if (usable < 3 || x.size() < 2)
        throw DegenerateMetricError("power exponent needs at least 3 eigenvalues above 1e-10, got " + std::to_string(usable));
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    const double slope = sxy / sxx;
    return slope == 0.0 ? 0.0 : -slope;
}

double power_eigen_exponent(const CorrelationMatrix& c) {
    if (c.size() < 4) throw ValidationError("power_eigen_exponent needs n >= 4");
    return spectrum_power_exponent(spectrum(c));
}

std::array<std::optional<double>, kMetricCount> MetricVector::as_array() const {
    return {mean_correl, eigen_gini, coph_corr_single, coph_corr_ward, perron_frob_sum_neg, power_eigen_exponent};
}

MetricVector compute_metrics(const CorrelationMatrix& c) {
    MetricVector m;
    m.mean_correl = mean_correl(c);
    m.eigen_gini = eigen_gini(c);
    auto guarded = [](auto&& f) -> std::optional<double> {
        try {
            return f();
        } catch (const DegenerateMetricError&) {
            return std::nullopt;
        }
    };
    m.coph_corr_single = guarded([&] { return cophenetic_corr(c, LinkageMethod::single); });
    m.coph_corr_ward = guarded([&] { return cophenetic_corr(c, LinkageMethod::ward); });
    m.perron_frob_sum_neg = perron_frob_sum_neg(c);
    if (c.size() >= 4) m.power_eigen_exponent = guarded([&] { return power_eigen_exponent(c); });
    return m;
}

MetricSummary summarize(std::span<const CorrelationMatrix> matrices, std::size_t workers) {
    if (matrices.empty()) throw ValidationError("summarize needs at least one matrix");
    std::vector<MetricVector> rows(matrices.size());
    parallel_for(matrices.size(), [&](std::size_t i) { rows[i] = compute_metrics(matrices[i]); }, workers);
    MetricSummary s;
    s.matrices = matrices.size();
    for (const auto& r : rows) {
        const auto a = r.as_array();
        for (std::size_t k = 0; k < kMetricCount; ++k) {
            if (a[k]) {
                s.mean[k] += *a[k];
                ++s.used[k];
            } else {
                ++s.skipped[k];
            }
        }
    }
    for (std::size_t k = 0; k < kMetricCount; ++k) s.mean[k] = s.used[k] ? s.mean[k] / static_cast<double>(s.used[k]) : std::nan("");
    for (const auto& r : rows) {
        const auto a = r.as_array();
        for (std::size_t k = 0; k < kMetricCount; ++k)
            if (a[k]) s.stdev[k] += (*a[k] - s.mean[k]) * (*a[k] - s.mean[k]);
    }
    for (std::size_t k = 0; k < kMetricCount; ++k)
        s.stdev[k] = s.used[k] ? std::sqrt(s.stdev[k] / static_cast<double>(s.used[k])) : std::nan("");
    return s;
}

void write_metric_table_csv(const std::filesystem::path& path,
                            const std::vector<std::pair<std::string, MetricSummary>>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ValidationError("cannot write '" + path.string() + "'");
    out << "dataset,matrices";
    for (const char* name : kMetricNames) out << ',' << name << "_mean," << name << "_std";
    out << '\n';
    out.precision(10);
    for (const auto& [label, s] : rows) {
        out << label << ',' << s.matrices;
        for (std::size_t k = 0; k < kMetricCount; ++k) out << ',' << s.mean[k] << ',' << s.stdev[k];
        out << '\n';
    }
}

}  // namespace fixsynth
