#include "fixsynth/allocator.hpp"

#include <algorithm>
#include <cmath>

namespace fixsynth {

std::string to_string(QpStatus s) {
    switch (s) {
        case QpStatus::solved: return "solved";
        case QpStatus::max_iter: return "max_iter";
        case QpStatus::infeasible: return "infeasible";
    }
    return "?";
}

namespace {

double inf_norm(const Eigen::VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

Eigen::VectorXd row_rho(const QpData& qp, double rho) {
    Eigen::VectorXd r(qp.A.rows());
    for (Eigen::Index i = 0; i < r.size(); ++i) {
        if (qp.l(i) == qp.u(i)) {
            r(i) = 1e3 * rho;
        } else if (std::isinf(qp.l(i)) && std::isinf(qp.u(i))) {
            r(i) = 1e-6;
        } else {
            r(i) = rho;
        }
    }
    return r;
}

// Equality-constrained re-solve on the active set guessed from the ADMM duals.
bool polish(const QpData& qp, QpResult& res) {
    const Eigen::Index n = qp.P.rows(), m = qp.A.rows();
    std::vector<Eigen::Index> rows;
    std::vector<int> side;  // -1 lower, +1 upper, 0 equality
    const Eigen::VectorXd z = qp.A * res.x;
    for (Eigen::Index i = 0; i < m; ++i) {
        if (qp.l(i) == qp.u(i)) {
            rows.push_back(i);
            side.push_back(0);
        } else if (std::isfinite(qp.l(i)) && z(i) - qp.l(i) < -res.y(i)) {
            rows.push_back(i);
            side.push_back(-1);
        } else if (std::isfinite(qp.u(i)) && qp.u(i) - z(i) < res.y(i)) {
            rows.push_back(i);
            side.push_back(1);
        }
    }
    const auto k = static_cast<Eigen::Index>(rows.size());
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + k, n + k);
    Eigen::VectorXd rhs(n + k);
    kkt.topLeftCorner(n, n) = qp.P;
    rhs.head(n) = -qp.q;
    for (Eigen::Index r = 0; r < k; ++r) {
        const Eigen::Index i = rows[static_cast<std::size_t>(r)];
        kkt.block(n + r, 0, 1, n) = qp.A.row(i);
        kkt.block(0, n + r, n, 1) = qp.A.row(i).transpose();
        rhs(n + r) = side[static_cast<std::size_t>(r)] > 0 ? qp.u(i) : qp.l(i);
    }
    const double delta = 1e-10 * std::max(1.0, qp.P.cwiseAbs().maxCoeff());
    Eigen::MatrixXd reg = kkt;
    reg.topLeftCorner(n, n).diagonal().array() += delta;
    reg.bottomRightCorner(k, k).diagonal().array() -= delta;
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(reg);
    Eigen::VectorXd sol = lu.solve(rhs);
    for (int it = 0; it < 5; ++it) sol += lu.solve(rhs - kkt * sol);  // iterative refinement
    if (!sol.allFinite()) return false;

    const Eigen::VectorXd x = sol.head(n);
    Eigen::VectorXd y = Eigen::VectorXd::Zero(m);
    for (Eigen::Index r = 0; r < k; ++r) y(rows[static_cast<std::size_t>(r)]) = sol(n + r);
    const Eigen::VectorXd ax = qp.A * x;
    for (Eigen::Index i = 0; i < m; ++i) {
        const double tol = 1e-9 * std::max(1.0, std::max(std::isfinite(qp.l(i)) ? std::abs(qp.l(i)) : 0.0,
                                                         std::isfinite(qp.u(i)) ? std::abs(qp.u(i)) : 0.0));
        if (ax(i) < qp.l(i) - tol || ax(i) > qp.u(i) + tol) return false;
    }
    const double ytol = 1e-7 * std::max(1.0, inf_norm(y));
    for (Eigen::Index r = 0; r < k; ++r) {
        const double v = y(rows[static_cast<std::size_t>(r)]);
        const int s = side[static_cast<std::size_t>(r)];
        if ((s < 0 && v > ytol) || (s > 0 && v < -ytol)) return false;
    }
    res.x = x;
    res.y = y;
    res.primal_residual = 0.0;
    for (Eigen::Index i = 0; i < m; ++i)
        res.primal_residual = std::max(res.primal_residual, std::max(qp.l(i) - ax(i), ax(i) - qp.u(i)));
    res.dual_residual = inf_norm(qp.P * x + qp.q + qp.A.transpose() * y);
    res.polished = true;
    return true;
}

}  // namespace

QpResult solve_qp(const QpData& qp, const QpConfig& cfg) {
    const Eigen::Index n = qp.P.rows(), m = qp.A.rows();
    if (qp.P.cols() != n || qp.q.size() != n || qp.A.cols() != n || qp.l.size() != m || qp.u.size() != m)
        throw ValidationError("solve_qp: inconsistent problem dimensions");
    for (Eigen::Index i = 0; i < m; ++i)
        if (!(qp.l(i) <= qp.u(i))) throw ValidationError("solve_qp: lower bound above upper bound on row " + std::to_string(i));
    if (!qp.P.allFinite() || !qp.q.allFinite() || !qp.A.allFinite()) throw ValidationError("solve_qp: non-finite data");

    double rho = cfg.rho;
    Eigen::VectorXd rv = row_rho(qp, rho);
    auto factor = [&] {
        Eigen::MatrixXd k = qp.P + qp.A.transpose() * rv.asDiagonal() * qp.A;
        k.diagonal().array() += cfg.sigma;
        return Eigen::LDLT<Eigen::MatrixXd>(k);
    };
    Eigen::LDLT<Eigen::MatrixXd> kkt = factor();

    QpResult res;
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n), z = Eigen::VectorXd::Zero(m), y = Eigen::VectorXd::Zero(m);
    z = z.cwiseMax(qp.l).cwiseMin(qp.u);
    for (std::size_t k = 1; k <= cfg.max_iter; ++k) {
        const Eigen::VectorXd rhs = cfg.sigma * x - qp.q + qp.A.transpose() * (rv.cwiseProduct(z) - y);
        const Eigen::VectorXd xt = kkt.solve(rhs);
        const Eigen::VectorXd zt = qp.A * xt;
        const Eigen::VectorXd x_new = cfg.alpha * xt + (1.0 - cfg.alpha) * x;
        const Eigen::VectorXd z_rel = cfg.alpha * zt + (1.0 - cfg.alpha) * z;
        const Eigen::VectorXd z_new = (z_rel + y.cwiseQuotient(rv)).cwiseMax(qp.l).cwiseMin(qp.u);
        const Eigen::VectorXd y_new = y + rv.cwiseProduct(z_rel - z_new);
        const Eigen::VectorXd dy = y_new - y;
        x = x_new;
        z = z_new;
        y = y_new;

        const Eigen::VectorXd ax = qp.A * x, px = qp.P * x, aty = qp.A.transpose() * y;
        const double rp = inf_norm(ax - z), rd = inf_norm(px + qp.q + aty);
        const double eps_p = cfg.eps_abs + cfg.eps_rel * std::max(inf_norm(ax), inf_norm(z));
        const double eps_d = cfg.eps_abs + cfg.eps_rel * std::max({inf_norm(px), inf_norm(aty), inf_norm(qp.q)});
        res.iterations = k;
        res.primal_residual = rp;
        res.dual_residual = rd;
        if (rp <= eps_p && rd <= eps_d) {
            res.status = QpStatus::solved;
            break;
        }
        // Primal infeasibility certificate from the dual step.
        const double ndy = inf_norm(dy);
        if (ndy > 1e-12) {
            const double thr = cfg.eps_infeasible * ndy;
            if (inf_norm(qp.A.transpose() * dy) <= thr) {
                double support = 0.0;
                bool unbounded = false;
                for (Eigen::Index i = 0; i < m; ++i) {
                    if (dy(i) > thr) {
                        if (std::isinf(qp.u(i))) unbounded = true;
                        else support += qp.u(i) * dy(i);
                    } else if (dy(i) < -thr) {
                        if (std::isinf(qp.l(i))) unbounded = true;
                        else support += qp.l(i) * dy(i);
                    }
                }
                if (!unbounded && support <= -thr) {
                    res.status = QpStatus::infeasible;
                    break;
                }
            }
        }
        if (cfg.adaptive_rho && k % cfg.adapt_interval == 0) {
            const double sp = rp / std::max({inf_norm(ax), inf_norm(z), 1e-30});
            const double sd = rd / std::max({inf_norm(px), inf_norm(aty), inf_norm(qp.q), 1e-30});
            const double proposed = std::clamp(rho * std::sqrt(sp / std::max(sd, 1e-30)), 1e-6, 1e6);
            if (proposed > 5.0 * rho || proposed < 0.2 * rho) {
                rho = proposed;
                rv = row_rho(qp, rho);
                kkt = factor();
            }
        }
    }
    res.x = x;
    res.y = y;
    if (res.status == QpStatus::solved && cfg.polish) polish(qp, res);
    return res;
}

// ---------------------------------------------------------------------------

TrackingModel::TrackingModel(const SimulationSet& set, std::vector<AssetKind> k)
    : mu(set.mu), asset_ids(set.asset_ids), kinds(std::move(k)) {
    if (set.n_sims() == 0) throw ValidationError("simulation set is empty");
    if (kinds.size() != asset_ids.size()) throw ValidationError("asset kinds do not match the simulation universe");
    gram = set.returns.transpose() * set.returns / static_cast<double>(set.n_sims());
    gram = 0.5 * (gram + gram.transpose()).eval();
}

PortfolioProblem build_problem(const TrackingModel& model, std::size_t bench, double target,
                               const WeightBounds& bounds) {
    const auto m = static_cast<Eigen::Index>(model.asset_ids.size());
    if (bench >= model.asset_ids.size()) throw ValidationError("benchmark index out of range");
    if (model.kinds[bench] != AssetKind::bond)
        throw ValidationError("benchmark '" + model.asset_ids[bench] + "' is an FX asset; benchmarks must be bonds");
    if (!(target >= 0.0)) throw ValidationError("excess target must be >= 0");
    if (!(bounds.bond_lo <= bounds.bond_hi) || !(bounds.fx_lo <= bounds.fx_hi))
        throw ValidationError("weight bounds must satisfy lo <= hi");

    PortfolioProblem p;
    p.bench = bench;
    p.target = target;
    p.bounds = bounds;
    p.mu = model.mu;
    const auto b = static_cast<Eigen::Index>(bench);
    p.qp.P = 2.0 * model.gram;
    p.qp.q = -2.0 * model.gram.col(b);
    p.constant = model.gram(b, b);
    p.qp.A = Eigen::MatrixXd::Zero(m + 2, m);
    p.qp.l.resize(m + 2);
    p.qp.u.resize(m + 2);
    p.qp.A.row(0) = model.mu.transpose();
    p.qp.l(0) = model.mu(b) + target;
    p.qp.u(0) = kInf;
    p.qp.l(1) = p.qp.u(1) = 1.0;
    for (Eigen::Index i = 0; i < m; ++i) {
        const bool bond = model.kinds[static_cast<std::size_t>(i)] == AssetKind::bond;
        p.is_bond.push_back(bond);
        p.qp.A(1, i) = bond ? 1.0 : 0.0;
        p.qp.A(2 + i, i) = 1.0;
        p.qp.l(2 + i) = bond ? bounds.bond_lo : bounds.fx_lo;
        p.qp.u(2 + i) = bond ? bounds.bond_hi : bounds.fx_hi;
    }
    return p;
}

PortfolioProblem build_problem(const SimulationSet& set, const std::vector<AssetKind>& kinds, std::size_t bench,
                               double target, const WeightBounds& bounds) {
    return build_problem(TrackingModel(set, kinds), bench, target, bounds);
}

double portfolio_objective(const PortfolioProblem& p, const Eigen::VectorXd& w) {
    return std::max(0.0, 0.5 * w.dot(p.qp.P * w) + p.qp.q.dot(w) + p.constant);
}

QpSolution solve_portfolio(const PortfolioProblem& p, const QpConfig& cfg) {
    QpData qp = p.qp;
    const double cost = std::max(qp.P.diagonal().cwiseAbs().maxCoeff(), 1e-300);
    qp.P /= cost;
    qp.q /= cost;
    const double row = inf_norm(p.mu);
    if (row > 0.0) {
        qp.A.row(0) /= row;
        qp.l(0) /= row;
    }
    const QpResult r = solve_qp(qp, cfg);
    QpSolution s;
    s.iterations = r.iterations;
    s.primal_residual = r.primal_residual;
    s.dual_residual = r.dual_residual;
    s.status = r.status;
    s.weights = r.x;
    if (s.status == QpStatus::solved) {
        // Snap to the box; an unpolished iterate can sit a hair outside it.
        const auto m = s.weights.size();
        for (Eigen::Index i = 0; i < m; ++i) s.weights(i) = std::clamp(s.weights(i), p.qp.l(2 + i), p.qp.u(2 + i));
        const double budget = (p.qp.A.row(1) * s.weights)(0) - 1.0;
        const double floor = p.mu.dot(s.weights) - p.qp.l(0);
        if (std::abs(budget) > 1e-6 || floor < -1e-6) s.status = QpStatus::max_iter;
    }
    s.objective = portfolio_objective(p, s.weights);
    return s;
}

nlohmann::json solution_to_json(const QpSolution& s, const std::vector<std::string>& ids) {
    nlohmann::json w = nlohmann::json::object();
    for (std::size_t i = 0; i < ids.size() && static_cast<Eigen::Index>(i) < s.weights.size(); ++i)
        w[ids[i]] = s.weights(static_cast<Eigen::Index>(i));
    return {{"status", to_string(s.status)},
            {"objective", s.objective},
            {"iterations", s.iterations},
            {"primal_residual", s.primal_residual},
            {"dual_residual", s.dual_residual},
            {"weights", w}};
}

double tev(std::span<const double> port, std::span<const double> bench, double periods_per_year) {
    if (port.size() != bench.size()) throw ValidationError("tev: series lengths differ");
    if (port.size() < 2) throw ValidationError("tev needs at least 2 periods");
    const double n = static_cast<double>(port.size());
    double mean = 0.0;
    for (std::size_t i = 0; i < port.size(); ++i) mean += port[i] - bench[i];
    mean /= n;
    double ss = 0.0;
    for (std::size_t i = 0; i < port.size(); ++i) ss += (port[i] - bench[i] - mean) * (port[i] - bench[i] - mean);
    return std::sqrt(ss / (n - 1.0)) * std::sqrt(periods_per_year) * 1e4;
}

}  // namespace fixsynth
