#include <cmath>

#include "doctest.h"
#include "fixsynth/allocator.hpp"
#include "oracles/grid_qp.hpp"
#include "unit/helpers.hpp"

using namespace fixsynth;

namespace {

// Correlated one-month returns for a universe of `bonds` bonds followed by `fx` currencies.
SimulationSet random_set(rng::CounterRng& g, int sims, int bonds, int fx) {
    const int m = bonds + fx;
    SimulationSet s;
    s.returns.resize(sims, m);
    Eigen::VectorXd vol(m), load(m);
    for (int i = 0; i < m; ++i) {
        vol(i) = i < bonds ? g.uniform(0.005, 0.03) : g.uniform(0.015, 0.035);
        load(i) = g.uniform(-0.3, 0.9);
    }
    for (int r = 0; r < sims; ++r) {
        const double f = g.normal();
        for (int i = 0; i < m; ++i)
            s.returns(r, i) = vol(i) * (load(i) * f + std::sqrt(1.0 - load(i) * load(i)) * g.normal());
    }
    s.mu.resize(m);
    for (int i = 0; i < m; ++i) s.mu(i) = i < bonds ? g.uniform(0.01, 0.07) : g.uniform(-0.01, 0.01);
    s.asset_ids = default_asset_ids(static_cast<std::size_t>(m));
    return s;
}

std::vector<AssetKind> kinds_of(int bonds, int fx) {
    std::vector<AssetKind> k(static_cast<std::size_t>(bonds), AssetKind::bond);
    k.insert(k.end(), static_cast<std::size_t>(fx), AssetKind::fx);
    return k;
}

void check_solution_invariants(const PortfolioProblem& p, const QpSolution& s) {
    REQUIRE(s.status == QpStatus::solved);
    double budget = 0.0;
    for (Eigen::Index i = 0; i < s.weights.size(); ++i) {
        if (p.is_bond[static_cast<std::size_t>(i)]) budget += s.weights(i);
        REQUIRE(s.weights(i) >= p.qp.l(2 + i) - 1e-9);
        REQUIRE(s.weights(i) <= p.qp.u(2 + i) + 1e-9);
    }
    REQUIRE(std::abs(budget - 1.0) <= 1e-6);
    REQUIRE(p.mu.dot(s.weights) - p.mu(static_cast<Eigen::Index>(p.bench)) - p.target >= -1e-6);
}

}  // namespace

TEST_CASE("build_problem structure") {
    rng::CounterRng g(1);
    const auto set = random_set(g, 200, 5, 2);
    const auto p = build_problem(set, kinds_of(5, 2), 1, 0.002);
    CHECK((p.qp.P - p.qp.P.transpose()).norm() == 0.0);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(p.qp.P);
    CHECK(es.eigenvalues().minCoeff() >= -1e-15);
    // Objective at e_bench is zero and e_bench is feasible at t = 0.
    const auto p0 = build_problem(set, kinds_of(5, 2), 1, 0.0);
    Eigen::VectorXd e = Eigen::VectorXd::Zero(7);
    e(1) = 1.0;
    CHECK(portfolio_objective(p0, e) == doctest::Approx(0.0).epsilon(1e-18));
    const Eigen::VectorXd ae = p0.qp.A * e;
    CHECK(((ae.array() >= p0.qp.l.array() - 1e-15) && (ae.array() <= p0.qp.u.array())).all());
    CHECK_THROWS_AS(build_problem(set, kinds_of(5, 2), 6, 0.0), ValidationError);
    CHECK_THROWS_AS(build_problem(set, kinds_of(5, 2), 1, -0.01), ValidationError);
}

TEST_CASE("benchmark replication at t = 0") {
    rng::CounterRng g(2);
    for (int trial = 0; trial < 10; ++trial) {
        const auto set = random_set(g, 300, 12, 4);
        const std::size_t b = g.below(12);
        const auto p = build_problem(set, kinds_of(12, 4), b, 0.0);
        const auto s = solve_portfolio(p);
        check_solution_invariants(p, s);
        Eigen::VectorXd e = Eigen::VectorXd::Zero(16);
        e(static_cast<Eigen::Index>(b)) = 1.0;
        CHECK((s.weights - e).cwiseAbs().maxCoeff() <= 1e-4);
        CHECK(s.objective <= 1e-8);
    }
}

TEST_CASE("3-asset problems match the grid-search oracle") {
    rng::CounterRng g(3);
    int active = 0;
    for (int trial = 0; trial < 12; ++trial) {
        const auto set = random_set(g, 500, 2, 1);
        const int b = set.mu(0) < set.mu(1) ? 0 : 1;  // the other bond makes the floor reachable
        const double spread = std::abs(set.mu(0) - set.mu(1));
        const double t = g.uniform(0.0, 0.8) * spread;
        const auto p = build_problem(set, kinds_of(2, 1), static_cast<std::size_t>(b), t);
        const auto s = solve_portfolio(p);
        const auto grid = oracle::grid_search_3(set.returns, set.mu, b, t);
        REQUIRE(grid.feasible);
        check_solution_invariants(p, s);
        CHECK(std::abs(s.objective - grid.objective) <= 1e-5);
        CHECK(s.objective <= grid.objective + 1e-12);
        if (p.mu.dot(s.weights) - p.qp.l(0) < 1e-8) ++active;
    }
    CHECK(active > 0);  // the return floor binds in some trials
}

TEST_CASE("infeasible targets are certified") {
    rng::CounterRng g(4);
    for (int trial = 0; trial < 5; ++trial) {
        const auto set = random_set(g, 200, 6, 2);
        const auto kinds = kinds_of(6, 2);
        // Highest-return bond benchmark: nothing beats it by 100 bps with FX capped at 5%.
        Eigen::Index best = 0;
        set.mu.head(6).maxCoeff(&best);
        const double reach = 0.05 * set.mu.tail(2).cwiseAbs().sum();
        const auto p = build_problem(set, kinds, static_cast<std::size_t>(best), reach + 0.01);
        const auto s = solve_portfolio(p);
        CHECK(s.status == QpStatus::infeasible);
        CHECK(s.iterations < QpConfig{}.max_iter);
    }
}

TEST_CASE("random problems satisfy the solution invariants") {
    rng::CounterRng g(5);
    for (int trial = 0; trial < 40; ++trial) {
        const int sims = trial % 4 == 0 ? 10 : 400;  // some with singular Q
        const auto set = random_set(g, sims, 12, 4);
        const auto kinds = kinds_of(12, 4);
        const std::size_t b = g.below(12);
        const double t = g.uniform(0.0, 0.01);
        const auto p = build_problem(set, kinds, b, t);
        const auto s = solve_portfolio(p);
        if (s.status == QpStatus::infeasible) continue;
        check_solution_invariants(p, s);
        if (t == 0.0) {
            Eigen::VectorXd e = Eigen::VectorXd::Zero(16);
            e(static_cast<Eigen::Index>(b)) = 1.0;
            CHECK(s.objective <= portfolio_objective(p, e) + 1e-12);
        }
        // Scaling returns leaves the argmin unchanged.
        SimulationSet scaled = set;
        scaled.returns *= 3.7;
        const auto s2 = solve_portfolio(build_problem(scaled, kinds, b, t));
        if (sims > 16) CHECK((s2.weights - s.weights).cwiseAbs().maxCoeff() <= 1e-5);
        // Deterministic.
        const auto s3 = solve_portfolio(p);
        CHECK(s3.weights == s.weights);
        CHECK(s3.iterations == s.iterations);
    }
}

TEST_CASE("solve_qp on a textbook problem") {
    // min (x0 - 1)^2 + (x1 - 2)^2  s.t. x0 + x1 <= 1  ->  x = (0, 1)
    QpData qp;
    qp.P = 2.0 * Eigen::MatrixXd::Identity(2, 2);
    qp.q = Eigen::Vector2d(-2.0, -4.0);
    qp.A = Eigen::RowVector2d(1.0, 1.0);
    qp.l = Eigen::VectorXd::Constant(1, -kInf);
    qp.u = Eigen::VectorXd::Constant(1, 1.0);
    const auto r = solve_qp(qp);
    CHECK(r.status == QpStatus::solved);
    CHECK(r.x(0) == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(r.x(1) == doctest::Approx(1.0).epsilon(1e-9));
    QpConfig short_run;
    short_run.max_iter = 2;
    short_run.polish = false;
    CHECK(solve_qp(qp, short_run).status == QpStatus::max_iter);
}

TEST_CASE("tev examples") {
    const std::vector<double> a{0.01, 0.02, -0.01, 0.03};
    CHECK(tev(a, a) == 0.0);
    std::vector<double> port, bench;
    const int n = 1000;
    for (int i = 0; i < n; ++i) {
        bench.push_back(0.001 * i);
        port.push_back(0.001 * i + (i % 2 == 0 ? 0.001 : -0.001));
    }
    const double expected = 10.0 * std::sqrt(static_cast<double>(n) / (n - 1)) * std::sqrt(12.0);
    CHECK(tev(port, bench) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(std::abs(tev(port, bench) - 34.64) < 0.05);
    std::vector<double> shifted;
    for (double v : bench) shifted.push_back(v + 0.002);
    CHECK(tev(shifted, bench) == doctest::Approx(0.0).scale(1.0));
    CHECK_THROWS_AS(tev(std::vector<double>{1.0}, std::vector<double>{1.0}), ValidationError);
}
