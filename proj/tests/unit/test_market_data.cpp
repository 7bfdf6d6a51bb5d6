#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "fixsynth/market_data.hpp"
#include "fixsynth/rng.hpp"
#include "unit/helpers.hpp"

using namespace fixsynth;
using testing::random_correlation;
using testing::temp_path;

namespace {

ReturnPanel small_panel(std::size_t weeks, std::uint64_t seed = 3) {
    SynthCorpusConfig cfg;
    cfg.n_assets = 3;
    cfg.n_fx = 1;
    cfg.blocks = 1;
    cfg.weeks = weeks;
    return synth_corpus(cfg, seed);
}

void write_text(const std::filesystem::path& p, const std::string& s) { std::ofstream(p) << s; }

}  // namespace

TEST_CASE("ingest round-trips a well-formed panel") {
    const ReturnPanel p = small_panel(120);
    const auto path = temp_path("roundtrip.csv");
    write_returns_csv(p, path);
    const ReturnPanel q = ingest_returns(path);
    CHECK(q.n_assets() == 3);
    CHECK(q.n_dates() == 120);
    CHECK(q.asset_ids == p.asset_ids);
    CHECK(q.kinds == p.kinds);
    CHECK(q.dates == p.dates);
    CHECK(q.weekly_returns == p.weekly_returns);
    CHECK(q.expected_returns == p.expected_returns);
}

TEST_CASE("ingest orders the bond segment first") {
    const auto path = temp_path("order.csv");
    write_text(path,
               "date,asset_id,kind,weekly_return,expected_return\n"
               "2020-01-03,EUR,fx,0.01,0.0\n2020-01-03,B1,bond,0.02,0.03\n"
               "2020-01-10,EUR,fx,0.01,0.0\n2020-01-10,B1,bond,0.02,0.03\n");
    const ReturnPanel p = ingest_returns(path);
    REQUIRE(p.asset_ids.size() == 2);
    CHECK(p.asset_ids[0] == "B1");
    CHECK(p.kinds[1] == AssetKind::fx);
    CHECK(p.bond_count() == 1);
}

TEST_CASE("ingest rejects malformed input") {
    const std::string header = "date,asset_id,kind,weekly_return,expected_return\n";
    const auto path = temp_path("bad.csv");

    SUBCASE("gap week names the missing date") {
        write_text(path, header + "2020-01-03,B1,bond,0.01,0.02\n2020-01-17,B1,bond,0.01,0.02\n");
        CHECK_THROWS_WITH_AS(ingest_returns(path), doctest::Contains("2020-01-10"), ValidationError);
    }
    SUBCASE("duplicate asset id") {
        write_text(path, header + "2020-01-03,B1,bond,0.01,0.02\n2020-01-03,B1,bond,0.01,0.02\n");
        CHECK_THROWS_WITH_AS(ingest_returns(path), doctest::Contains("duplicate"), ValidationError);
    }
    SUBCASE("non-numeric cell names row and column") {
        write_text(path, header + "2020-01-03,B1,bond,abc,0.02\n");
        CHECK_THROWS_WITH_AS(ingest_returns(path), doctest::Contains("row 2, column weekly_return"), ValidationError);
    }
    SUBCASE("missing asset on a date") {
        write_text(path, header + "2020-01-03,B1,bond,0.01,0.02\n2020-01-03,B2,bond,0.01,0.02\n"
                                  "2020-01-10,B1,bond,0.01,0.02\n");
        CHECK_THROWS_WITH_AS(ingest_returns(path), doctest::Contains("missing asset B2 on 2020-01-10"), ValidationError);
    }
    SUBCASE("decreasing dates") {
        write_text(path, header + "2020-01-10,B1,bond,0.01,0.02\n2020-01-03,B1,bond,0.01,0.02\n");
        CHECK_THROWS_AS(ingest_returns(path), ValidationError);
    }
}

TEST_CASE("snapshot examples") {
    ReturnPanel p;
    p.asset_ids = {"B0", "B1", "FX0"};
    p.kinds = {AssetKind::bond, AssetKind::bond, AssetKind::fx};
    const std::size_t T = 56;
    p.weekly_returns.resize(T, 3);
    p.expected_returns = Eigen::MatrixXd::Constant(T, 3, 0.03);
    for (std::size_t t = 0; t < T; ++t) {
        p.dates.push_back(parse_date("2020-01-03") + std::chrono::days{7 * static_cast<long>(t)});
        const double x = (t % 2 == 0) ? 0.01 : -0.01;
        p.weekly_returns(static_cast<Eigen::Index>(t), 0) = x;
        p.weekly_returns(static_cast<Eigen::Index>(t), 1) = x;
        p.weekly_returns(static_cast<Eigen::Index>(t), 2) = t >= 52 ? 0.01 : ((t % 3 == 0) ? 0.02 : -0.01);
    }
    const auto snaps = build_snapshots(p);
    REQUIRE(snaps.size() == 1);
    const auto& s = snaps[0];
    CHECK(s.corr(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
    // Alternating +-1% over 52 weeks: sample stdev = 0.01 * sqrt(52/51).
    const double sd = 0.01 * std::sqrt(52.0 / 51.0);
    CHECK(s.volatility(0) == doctest::Approx(sd * std::sqrt(52.0)).epsilon(1e-12));
    CHECK(s.forward_return(2) == doctest::Approx(std::pow(1.01, 4) - 1.0).epsilon(1e-12));
    CHECK(std::abs(s.forward_return(2) - 0.04060401) < 1e-8);
    CHECK(s.asset_ids() == p.asset_ids);
    CHECK(s.date == p.dates[51]);
}

TEST_CASE("stdev 1% annualizes to about 7.21%") {
    ReturnPanel p;
    p.asset_ids = {"B0", "B1"};
    p.kinds = {AssetKind::bond, AssetKind::bond};
    rng::CounterRng g(77);
    const std::size_t T = 60;
    p.weekly_returns.resize(T, 2);
    p.expected_returns = Eigen::MatrixXd::Zero(T, 2);
    for (std::size_t t = 0; t < T; ++t) {
        p.dates.push_back(parse_date("2021-01-01") + std::chrono::days{7 * static_cast<long>(t)});
        p.weekly_returns(static_cast<Eigen::Index>(t), 0) = g.normal();
        p.weekly_returns(static_cast<Eigen::Index>(t), 1) = g.normal();
    }
    // Rescale the first window to an exact 1% sample stdev.
    auto w = p.weekly_returns.topRows(52);
    const Eigen::RowVectorXd mean = w.colwise().mean();
    const Eigen::RowVectorXd sd =
        ((w.rowwise() - mean).array().square().colwise().sum() / 51.0).sqrt();
    for (Eigen::Index j = 0; j < 2; ++j) w.col(j) = (w.col(j).array() - mean(j)) / sd(j) * 0.01;
    const auto snaps = build_snapshots(p);
    CHECK(snaps[0].volatility(0) == doctest::Approx(0.01 * std::sqrt(52.0)).epsilon(1e-12));
    CHECK(std::abs(snaps[0].volatility(0) - 0.0721) < 1e-4);
}

TEST_CASE("constant series is rejected by name") {
    ReturnPanel p = small_panel(60);
    p.weekly_returns.col(1).setConstant(0.001);
    CHECK_THROWS_WITH_AS(build_snapshots(p), doctest::Contains(p.asset_ids[1].c_str()), ValidationError);
}

TEST_CASE("snapshot corpus invariants") {
    const ReturnPanel p = synth_corpus(SynthCorpusConfig{}, 11);
    for (std::size_t workers : {1u, 3u}) {
        const auto snaps = build_snapshots(p, {52, 4, workers});
        CHECK(snaps.size() == p.n_dates() - 52 - 4 + 1);
        for (const auto& s : snaps) {
            REQUIRE_FALSE(CorrelationMatrix::violation(s.corr.values()));
            REQUIRE(s.asset_ids() == p.asset_ids);
            REQUIRE(s.volatility.minCoeff() >= 0.0);
        }
    }
    const auto a = build_snapshots(p, {52, 4, 1}), b = build_snapshots(p, {52, 4, 4});
    for (std::size_t i = 0; i < a.size(); i += 97) CHECK(a[i].corr.values() == b[i].corr.values());
}

TEST_CASE("snapshots round-trip through JSON lines") {
    const ReturnPanel p = small_panel(70);
    const auto snaps = build_snapshots(p);
    const auto path = temp_path("snaps.jsonl");
    write_snapshots_jsonl(path, snaps);
    const auto back = read_snapshots_jsonl(path);
    REQUIRE(back.size() == snaps.size());
    for (std::size_t i = 0; i < snaps.size(); ++i) {
        CHECK(back[i].date == snaps[i].date);
        CHECK(back[i].corr.values() == snaps[i].corr.values());
        CHECK(back[i].volatility == snaps[i].volatility);
        CHECK(back[i].forward_return == snaps[i].forward_return);
    }
    const auto mats = read_matrices_jsonl(path);
    CHECK(mats.size() == snaps.size());
}

TEST_CASE("correlation matrix invariants are enforced") {
    Eigen::MatrixXd m = Eigen::MatrixXd::Identity(3, 3);
    CHECK_NOTHROW(CorrelationMatrix{m});
    m(0, 1) = 0.5;
    CHECK_THROWS_WITH_AS(CorrelationMatrix{m}, doctest::Contains("asymmetric"), ValidationError);
    m(1, 0) = 0.5;
    m(2, 2) = 0.999;
    CHECK_THROWS_WITH_AS(CorrelationMatrix{m}, doctest::Contains("diagonal"), ValidationError);
    Eigen::MatrixXd bad(3, 3);
    bad << 1, 0.9, -0.9, 0.9, 1, 0.9, -0.9, 0.9, 1;
    CHECK_THROWS_WITH_AS(CorrelationMatrix{bad}, doctest::Contains("eigenvalue"), ValidationError);
}

TEST_CASE("nearest_correlation examples") {
    SUBCASE("valid input unchanged") {
        rng::CounterRng g(5);
        for (int k = 0; k < 20; ++k) {
            const Eigen::MatrixXd c = random_correlation(g, 6);
            const auto r = nearest_correlation(c);
            CHECK((r.matrix.values() - c).norm() <= 1e-10);
        }
    }
    SUBCASE("2x2 clamp") {
        Eigen::MatrixXd m(2, 2);
        m << 1, 1.2, 1.2, 1;
        const auto r = nearest_correlation(m);
        CHECK(r.matrix(0, 1) == doctest::Approx(1.0).epsilon(1e-6));
        CHECK(r.matrix(0, 1) <= 1.0);
    }
    SUBCASE("residual history is non-increasing") {
        rng::CounterRng g(9);
        for (int k = 0; k < 50; ++k) {
            Eigen::MatrixXd m = random_correlation(g, 8);
            for (int i = 0; i < 8; ++i)
                for (int j = i + 1; j < 8; ++j) m(i, j) = m(j, i) = std::clamp(m(i, j) + g.uniform(-0.4, 0.4), -1.0, 1.0);
            const auto r = nearest_correlation(m);
            for (std::size_t i = 1; i < r.residuals.size(); ++i)
                REQUIRE(r.residuals[i] <= r.residuals[i - 1] * (1.0 + 1e-9) + 1e-14);
        }
    }
    SUBCASE("non-convergence carries the last iterate") {
        Eigen::MatrixXd m(3, 3);
        m << 1, 0.9, -0.9, 0.9, 1, 0.9, -0.9, 0.9, 1;
        try {
            nearest_correlation(m, 1e-8, 1);
            FAIL("expected NearestCorrelationError");
        } catch (const NearestCorrelationError& e) {
            CHECK(e.last_iterate.rows() == 3);
            CHECK(e.residual > 0.0);
        }
    }
}

TEST_CASE("nearest_correlation beats random valid matrices") {
    // Random-sampling optimality oracle: the projection must be at least as close
    // to the input as any of 1000 random valid correlation matrices.
    rng::CounterRng g(2024);
    for (int trial = 0; trial < 5; ++trial) {
        Eigen::MatrixXd a(5, 5);
        for (int i = 0; i < 5; ++i) {
            a(i, i) = 1.0 + g.uniform(-0.1, 0.1);
            for (int j = i + 1; j < 5; ++j) a(i, j) = a(j, i) = g.uniform(-1.2, 1.2);
        }
        const auto r = nearest_correlation(a);
        CHECK_FALSE(CorrelationMatrix::violation(r.matrix.values()));
        const double d = (r.matrix.values() - a).norm();
        double best = std::numeric_limits<double>::infinity();
        for (int k = 0; k < 1000; ++k) best = std::min(best, (random_correlation(g, 5) - a).norm());
        CHECK(d <= best);
    }
}

TEST_CASE("synth corpus block structure") {
    SynthCorpusConfig cfg;
    cfg.n_assets = 4;
    cfg.n_fx = 0;
    cfg.blocks = 1;
    cfg.weeks = 500;
    cfg.intra_corr_lo = cfg.intra_corr_hi = 0.9;
    cfg.loading_lo = cfg.loading_hi = 0.0;
    cfg.regimes = {RegimeShift{0, 1.0, 1.0}};
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const ReturnPanel p = synth_corpus(cfg, seed);
        const auto snaps = build_snapshots(p, {496, 4, 1});
        REQUIRE(snaps.size() == 1);
        // Sampling error of a correlation near 0.9 at N ~ 500 is about (1 - 0.81)/sqrt(500) ~ 0.0085.
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = i + 1; j < 4; ++j) CHECK(std::abs(snaps[0].corr(i, j) - 0.9) <= 0.05);
    }
}

TEST_CASE("synth corpus null model") {
    SynthCorpusConfig cfg;
    cfg.n_assets = 8;
    cfg.n_fx = 2;
    cfg.blocks = 2;
    cfg.weeks = 500;
    cfg.intra_corr_lo = cfg.intra_corr_hi = 0.0;
    cfg.loading_lo = cfg.loading_hi = 0.0;
    const ReturnPanel p = synth_corpus(cfg, 8);
    const auto snaps = build_snapshots(p, {496, 4, 1});
    double sum = 0.0;
    int count = 0;
    for (std::size_t i = 0; i < 8; ++i)
        for (std::size_t j = i + 1; j < 8; ++j, ++count) sum += std::abs(snaps[0].corr(i, j));
    // Under independence E|rho| ~ sqrt(2 / (pi N)) ~ 0.036 at N = 496.
    CHECK(sum / count <= 0.1);
}

TEST_CASE("synth corpus determinism and validation") {
    SynthCorpusConfig cfg;
    const ReturnPanel a = synth_corpus(cfg, 42), b = synth_corpus(cfg, 42), c = synth_corpus(cfg, 43);
    CHECK(a.weekly_returns == b.weekly_returns);
    CHECK(a.expected_returns == b.expected_returns);
    CHECK(a.weekly_returns != c.weekly_returns);
    CHECK(a.bond_count() == 12);
    cfg.blocks = 17;
    CHECK_THROWS_AS(synth_corpus(cfg, 1), ValidationError);
}

TEST_CASE("date helpers") {
    CHECK(format_date(parse_date("2007-04-06")) == "2007-04-06");
    CHECK_THROWS_AS(parse_date("2007-02-30"), ValidationError);
    CHECK_THROWS_AS(parse_date("07-04-06"), ValidationError);
}
