#include <cmath>

#include "doctest.h"
#include "fixsynth/attr_autoencoder.hpp"
#include "unit/helpers.hpp"

using namespace fixsynth;

namespace {

MarketSnapshot random_snapshot(rng::CounterRng& g, std::size_t n, int day) {
    Eigen::VectorXd vol(static_cast<Eigen::Index>(n)), er(static_cast<Eigen::Index>(n)), fr(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < vol.size(); ++i) {
        vol(i) = g.uniform(0.02, 0.12);
        er(i) = g.uniform(0.01, 0.07);
        fr(i) = g.normal() * 0.01;
    }
    return {parse_date("2020-01-03") + std::chrono::days(7 * day), CorrelationMatrix(testing::random_correlation(g, n)),
            vol, er, fr};
}

AeConfig small_config() {
    AeConfig c;
    c.n = 8;
    c.encoder_channels = {4, 8};
    c.latent_dim = 16;
    c.head.seed_channels = 4;
    c.head.channels = {4};
    c.batch = 8;
    c.steps = 30;
    c.seed = 3;
    return c;
}

}  // namespace

TEST_CASE("encoder-decoder shapes and output contract") {
    AeConfig cfg;
    const AttrModel m = build_attr_model(cfg);
    rng::CounterRng g(1);
    for (int k = 0; k < 5; ++k) {
        const CorrelationMatrix c(testing::random_correlation(g, 16));
        const auto out = generate(m, c);
        CHECK(out.volatility.size() == 16);
        CHECK(out.expected_return.size() == 16);
        CHECK(out.forward_return.size() == 16);
        CHECK(out.volatility.minCoeff() > 0.0);
        CHECK(out.asset_ids == c.asset_ids());
        const auto again = generate(m, c);
        CHECK(again.volatility == out.volatility);
        CHECK(again.expected_return == out.expected_return);
        CHECK(again.forward_return == out.forward_return);
    }
    CHECK_THROWS_AS(generate(m, CorrelationMatrix(testing::random_correlation(g, 8))), ValidationError);

    cfg.n = 15;
    CHECK_THROWS_AS(build_attr_model(cfg), ValidationError);
    cfg.n = 16;
    cfg.head.channels = {4, 4, 4, 4, 4};
    CHECK_THROWS_AS(build_attr_model(cfg), ValidationError);
}

TEST_CASE("encoder-decoder config json") {
    AeConfig c = small_config();
    c.dropout = 0.25;
    const auto back = AeConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
    CHECK_THROWS_AS(AeConfig::from_json(nlohmann::json{{"head", {{"width", 3}}}}), ValidationError);
    CHECK_THROWS_AS(AeConfig::from_json(nlohmann::json{{"dropout", 1.5}}), ValidationError);
}

TEST_CASE("validation split holds out the trailing dates") {
    CHECK(validation_split(100, 0.1) == 90);
    CHECK(validation_split(9, 0.1) == 9);
    CHECK(validation_split(1, 0.1) == 1);
    rng::CounterRng g(2);
    std::vector<MarketSnapshot> snaps;
    for (int d = 29; d >= 0; --d) snaps.push_back(random_snapshot(g, 8, d));  // reverse date order
    const auto m = train_attr_model(snaps, small_config());
    CHECK(m.history.train_count == 27);
    CHECK(m.history.validation_count == 3);
    REQUIRE(m.history.validation.has_value());
    // Statistics come from the 27 earliest dates only.
    double s = 0.0;
    for (int i = 3; i < 30; ++i) s += snaps[static_cast<std::size_t>(i)].expected_return.sum();
    CHECK(m.stats.expected_return.mean == doctest::Approx(s / (27.0 * 8.0)).epsilon(1e-12));
}

TEST_CASE("training is reproducible") {
    rng::CounterRng g(3);
    std::vector<MarketSnapshot> snaps;
    for (int d = 0; d < 20; ++d) snaps.push_back(random_snapshot(g, 8, d));
    const auto cfg = small_config();
    const auto a = train_attr_model(snaps, cfg);
    const auto b = train_attr_model(snaps, cfg);
    REQUIRE(a.history.steps.size() == cfg.steps);
    for (std::size_t s = 0; s < cfg.steps; ++s) CHECK(a.history.steps[s].total() == b.history.steps[s].total());
    CHECK(flatten_parameters(a.encoder.parameters()) == flatten_parameters(b.encoder.parameters()));
    CHECK(flatten_parameters(a.forward_return_head.parameters()) ==
          flatten_parameters(b.forward_return_head.parameters()));
    auto other = cfg;
    other.seed = 4;
    CHECK(train_attr_model(snaps, other).history.steps.back().total() != a.history.steps.back().total());
    auto big = cfg;
    big.batch = 19;
    CHECK_THROWS_AS(train_attr_model(snaps, big), ValidationError);
}

TEST_CASE("memorizes a single snapshot") {
    rng::CounterRng g(4);
    const std::vector<MarketSnapshot> one{random_snapshot(g, 8, 0)};
    AeConfig cfg = small_config();
    cfg.batch = 1;
    cfg.dropout = 0.0;
    cfg.lr = 1e-3;
    cfg.steps = 2000;
    const auto m = train_attr_model(one, cfg);
    REQUIRE(m.history.steps.size() == 2000);
    MESSAGE("final standardized loss ", m.history.steps.back().total());
    CHECK(m.history.steps.back().total() <= 1e-3);
    // 500-step moving average never rises.
    const auto& h = m.history.steps;
    double window = 0.0;
    for (std::size_t i = 0; i < 500; ++i) window += h[i].total();
    double prev = window;
    for (std::size_t i = 500; i < h.size(); ++i) {
        window += h[i].total() - h[i - 500].total();
        CHECK(window <= prev + 1e-12 * std::abs(prev));
        prev = window;
    }
    const auto out = generate(m, one[0].corr);
    CHECK((out.volatility - one[0].volatility).cwiseAbs().maxCoeff() < 0.01);
}

TEST_CASE("encoder-decoder save and load") {
    rng::CounterRng g(5);
    std::vector<MarketSnapshot> snaps;
    for (int d = 0; d < 20; ++d) snaps.push_back(random_snapshot(g, 8, d));
    const auto m = train_attr_model(snaps, small_config());
    const auto path = testing::temp_path("ae.bin");
    save_attr_model(m, path);
    const auto back = load_attr_model(path);
    CHECK(back.config.to_json() == m.config.to_json());
    CHECK(back.stats.forward_return.stdev == m.stats.forward_return.stdev);
    CHECK(back.history.steps.size() == m.history.steps.size());
    CHECK(back.asset_ids == m.asset_ids);
    const auto a = generate(m, snaps[3].corr), b = generate(back, snaps[3].corr);
    CHECK(a.volatility == b.volatility);
    CHECK(a.forward_return == b.forward_return);
    const auto batch = generate(m, std::vector<CorrelationMatrix>{snaps[1].corr, snaps[3].corr}, 2);
    CHECK(batch[1].expected_return == a.expected_return);
}
