#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "fixsynth/corrgan.hpp"
#include "unit/helpers.hpp"

using namespace fixsynth;

namespace {

GanConfig small_config(GanVariant v, std::size_t n = 8) {
    GanConfig c = GanConfig::defaults(v);
    c.n = n;
    c.latent_dim = 8;
    c.generator_channels = {8};
    c.critic_channels = {8};
    c.batch = 16;
    c.steps = 20;
    c.seed = 11;
    return c;
}

std::vector<CorrelationMatrix> repeated(const Eigen::MatrixXd& m, std::size_t count) {
    return std::vector<CorrelationMatrix>(count, CorrelationMatrix(m));
}

}  // namespace

TEST_CASE("generator output shape and range") {
    GanConfig c;
    c.generator_channels = {8, 8};
    CHECK(c.seed_size() == 4);
    for (auto v : {GanVariant::wgan, GanVariant::dcgan}) {
        c.variant = v;
        auto g = build_generator(c);
        rng::CounterRng r(3);
        std::vector<double> zd(4 * c.latent_dim);
        for (auto& x : zd) x = 5.0 * r.normal();
        const Tensor z({4, c.latent_dim}, zd);
        const Tensor out = infer(g, z).back();
        REQUIRE(out.shape() == Shape{4, 1, 16, 16});
        for (double x : out.data()) CHECK((x > -1.0 && x < 1.0));
        const Tensor again = infer(build_generator(c), z).back();
        CHECK(std::equal(out.data().begin(), out.data().end(), again.data().begin()));
    }
}

TEST_CASE("config validation") {
    GanConfig c;
    c.critic_steps = 0;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = GanConfig{};
    c.n = 15;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = GanConfig{};
    c.clip = 0.0;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c.lipschitz = Lipschitz::none;
    CHECK_NOTHROW(c.validate());
    CHECK_THROWS_AS(GanConfig::from_json(nlohmann::json{{"bogus", 1}}), ValidationError);
    const auto d = GanConfig::from_json(nlohmann::json{{"variant", "dcgan"}, {"steps", 7}});
    CHECK(d.variant == GanVariant::dcgan);
    CHECK(d.steps == 7);
    CHECK(d.lr_generator == GanConfig::defaults(GanVariant::dcgan).lr_generator);
    const auto rt = GanConfig::from_json(d.to_json());
    CHECK(rt.to_json() == d.to_json());

    rng::CounterRng g(1);
    auto cfg = small_config(GanVariant::wgan);
    cfg.critic_steps = 0;
    const auto corpus = repeated(testing::random_correlation(g, 8), 32);
    CHECK_THROWS_AS(train_gan(corpus, cfg), ValidationError);
    cfg = small_config(GanVariant::wgan);
    CHECK_THROWS_AS(train_gan(std::span(corpus).first(8), cfg), ValidationError);
}

TEST_CASE("untrained raw diagonal is near zero") {
    for (auto v : {GanVariant::wgan, GanVariant::dcgan}) {
        GanConfig c = GanConfig::defaults(v);
        c.steps = 0;
        TrainedGan gan{c, build_generator(c), build_critic(c), {}};
        CHECK(std::abs(raw_diagonal_mean(gan, 256, 5)) <= 0.05);
        const auto one = generate_raw(gan, 1, 9);
        CHECK(raw_diagonal_mean(gan, 1, 9) == doctest::Approx(one[0].diagonal().mean()).epsilon(1e-15));
        CHECK((one[0] - one[0].transpose()).norm() == 0.0);
    }
}

TEST_CASE("training is reproducible and clips the critic") {
    rng::CounterRng g(2);
    std::vector<CorrelationMatrix> corpus;
    for (int i = 0; i < 40; ++i) corpus.emplace_back(testing::random_correlation(g, 8));
    for (auto v : {GanVariant::wgan, GanVariant::dcgan}) {
        const auto cfg = small_config(v);
        const auto a = train_gan(corpus, cfg);
        const auto b = train_gan(corpus, cfg);
        REQUIRE(a.history.steps.size() == cfg.steps);
        for (std::size_t s = 0; s < cfg.steps; ++s) {
            CHECK(a.history.steps[s].critic_loss == b.history.steps[s].critic_loss);
            CHECK(a.history.steps[s].generator_loss == b.history.steps[s].generator_loss);
        }
        CHECK(flatten_parameters(a.generator.parameters()) == flatten_parameters(b.generator.parameters()));
        CHECK(flatten_parameters(a.critic.parameters()) == flatten_parameters(b.critic.parameters()));
        if (v == GanVariant::wgan) {
            for (double p : flatten_parameters(a.critic.parameters())) CHECK(std::abs(p) <= cfg.clip);
        } else {
            for (double s : critic_scores(a, corpus)) CHECK((s > 0.0 && s < 1.0));
        }
    }
}

TEST_CASE("sampling contract") {
    rng::CounterRng g(3);
    std::vector<CorrelationMatrix> corpus;
    for (int i = 0; i < 40; ++i) corpus.emplace_back(testing::random_correlation(g, 8));
    const auto gan = train_gan(corpus, small_config(GanVariant::wgan));
    CHECK(sample_gan(gan, 0, 1).matrices.empty());
    const auto s = sample_gan(gan, 100, 4);
    REQUIRE(s.matrices.size() + s.failed == 100);
    CHECK(s.failed == 0);
    for (const auto& m : s.matrices) CHECK_FALSE(CorrelationMatrix::violation(m.values()).has_value());
    const auto s2 = sample_gan(gan, 100, 4, {}, 3);
    for (std::size_t i = 0; i < s.matrices.size(); ++i) CHECK(s.matrices[i].values() == s2.matrices[i].values());
    // A prefix of a larger draw is the smaller draw.
    const auto s3 = sample_gan(gan, 10, 4);
    CHECK(s3.matrices[7].values() == s.matrices[7].values());
    const auto ids = default_asset_ids(8);
    CHECK(sample_gan(gan, 1, 4, ids).matrices[0].asset_ids() == ids);
}

TEST_CASE("save and load round trip") {
    rng::CounterRng g(4);
    std::vector<CorrelationMatrix> corpus;
    for (int i = 0; i < 20; ++i) corpus.emplace_back(testing::random_correlation(g, 8));
    const auto gan = train_gan(corpus, small_config(GanVariant::dcgan));
    const auto path = testing::temp_path("gan.bin");
    save_gan(gan, path);
    const auto back = load_gan(path);
    CHECK(back.config.to_json() == gan.config.to_json());
    CHECK(flatten_parameters(back.generator.parameters()) == flatten_parameters(gan.generator.parameters()));
    CHECK(flatten_parameters(back.critic.parameters()) == flatten_parameters(gan.critic.parameters()));
    REQUIRE(back.history.steps.size() == gan.history.steps.size());
    CHECK(back.history.steps.back().critic_loss == gan.history.steps.back().critic_loss);
    CHECK(generate_raw(back, 3, 8)[2] == generate_raw(gan, 3, 8)[2]);
}

TEST_CASE("memorizes a repeated matrix") {
    rng::CounterRng g(5);
    const Eigen::MatrixXd m = testing::random_correlation(g, 8, 1);
    const auto corpus = repeated(m, 64);
    auto cfg = small_config(GanVariant::wgan);
    cfg.steps = 2000;
    cfg.lr_generator = cfg.lr_critic = 1e-3;
    cfg.clip = 0.03;
    const auto gan = train_gan(corpus, cfg);
    const auto s = sample_gan(gan, 200, 6);
    Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(8, 8);
    for (const auto& c : s.matrices) mean += c.values();
    mean /= static_cast<double>(s.matrices.size());
    MESSAGE("memorization distance ", (mean - m).norm());
    CHECK((mean - m).norm() <= 0.15 * 8);
}
