#include "fixsynth/corrgan.hpp"

#include <cmath>
#include <optional>

#include "fixsynth/binary_io.hpp"
#include "fixsynth/json_fields.hpp"
#include "fixsynth/parallel.hpp"
#include "fixsynth/rng.hpp"

namespace fixsynth {

std::string to_string(GanVariant v) { return v == GanVariant::dcgan ? "dcgan" : "wgan"; }
std::string to_string(Lipschitz l) { return l == Lipschitz::weight_clip ? "weight_clip" : "none"; }

namespace {

GanVariant parse_variant(const std::string& s, const std::string& path) {
    if (s == "dcgan") return GanVariant::dcgan;
    if (s == "wgan") return GanVariant::wgan;
    throw ValidationError("config field '" + path + "': expected 'dcgan' or 'wgan', got '" + s + "'");
}

Lipschitz parse_lipschitz(const std::string& s, const std::string& path) {
    if (s == "weight_clip") return Lipschitz::weight_clip;
    if (s == "none") return Lipschitz::none;
    throw ValidationError("config field '" + path + "': expected 'weight_clip' or 'none', got '" + s + "'");
}

}  // namespace

GanConfig GanConfig::defaults(GanVariant variant) {
    GanConfig c;
    c.variant = variant;
    if (variant == GanVariant::dcgan) {
        c.lipschitz = Lipschitz::none;
        c.lr_generator = c.lr_critic = 2e-4;
        c.beta1 = 0.5;
        c.beta2 = 0.999;
        c.critic_steps = 1;
    }
    return c;
}

std::size_t GanConfig::seed_size() const {
    std::size_t s = n;
    for (std::size_t b = 0; b < generator_channels.size(); ++b) {
        if (upsample_factor < 2 || s % upsample_factor != 0)
            throw ValidationError("generator blocks do not divide n = " + std::to_string(n) + " by upsample factor " +
                                  std::to_string(upsample_factor));
        s /= upsample_factor;
    }
    if (s == 0) throw ValidationError("generator seed map would be empty");
    return s;
}

void GanConfig::validate() const {
    using json_fields::require;
    require(n >= 2, "gan.n", "must be >= 2");
    require(latent_dim >= 1, "gan.latent_dim", "must be >= 1");
    require(!generator_channels.empty(), "gan.generator_channels", "needs at least one block");
    for (auto c : generator_channels) require(c >= 1, "gan.generator_channels", "channel counts must be >= 1");
    require(!critic_channels.empty(), "gan.critic_channels", "needs at least one block");
    for (auto c : critic_channels) require(c >= 1, "gan.critic_channels", "channel counts must be >= 1");
    std::size_t s = n;
    for (std::size_t b = 0; b < critic_channels.size(); ++b) {
        require(s % 2 == 0, "gan.critic_channels", "each stride-2 critic block needs an even input size");
        s /= 2;
    }
    require(variant != GanVariant::dcgan || upsample_factor == 2, "gan.upsample_factor",
            "transposed-conv blocks double the size; factor must be 2 for dcgan");
    require(lipschitz != Lipschitz::weight_clip || clip > 0.0, "gan.clip", "must be > 0 with weight clipping");
    require(critic_steps >= 1, "gan.critic_steps", "must be >= 1");
    require(batch >= 2, "gan.batch", "must be >= 2");
    require(lr_generator > 0.0 && lr_critic > 0.0, "gan.lr_*", "learning rates must be > 0");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0, "gan.beta*", "betas must lie in [0, 1)");
    require(leaky_slope >= 0.0 && leaky_slope < 1.0, "gan.leaky_slope", "must lie in [0, 1)");
    (void)seed_size();
}

nlohmann::json GanConfig::to_json() const {
    return {{"n", n},
            {"latent_dim", latent_dim},
            {"generator_channels", generator_channels},
            {"upsample_factor", upsample_factor},
            {"critic_channels", critic_channels},
            {"leaky_slope", leaky_slope},
            {"variant", to_string(variant)},
            {"lipschitz", to_string(lipschitz)},
            {"clip", clip},
            {"critic_steps", critic_steps},
            {"batch", batch},
            {"lr_generator", lr_generator},
            {"lr_critic", lr_critic},
            {"beta1", beta1},
            {"beta2", beta2},
            {"steps", steps},
            {"seed", seed},
            {"collapse_threshold", collapse_threshold},
            {"collapse_window", collapse_window}};
}

GanConfig GanConfig::from_json(const nlohmann::json& j, const std::string& path) {
    using namespace json_fields;
    reject_unknown(j, path,
                   {"n", "latent_dim", "generator_channels", "upsample_factor", "critic_channels", "leaky_slope",
                    "variant", "lipschitz", "clip", "critic_steps", "batch", "lr_generator", "lr_critic", "beta1",
                    "beta2", "steps", "seed", "collapse_threshold", "collapse_window"});
    std::string variant = "wgan";
    read(j, path, "variant", variant);
    GanConfig c = defaults(parse_variant(variant, join(path, "variant")));
    std::string lip = to_string(c.lipschitz);
    read(j, path, "lipschitz", lip);
    c.lipschitz = parse_lipschitz(lip, join(path, "lipschitz"));
    read(j, path, "n", c.n);
    read(j, path, "latent_dim", c.latent_dim);
    read(j, path, "generator_channels", c.generator_channels);
    read(j, path, "upsample_factor", c.upsample_factor);
    read(j, path, "critic_channels", c.critic_channels);
    read(j, path, "leaky_slope", c.leaky_slope);
    read(j, path, "clip", c.clip);
    read(j, path, "critic_steps", c.critic_steps);
    read(j, path, "batch", c.batch);
    read(j, path, "lr_generator", c.lr_generator);
    read(j, path, "lr_critic", c.lr_critic);
    read(j, path, "beta1", c.beta1);
    read(j, path, "beta2", c.beta2);
    read(j, path, "steps", c.steps);
    read(j, path, "seed", c.seed);
    read(j, path, "collapse_threshold", c.collapse_threshold);
    read(j, path, "collapse_window", c.collapse_window);
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Networks

Sequential build_generator(const GanConfig& cfg) {
    cfg.validate();
    const std::size_t s = cfg.seed_size();
    const std::size_t c0 = cfg.generator_channels.front();
    std::vector<LayerSpec> layers{LayerSpec::linear(cfg.latent_dim, c0 * s * s), LayerSpec::reshape({c0, s, s}),
                                  LayerSpec::leaky_relu(cfg.leaky_slope)};
    std::size_t in = c0;
    for (std::size_t c : cfg.generator_channels) {
        if (cfg.variant == GanVariant::wgan) {
            layers.push_back(LayerSpec::upsample2d(cfg.upsample_factor));
            layers.push_back(LayerSpec::conv2d(in, c, 3, 1, 1));
        } else {
            layers.push_back(LayerSpec::transposed_conv2d(in, c, 4, 2, 1));
        }
        layers.push_back(LayerSpec::leaky_relu(cfg.leaky_slope));
        in = c;
    }
    layers.push_back(LayerSpec::conv2d(in, 1, 3, 1, 1));
    layers.push_back(LayerSpec::tanh());
    Sequential g(std::move(layers), rng::derive_seed(cfg.seed, "gan.generator"), "generator");
    const Shape out = g.output_shape({cfg.latent_dim});
    if (out != Shape{1, cfg.n, cfg.n})
        throw ValidationError("generator produces " + shape_to_string(out) + ", expected [1, n, n] with n = " +
                              std::to_string(cfg.n));
    return g;
}

Sequential build_critic(const GanConfig& cfg) {
    cfg.validate();
    std::vector<LayerSpec> layers;
    std::size_t in = 1, s = cfg.n;
    for (std::size_t c : cfg.critic_channels) {
        layers.push_back(LayerSpec::conv2d(in, c, 4, 2, 1));
        layers.push_back(LayerSpec::leaky_relu(cfg.leaky_slope));
        in = c;
        s /= 2;
    }
    layers.push_back(LayerSpec::reshape({in * s * s}));
    layers.push_back(LayerSpec::linear(in * s * s, 1));  // unbounded score (logit for DCGAN)
    return Sequential(std::move(layers), rng::derive_seed(cfg.seed, "gan.critic"), "critic");
}

// ---------------------------------------------------------------------------
// Training

namespace {

Tensor latent_batch(std::size_t batch, std::size_t dim, std::uint64_t key) {
    std::vector<double> z(batch * dim);
    for (std::size_t b = 0; b < batch; ++b) {
        rng::CounterRng g(rng::mix(key, b));
        for (std::size_t k = 0; k < dim; ++k) z[b * dim + k] = g.normal();
    }
    return Tensor({batch, dim}, std::move(z));
}

Tensor matrix_batch(std::span<const CorrelationMatrix> corpus, std::size_t batch, std::uint64_t key) {
    const std::size_t n = corpus.front().size();
    std::vector<double> x(batch * n * n);
    rng::CounterRng g(key);
    for (std::size_t b = 0; b < batch; ++b) {
        const auto& m = corpus[g.below(corpus.size())].values();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                x[(b * n + i) * n + j] = m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
    return Tensor({batch, 1, n, n}, std::move(x));
}

Tensor matrices_tensor(std::span<const CorrelationMatrix> ms, std::size_t n) {
    std::vector<double> x;
    x.reserve(ms.size() * n * n);
    for (const auto& m : ms)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) x.push_back(m(i, j));
    return Tensor({ms.size(), 1, n, n}, std::move(x));
}

double spread_of(const Tensor& fake, std::size_t n) {
    // Mean pairwise Frobenius distance over the first few samples.
    const std::size_t k = std::min<std::size_t>(fake.dim(0), 8), sz = n * n;
    double total = 0.0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = a + 1; b < k; ++b, ++pairs) {
            double s = 0.0;
            for (std::size_t e = 0; e < sz; ++e) {
                const double d = fake[a * sz + e] - fake[b * sz + e];
                s += d * d;
            }
            total += std::sqrt(s);
        }
    return pairs ? total / static_cast<double>(pairs) : 0.0;
}

std::vector<Tensor> gradients_of(const Gradients& g, std::span<const NodeId> ids) {
    std::vector<Tensor> out;
    out.reserve(ids.size());
    for (NodeId id : ids) out.push_back(g.at(id));
    return out;
}

void check_finite(double v, const char* what, std::size_t step) {
    if (!std::isfinite(v))
        throw NumericalError(std::string("non-finite ") + what + " at training step " + std::to_string(step));
}

}  // namespace

TrainedGan train_gan(std::span<const CorrelationMatrix> corpus, const GanConfig& cfg, const GanProgress& progress) {
    cfg.validate();
    if (corpus.size() < cfg.batch)
        throw ValidationError("GAN corpus has " + std::to_string(corpus.size()) + " matrices; batch size is " +
                              std::to_string(cfg.batch));
    for (const auto& m : corpus) {
        if (m.size() != cfg.n)
            throw ValidationError("corpus matrix of size " + std::to_string(m.size()) + " does not match gan.n = " +
                                  std::to_string(cfg.n));
        if (m.asset_ids() != corpus.front().asset_ids())
            throw ValidationError("corpus matrices must share one asset order");
    }
    TrainedGan gan{cfg, build_generator(cfg), build_critic(cfg), {}};
    const AdamConfig gopt{cfg.lr_generator, cfg.beta1, cfg.beta2, 1e-8};
    const AdamConfig copt{cfg.lr_critic, cfg.beta1, cfg.beta2, 1e-8};
    AdamState gstate(gopt, gan.generator.parameters());
    AdamState cstate(copt, gan.critic.parameters());
    const bool wgan = cfg.variant == GanVariant::wgan;
    const std::uint64_t data_key = rng::derive_seed(cfg.seed, "gan.batches");
    const std::uint64_t latent_key = rng::derive_seed(cfg.seed, "gan.latent");
    if (cfg.lipschitz == Lipschitz::weight_clip) clip_parameters(gan.critic.parameters(), cfg.clip);

    std::size_t low_spread_run = 0;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        GanStep rec{};
        for (std::size_t k = 0; k < cfg.critic_steps; ++k) {
            const std::uint64_t key = rng::mix(rng::mix(step, k), 1);
            const Tensor real = matrix_batch(corpus, cfg.batch, rng::mix(data_key, key));
            const Tensor fake = infer(gan.generator, latent_batch(cfg.batch, cfg.latent_dim, rng::mix(latent_key, key))).front();
            Tape tape;
            const auto cp = bind_parameters(tape, gan.critic.parameters(), true);
            const NodeId sr = gan.critic.build(tape, tape.constant(real), cp, {});
            const NodeId sf = gan.critic.build(tape, tape.constant(fake), cp, {});
            const NodeId mr = ops::mean(tape, sr), mf = ops::mean(tape, sf);
            NodeId loss;
            if (wgan) {
                loss = ops::sub(tape, mf, mr);
            } else {
                // -log sigmoid(s_real) - log(1 - sigmoid(s_fake))
                loss = ops::add(tape, ops::mean(tape, ops::softplus(tape, ops::scale(tape, sr, -1.0))),
                                ops::mean(tape, ops::softplus(tape, sf)));
            }
            rec.critic_loss = tape.value(loss).item();
            rec.critic_gap = tape.value(mr).item() - tape.value(mf).item();
            check_finite(rec.critic_loss, "critic loss", step);
            const auto grads = tape.backward(loss);
            adam_step(cstate, gan.critic.parameters(), gradients_of(grads, cp));
            if (cfg.lipschitz == Lipschitz::weight_clip) clip_parameters(gan.critic.parameters(), cfg.clip);
        }
        {
            const std::uint64_t key = rng::mix(step, 2);
            Tape tape;
            const auto gp = bind_parameters(tape, gan.generator.parameters(), true);
            const auto cp = bind_parameters(tape, gan.critic.parameters(), false);
            const NodeId z = tape.constant(latent_batch(cfg.batch, cfg.latent_dim, rng::mix(latent_key, key)));
            const NodeId fake = gan.generator.build(tape, z, gp, {});
            const NodeId s = gan.critic.build(tape, fake, cp, {});
            const NodeId loss = wgan ? ops::scale(tape, ops::mean(tape, s), -1.0)
                                     : ops::mean(tape, ops::softplus(tape, ops::scale(tape, s, -1.0)));
            rec.generator_loss = tape.value(loss).item();
            check_finite(rec.generator_loss, "generator loss", step);
            rec.spread = spread_of(tape.value(fake), cfg.n);
            const auto grads = tape.backward(loss);
            adam_step(gstate, gan.generator.parameters(), gradients_of(grads, gp));
        }
        low_spread_run = rec.spread < cfg.collapse_threshold ? low_spread_run + 1 : 0;
        if (!gan.history.collapse_warning && cfg.collapse_window > 0 && low_spread_run >= cfg.collapse_window) {
            gan.history.collapse_warning = true;
            gan.history.collapse_step = step;
        }
        gan.history.steps.push_back(rec);
        if (progress) progress(step, rec);
    }
    return gan;
}

// ---------------------------------------------------------------------------
// Sampling

std::vector<Eigen::MatrixXd> generate_raw(const TrainedGan& gan, std::size_t count, std::uint64_t seed,
                                          std::size_t workers) {
    const std::size_t n = gan.config.n, chunk = 64;
    const std::size_t shards = (count + chunk - 1) / chunk;
    std::vector<Eigen::MatrixXd> out(count);
    const std::uint64_t key = rng::derive_seed(seed, "gan.sample");
    parallel_for(
        shards,
        [&](std::size_t sh) {
            const std::size_t lo = sh * chunk, b = std::min(chunk, count - lo);
            const Tensor raw = infer(gan.generator, latent_batch(b, gan.config.latent_dim, rng::mix(key, sh))).front();
            for (std::size_t k = 0; k < b; ++k) {
                Eigen::MatrixXd a(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < n; ++j)
                        a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = raw[(k * n + i) * n + j];
                const Eigen::MatrixXd t = a.transpose();
                out[lo + k] = 0.5 * (a + t);
            }
        },
        workers);
    return out;
}

SampleResult sample_gan(const TrainedGan& gan, std::size_t count, std::uint64_t seed,
                        const std::vector<std::string>& asset_ids, std::size_t workers) {
    const std::size_t n = gan.config.n;
    std::vector<std::string> ids = asset_ids.empty() ? default_asset_ids(n) : asset_ids;
    if (ids.size() != n) throw ValidationError("asset id list does not match gan.n");
    const auto raw = generate_raw(gan, count, seed, workers);
    std::vector<std::optional<CorrelationMatrix>> slots(count);
    parallel_for(
        count,
        [&](std::size_t i) {
            Eigen::MatrixXd a = raw[i];
            a.diagonal().setOnes();
            try {
                slots[i] = to_correlation(a, ids);
            } catch (const NumericalError&) {
            }
        },
        workers);
    SampleResult r;
    for (auto& s : slots) {
        if (s) {
            r.matrices.push_back(std::move(*s));
        } else {
            ++r.failed;
        }
    }
    if (count > 0 && static_cast<double>(r.failed) > 0.01 * static_cast<double>(count))
        throw NumericalError("projection failed for " + std::to_string(r.failed) + " of " + std::to_string(count) +
                             " sampled matrices");
    return r;
}

double raw_diagonal_mean(const TrainedGan& gan, std::size_t count, std::uint64_t seed, std::size_t workers) {
    if (count == 0) throw ValidationError("raw_diagonal_mean needs count >= 1");
    const auto raw = generate_raw(gan, count, seed, workers);
    double s = 0.0;
    for (const auto& a : raw) s += a.diagonal().mean();
    return s / static_cast<double>(count);
}

std::vector<double> critic_scores(const TrainedGan& gan, std::span<const CorrelationMatrix> matrices) {
    if (matrices.empty()) return {};
    const Tensor s = infer(gan.critic, matrices_tensor(matrices, gan.config.n)).front();
    std::vector<double> out(s.data().begin(), s.data().end());
    if (gan.config.variant == GanVariant::dcgan)
        for (double& v : out) v = 1.0 / (1.0 + std::exp(-v));
    return out;
}

// ---------------------------------------------------------------------------
// Persistence

void save_gan(const TrainedGan& gan, const std::filesystem::path& path) {
    nlohmann::json hist = nlohmann::json::array();
    for (const auto& s : gan.history.steps) hist.push_back({s.critic_loss, s.generator_loss, s.critic_gap, s.spread});
    const nlohmann::json header{{"format", "fixsynth.gan/1"},
                                {"config", gan.config.to_json()},
                                {"generator", describe_parameters(gan.generator.parameters())},
                                {"critic", describe_parameters(gan.critic.parameters())},
                                {"history", hist},
                                {"collapse_warning", gan.history.collapse_warning},
                                {"collapse_step", gan.history.collapse_step}};
    std::vector<double> payload = flatten_parameters(gan.generator.parameters());
    const auto c = flatten_parameters(gan.critic.parameters());
    payload.insert(payload.end(), c.begin(), c.end());
    write_binary(path, header, payload);
}

TrainedGan load_gan(const std::filesystem::path& path) {
    const BinaryDocument doc = read_binary(path);
    if (doc.header.value("format", "") != "fixsynth.gan/1")
        throw ValidationError("'" + path.string() + "' is not a GAN model file");
    TrainedGan gan{GanConfig::from_json(doc.header.at("config")), {}, {}, {}};
    gan.generator = build_generator(gan.config);
    gan.critic = build_critic(gan.config);
    const std::size_t ng = flatten_parameters(gan.generator.parameters()).size();
    const std::size_t nc = flatten_parameters(gan.critic.parameters()).size();
    if (doc.payload.size() != ng + nc)
        throw ValidationError("'" + path.string() + "' holds " + std::to_string(doc.payload.size()) +
                              " weights; the configured networks need " + std::to_string(ng + nc));
    assign_parameters(gan.generator.parameters(), std::span(doc.payload).first(ng));
    assign_parameters(gan.critic.parameters(), std::span(doc.payload).subspan(ng));
    for (const auto& s : doc.header.at("history"))
        gan.history.steps.push_back({s.at(0).get<double>(), s.at(1).get<double>(), s.at(2).get<double>(), s.at(3).get<double>()});
    gan.history.collapse_warning = doc.header.value("collapse_warning", false);
    gan.history.collapse_step = doc.header.value("collapse_step", std::size_t{0});
    return gan;
}

}  // namespace fixsynth
