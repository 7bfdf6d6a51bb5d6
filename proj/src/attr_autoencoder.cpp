#include "fixsynth/attr_autoencoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "fixsynth/binary_io.hpp"
#include "fixsynth/json_fields.hpp"
#include "fixsynth/parallel.hpp"
#include "fixsynth/rng.hpp"

namespace fixsynth {

std::size_t AeConfig::head_seed_length() const {
    std::size_t len = n;
    for (std::size_t b = 0; b < head.channels.size(); ++b) {
        if (head.upsample_factor < 2 || len % head.upsample_factor != 0)
            throw ValidationError("decoder heads do not divide n = " + std::to_string(n) + " by upsample factor " +
                                  std::to_string(head.upsample_factor));
        len /= head.upsample_factor;
    }
    return len;
}

void AeConfig::validate() const {
    using json_fields::require;
    require(n >= 2, "ae.n", "must be >= 2");
    require(!encoder_channels.empty(), "ae.encoder_channels", "needs at least one block");
    for (auto c : encoder_channels) require(c >= 1, "ae.encoder_channels", "channel counts must be >= 1");
    require(encoder_kernel >= 1 && encoder_kernel % 2 == 1, "ae.encoder_kernel", "must be odd");
    require(dropout >= 0.0 && dropout < 1.0, "ae.dropout", "must lie in [0, 1)");
    require(latent_dim >= 1, "ae.latent_dim", "must be >= 1");
    require(head.seed_channels >= 1, "ae.head.seed_channels", "must be >= 1");
    for (auto c : head.channels) require(c >= 1, "ae.head.channels", "channel counts must be >= 1");
    require(head.kernel >= 1 && head.kernel % 2 == 1, "ae.head.kernel", "must be odd");
    require(leaky_slope >= 0.0 && leaky_slope < 1.0, "ae.leaky_slope", "must lie in [0, 1)");
    require(batch >= 1, "ae.batch", "must be >= 1");
    require(lr > 0.0, "ae.lr", "must be > 0");
    require(validation_fraction >= 0.0 && validation_fraction < 1.0, "ae.validation_fraction", "must lie in [0, 1)");
    (void)head_seed_length();
}

nlohmann::json AeConfig::to_json() const {
    return {{"n", n},
            {"encoder_channels", encoder_channels},
            {"encoder_kernel", encoder_kernel},
            {"dropout", dropout},
            {"latent_dim", latent_dim},
            {"head",
             {{"seed_channels", head.seed_channels},
              {"channels", head.channels},
              {"upsample_factor", head.upsample_factor},
              {"kernel", head.kernel}}},
            {"leaky_slope", leaky_slope},
            {"batch", batch},
            {"lr", lr},
            {"steps", steps},
            {"validation_fraction", validation_fraction},
            {"eval_interval", eval_interval},
            {"seed", seed}};
}

AeConfig AeConfig::from_json(const nlohmann::json& j, const std::string& path) {
    using namespace json_fields;
    reject_unknown(j, path,
                   {"n", "encoder_channels", "encoder_kernel", "dropout", "latent_dim", "head", "leaky_slope", "batch",
                    "lr", "steps", "validation_fraction", "eval_interval", "seed"});
    AeConfig c;
    read(j, path, "n", c.n);
    read(j, path, "encoder_channels", c.encoder_channels);
    read(j, path, "encoder_kernel", c.encoder_kernel);
    read(j, path, "dropout", c.dropout);
    read(j, path, "latent_dim", c.latent_dim);
    if (j.contains("head")) {
        const auto& h = j.at("head");
        const std::string hp = join(path, "head");
        reject_unknown(h, hp, {"seed_channels", "channels", "upsample_factor", "kernel"});
        read(h, hp, "seed_channels", c.head.seed_channels);
        read(h, hp, "channels", c.head.channels);
        read(h, hp, "upsample_factor", c.head.upsample_factor);
        read(h, hp, "kernel", c.head.kernel);
    }
    read(j, path, "leaky_slope", c.leaky_slope);
    read(j, path, "batch", c.batch);
    read(j, path, "lr", c.lr);
    read(j, path, "steps", c.steps);
    read(j, path, "validation_fraction", c.validation_fraction);
    read(j, path, "eval_interval", c.eval_interval);
    read(j, path, "seed", c.seed);
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Networks

namespace {

Sequential build_encoder(const AeConfig& cfg) {
    std::vector<LayerSpec> layers;
    std::size_t in = 1;
    for (std::size_t c : cfg.encoder_channels) {
        layers.push_back(LayerSpec::conv2d(in, c, cfg.encoder_kernel, 2, cfg.encoder_kernel / 2));
        layers.push_back(LayerSpec::leaky_relu(cfg.leaky_slope));
        if (cfg.dropout > 0.0) layers.push_back(LayerSpec::dropout(cfg.dropout));
        in = c;
    }
    // Flatten size from the conv stack, then the linear compression.
    const Shape conv_out = Sequential(layers, 0, "probe").output_shape({1, cfg.n, cfg.n});
    const std::size_t flat = shape_numel(conv_out);
    layers.push_back(LayerSpec::reshape({flat}));
    layers.push_back(LayerSpec::linear(flat, cfg.latent_dim));
    layers.push_back(LayerSpec::leaky_relu(cfg.leaky_slope));
    return Sequential(std::move(layers), rng::derive_seed(cfg.seed, "ae.encoder"), "encoder");
}

Sequential build_head(const AeConfig& cfg, const char* name, bool positive) {
    const auto& h = cfg.head;
    const std::size_t len = cfg.head_seed_length();
    std::vector<LayerSpec> layers{LayerSpec::linear(cfg.latent_dim, h.seed_channels * len),
                                  LayerSpec::reshape({h.seed_channels, len})};
    std::size_t in = h.seed_channels;
    for (std::size_t c : h.channels) {
        layers.push_back(LayerSpec::conv1d(in, c, h.kernel, 1, h.kernel / 2));
        layers.push_back(LayerSpec::upsample1d(h.upsample_factor));
        layers.push_back(LayerSpec::leaky_relu(cfg.leaky_slope));
        in = c;
    }
    layers.push_back(LayerSpec::conv1d(in, 1, h.kernel, 1, h.kernel / 2));
    layers.push_back(LayerSpec::reshape({cfg.n}));
    if (positive) layers.push_back(LayerSpec::softplus());
    Sequential net(std::move(layers), rng::derive_seed(cfg.seed, std::string("ae.") + name), name);
    const Shape out = net.output_shape({cfg.latent_dim});
    if (out != Shape{cfg.n})
        throw ValidationError(std::string(name) + " head produces " + shape_to_string(out) + ", expected [" +
                              std::to_string(cfg.n) + "]");
    return net;
}

Tensor matrix_tensor(std::span<const CorrelationMatrix* const> ms, std::size_t n) {
    std::vector<double> x;
    x.reserve(ms.size() * n * n);
    for (const auto* m : ms)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) x.push_back((*m)(i, j));
    return Tensor({ms.size(), 1, n, n}, std::move(x));
}

ComponentStats stats_of(std::span<const MarketSnapshot* const> snaps, const Eigen::VectorXd MarketSnapshot::*field) {
    double s = 0.0, ss = 0.0;
    std::size_t count = 0;
    for (const auto* p : snaps) {
        const auto& v = p->*field;
        s += v.sum();
        count += static_cast<std::size_t>(v.size());
    }
    const double mean = s / static_cast<double>(count);
    for (const auto* p : snaps) ss += ((p->*field).array() - mean).square().sum();
    const double sd = std::sqrt(ss / static_cast<double>(count));
    return {mean, sd > 1e-12 ? sd : 1.0};
}

// Standardized targets; volatility keeps its origin so the softplus head stays positive.
struct Targets {
    Tensor volatility, expected_return, forward_return;
};

Targets targets_of(std::span<const MarketSnapshot* const> snaps, const AeStats& st, std::size_t n) {
    std::vector<double> v, e, f;
    v.reserve(snaps.size() * n);
    e.reserve(snaps.size() * n);
    f.reserve(snaps.size() * n);
    for (const auto* p : snaps)
        for (std::size_t i = 0; i < n; ++i) {
            const auto k = static_cast<Eigen::Index>(i);
            v.push_back(p->volatility(k) / st.volatility.stdev);
            e.push_back((p->expected_return(k) - st.expected_return.mean) / st.expected_return.stdev);
            f.push_back((p->forward_return(k) - st.forward_return.mean) / st.forward_return.stdev);
        }
    const Shape shape{snaps.size(), n};
    return {Tensor(shape, std::move(v)), Tensor(shape, std::move(e)), Tensor(shape, std::move(f))};
}

std::vector<Tensor> gradients_of(const Gradients& g, std::span<const NodeId> ids) {
    std::vector<Tensor> out;
    out.reserve(ids.size());
    for (NodeId id : ids) out.push_back(g.at(id));
    return out;
}

struct Bound {
    std::vector<NodeId> enc, vol, er, fr;
};

Bound bind_all(Tape& tape, const AttrModel& m, bool grad) {
    return {bind_parameters(tape, m.encoder.parameters(), grad), bind_parameters(tape, m.volatility_head.parameters(), grad),
            bind_parameters(tape, m.expected_return_head.parameters(), grad),
            bind_parameters(tape, m.forward_return_head.parameters(), grad)};
}

struct Losses {
    NodeId vol, er, fr, total;
};

Losses forward_losses(Tape& tape, const AttrModel& m, const Bound& b, const Tensor& x, const Targets& t,
                      const ForwardMode& mode) {
    const NodeId z = m.encoder.build(tape, tape.constant(x), b.enc, mode);
    Losses l{};
    l.vol = ops::mse_loss(tape, m.volatility_head.build(tape, z, b.vol, mode), tape.constant(t.volatility));
    l.er = ops::mse_loss(tape, m.expected_return_head.build(tape, z, b.er, mode), tape.constant(t.expected_return));
    l.fr = ops::mse_loss(tape, m.forward_return_head.build(tape, z, b.fr, mode), tape.constant(t.forward_return));
    l.total = ops::add(tape, ops::add(tape, l.vol, l.er), l.fr);
    return l;
}

void check_snapshots(std::span<const MarketSnapshot> snapshots, std::size_t n) {
    for (const auto& s : snapshots) {
        if (s.corr.size() != n)
            throw ValidationError("snapshot matrix of size " + std::to_string(s.corr.size()) +
                                  " does not match ae.n = " + std::to_string(n));
        if (s.asset_ids() != snapshots.front().asset_ids())
            throw ValidationError("snapshots must share one asset order");
    }
}

std::vector<Sequential*> parts(AttrModel& m) {
    return {&m.encoder, &m.volatility_head, &m.expected_return_head, &m.forward_return_head};
}

std::vector<const Sequential*> parts(const AttrModel& m) {
    return {&m.encoder, &m.volatility_head, &m.expected_return_head, &m.forward_return_head};
}

std::vector<double> flatten_all(const AttrModel& m) {
    std::vector<double> out;
    for (const auto* p : parts(m)) {
        const auto flat = flatten_parameters(p->parameters());
        out.insert(out.end(), flat.begin(), flat.end());
    }
    return out;
}

std::size_t parameter_count(const AttrModel& m) {
    std::size_t k = 0;
    for (const auto* p : parts(m))
        for (const auto& q : p->parameters()) k += q.value.numel();
    return k;
}

void assign_all(AttrModel& m, std::span<const double> flat) {
    std::size_t off = 0;
    for (auto* p : parts(m)) {
        std::size_t k = 0;
        for (const auto& q : std::as_const(*p).parameters()) k += q.value.numel();
        assign_parameters(p->parameters(), flat.subspan(off, k));
        off += k;
    }
}

}  // namespace

AttrModel build_attr_model(const AeConfig& cfg) {
    cfg.validate();
    return AttrModel{cfg,
                     build_encoder(cfg),
                     build_head(cfg, "volatility", true),
                     build_head(cfg, "expected_return", false),
                     build_head(cfg, "forward_return", false),
                     {},
                     {},
                     default_asset_ids(cfg.n)};
}

std::size_t validation_split(std::size_t count, double fraction) {
    return count - static_cast<std::size_t>(std::floor(static_cast<double>(count) * fraction));
}

// ---------------------------------------------------------------------------
// Training

AttrModel train_attr_model(std::span<const MarketSnapshot> snapshots, const AeConfig& cfg, const AeProgress& progress) {
    AttrModel model = build_attr_model(cfg);
    if (snapshots.empty()) throw ValidationError("no snapshots to train on");
    check_snapshots(snapshots, cfg.n);
    model.asset_ids = snapshots.front().asset_ids();

    std::vector<const MarketSnapshot*> ordered;
    for (const auto& s : snapshots) ordered.push_back(&s);
    std::stable_sort(ordered.begin(), ordered.end(), [](auto* a, auto* b) { return a->date < b->date; });
    const std::size_t split = validation_split(ordered.size(), cfg.validation_fraction);
    const std::span<const MarketSnapshot* const> train(ordered.data(), split);
    const std::span<const MarketSnapshot* const> held(ordered.data() + split, ordered.size() - split);
    if (train.size() < cfg.batch)
        throw ValidationError("training split has " + std::to_string(train.size()) + " snapshots; batch size is " +
                              std::to_string(cfg.batch));
    model.history.train_count = train.size();
    model.history.validation_count = held.size();
    model.stats = {stats_of(train, &MarketSnapshot::volatility), stats_of(train, &MarketSnapshot::expected_return),
                   stats_of(train, &MarketSnapshot::forward_return)};

    const AdamConfig opt{cfg.lr, 0.9, 0.999, 1e-8};
    AdamState s_enc(opt, model.encoder.parameters()), s_vol(opt, model.volatility_head.parameters()),
        s_er(opt, model.expected_return_head.parameters()), s_fr(opt, model.forward_return_head.parameters());
    const std::uint64_t data_key = rng::derive_seed(cfg.seed, "ae.batches");
    const std::uint64_t drop_key = rng::derive_seed(cfg.seed, "ae.dropout");
    std::vector<MarketSnapshot> held_copy;
    for (const auto* p : held) held_copy.push_back(*p);
    const bool select = !held.empty() && cfg.eval_interval > 0;
    std::vector<double> best_params;
    double best_loss = std::numeric_limits<double>::infinity();
    const auto checkpoint = [&](std::size_t done) {
        const AeStep v = evaluate_attr_model(model, held_copy);
        model.history.validation_curve.emplace_back(done, v);
        if (v.total() < best_loss) {
            best_loss = v.total();
            best_params = flatten_all(model);
            model.history.selected_step = done;
        }
    };

    std::vector<const MarketSnapshot*> batch(cfg.batch);
    std::vector<const CorrelationMatrix*> mats(cfg.batch);
    if (select) checkpoint(0);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        rng::CounterRng g(rng::mix(data_key, step));
        for (std::size_t b = 0; b < cfg.batch; ++b) {
            batch[b] = train[g.below(train.size())];
            mats[b] = &batch[b]->corr;
        }
        Tape tape;
        const Bound bound = bind_all(tape, model, true);
        const Losses l = forward_losses(tape, model, bound, matrix_tensor(mats, cfg.n),
                                        targets_of(batch, model.stats, cfg.n), {true, rng::mix(drop_key, step)});
        const AeStep rec{tape.value(l.vol).item(), tape.value(l.er).item(), tape.value(l.fr).item()};
        if (!std::isfinite(rec.total()))
            throw NumericalError("non-finite encoder-decoder loss at training step " + std::to_string(step));
        const auto grads = tape.backward(l.total);
        adam_step(s_enc, model.encoder.parameters(), gradients_of(grads, bound.enc));
        adam_step(s_vol, model.volatility_head.parameters(), gradients_of(grads, bound.vol));
        adam_step(s_er, model.expected_return_head.parameters(), gradients_of(grads, bound.er));
        adam_step(s_fr, model.forward_return_head.parameters(), gradients_of(grads, bound.fr));
        model.history.steps.push_back(rec);
        if (progress) progress(step, rec);
        if (select && ((step + 1) % cfg.eval_interval == 0 || step + 1 == cfg.steps)) checkpoint(step + 1);
    }
    if (select) {
        assign_all(model, best_params);
    } else {
        model.history.selected_step = cfg.steps;
    }
    if (!held.empty()) model.history.validation = evaluate_attr_model(model, held_copy);
    return model;
}

AeStep evaluate_attr_model(const AttrModel& model, std::span<const MarketSnapshot> snapshots) {
    if (snapshots.empty()) throw ValidationError("no snapshots to evaluate");
    check_snapshots(snapshots, model.config.n);
    std::vector<const MarketSnapshot*> ps;
    std::vector<const CorrelationMatrix*> ms;
    for (const auto& s : snapshots) {
        ps.push_back(&s);
        ms.push_back(&s.corr);
    }
    Tape tape;
    const Bound bound = bind_all(tape, model, false);
    const Losses l = forward_losses(tape, model, bound, matrix_tensor(ms, model.config.n),
                                    targets_of(ps, model.stats, model.config.n), {});
    return {tape.value(l.vol).item(), tape.value(l.er).item(), tape.value(l.fr).item()};
}

// ---------------------------------------------------------------------------
// Inference

AttributeVectors generate(const AttrModel& model, const CorrelationMatrix& corr) {
    const std::size_t n = model.config.n;
    if (corr.size() != n)
        throw ValidationError("matrix of size " + std::to_string(corr.size()) + " given to a model with n = " +
                              std::to_string(n));
    const CorrelationMatrix* one[] = {&corr};
    const Tensor z = infer(model.encoder, matrix_tensor(one, n)).front();
    const Tensor v = infer(model.volatility_head, z).front();
    const Tensor e = infer(model.expected_return_head, z).front();
    const Tensor f = infer(model.forward_return_head, z).front();
    const auto& st = model.stats;
    AttributeVectors out;
    out.volatility.resize(static_cast<Eigen::Index>(n));
    out.expected_return.resize(static_cast<Eigen::Index>(n));
    out.forward_return.resize(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        out.volatility(k) = v[i] * st.volatility.stdev;
        out.expected_return(k) = st.expected_return.mean + e[i] * st.expected_return.stdev;
        out.forward_return(k) = st.forward_return.mean + f[i] * st.forward_return.stdev;
    }
    out.asset_ids = corr.asset_ids();
    return out;
}

std::vector<AttributeVectors> generate(const AttrModel& model, std::span<const CorrelationMatrix> corrs,
                                       std::size_t workers) {
    // Per-matrix passes keep each output independent of how the list is batched.
    std::vector<AttributeVectors> out(corrs.size());
    parallel_for(corrs.size(), [&](std::size_t i) { out[i] = generate(model, corrs[i]); }, workers);
    return out;
}

std::vector<MarketSnapshot> synthesize_snapshots(const AttrModel& model, std::span<const CorrelationMatrix> corrs,
                                                 std::size_t workers) {
    const auto attrs = generate(model, corrs, workers);
    const Date origin = parse_date("2000-01-07");
    std::vector<MarketSnapshot> out;
    out.reserve(corrs.size());
    for (std::size_t i = 0; i < corrs.size(); ++i)
        out.push_back({origin + std::chrono::days(7 * static_cast<long>(i)), corrs[i], attrs[i].volatility,
                       attrs[i].expected_return, attrs[i].forward_return});
    return out;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

nlohmann::json step_json(const AeStep& s) { return {s.volatility, s.expected_return, s.forward_return}; }
AeStep step_from(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }
nlohmann::json stats_json(const ComponentStats& s) { return {{"mean", s.mean}, {"stdev", s.stdev}}; }
ComponentStats stats_from(const nlohmann::json& j) { return {j.at("mean").get<double>(), j.at("stdev").get<double>()}; }

}  // namespace

void save_attr_model(const AttrModel& model, const std::filesystem::path& path) {
    nlohmann::json hist = nlohmann::json::array();
    for (const auto& s : model.history.steps) hist.push_back(step_json(s));
    nlohmann::json header{{"format", "fixsynth.ae/1"},
                          {"config", model.config.to_json()},
                          {"asset_ids", model.asset_ids},
                          {"stats",
                           {{"volatility", stats_json(model.stats.volatility)},
                            {"expected_return", stats_json(model.stats.expected_return)},
                            {"forward_return", stats_json(model.stats.forward_return)}}},
                          {"history", hist},
                          {"train_count", model.history.train_count},
                          {"validation_count", model.history.validation_count},
                          {"selected_step", model.history.selected_step}};
    if (model.history.validation) header["validation"] = step_json(*model.history.validation);
    write_binary(path, header, flatten_all(model));
}

AttrModel load_attr_model(const std::filesystem::path& path) {
    const BinaryDocument doc = read_binary(path);
    if (doc.header.value("format", "") != "fixsynth.ae/1")
        throw ValidationError("'" + path.string() + "' is not an encoder-decoder model file");
    AttrModel m = build_attr_model(AeConfig::from_json(doc.header.at("config")));
    const std::size_t need = parameter_count(m);
    if (doc.payload.size() != need)
        throw ValidationError("'" + path.string() + "' holds " + std::to_string(doc.payload.size()) +
                              " weights; the configured model needs " + std::to_string(need));
    assign_all(m, doc.payload);
    m.asset_ids = doc.header.at("asset_ids").get<std::vector<std::string>>();
    const auto& st = doc.header.at("stats");
    m.stats = {stats_from(st.at("volatility")), stats_from(st.at("expected_return")), stats_from(st.at("forward_return"))};
    for (const auto& s : doc.header.at("history")) m.history.steps.push_back(step_from(s));
    m.history.train_count = doc.header.at("train_count").get<std::size_t>();
    m.history.validation_count = doc.header.at("validation_count").get<std::size_t>();
    m.history.selected_step = doc.header.value("selected_step", std::size_t{0});
    if (doc.header.contains("validation")) m.history.validation = step_from(doc.header.at("validation"));
    return m;
}

}  // namespace fixsynth
