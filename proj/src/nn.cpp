#include "fixsynth/nn.hpp"

#include <algorithm>
#include <cmath>

#include "fixsynth/error.hpp"
#include "fixsynth/rng.hpp"

namespace fixsynth {

std::vector<NodeId> bind_parameters(Tape& tape, std::span<const Parameter> params, bool requires_grad) {
    std::vector<NodeId> ids;
    ids.reserve(params.size());
    for (const auto& p : params) ids.push_back(tape.leaf(p.value.with_requires_grad(requires_grad)));
    return ids;
}

std::vector<Tensor> infer(const Network& net, const Tensor& input, const ForwardMode& mode) {
    Tape tape;
    const auto params = bind_parameters(tape, net.parameters(), false);
    const NodeId x = tape.constant(input);
    std::vector<Tensor> out;
    for (NodeId id : net.forward(tape, x, params, mode)) out.push_back(tape.value(id));
    return out;
}

// ---------------------------------------------------------------------------
// LayerSpec

LayerSpec LayerSpec::linear(std::size_t in, std::size_t out) {
    LayerSpec s;
    s.op = OpKind::linear;
    s.in = in;
    s.out = out;
    return s;
}

namespace {
LayerSpec conv_spec(OpKind op, std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                    std::size_t padding) {
    LayerSpec s;
    s.op = op;
    s.in = in;
    s.out = out;
    s.kernel = kernel;
    s.attrs.stride = stride;
    s.attrs.padding = padding;
    return s;
}
}  // namespace

LayerSpec LayerSpec::conv2d(std::size_t in, std::size_t out, std::size_t k, std::size_t s, std::size_t p) {
    return conv_spec(OpKind::conv2d, in, out, k, s, p);
}
LayerSpec LayerSpec::conv1d(std::size_t in, std::size_t out, std::size_t k, std::size_t s, std::size_t p) {
    return conv_spec(OpKind::conv1d, in, out, k, s, p);
}
LayerSpec LayerSpec::transposed_conv2d(std::size_t in, std::size_t out, std::size_t k, std::size_t s,
                                       std::size_t p) {
    return conv_spec(OpKind::transposed_conv2d, in, out, k, s, p);
}

LayerSpec LayerSpec::upsample2d(std::size_t factor) {
    LayerSpec s;
    s.op = OpKind::upsample2d_nearest;
    s.attrs.factor = factor;
    return s;
}

LayerSpec LayerSpec::upsample1d(std::size_t factor) {
    LayerSpec s;
    s.op = OpKind::upsample1d_nearest;
    s.attrs.factor = factor;
    return s;
}

LayerSpec LayerSpec::leaky_relu(double slope) {
    LayerSpec s;
    s.op = OpKind::leaky_relu;
    s.attrs.slope = slope;
    return s;
}

LayerSpec LayerSpec::tanh() {
    LayerSpec s;
    s.op = OpKind::tanh;
    return s;
}

LayerSpec LayerSpec::softplus() {
    LayerSpec s;
    s.op = OpKind::softplus;
    return s;
}

LayerSpec LayerSpec::dropout(double rate) {
    LayerSpec s;
    s.op = OpKind::dropout;
    s.attrs.rate = rate;
    return s;
}

LayerSpec LayerSpec::reshape(Shape per_sample) {
    LayerSpec s;
    s.op = OpKind::reshape;
    s.attrs.shape = std::move(per_sample);
    return s;
}

bool LayerSpec::has_parameters() const noexcept {
    switch (op) {
        case OpKind::linear:
        case OpKind::conv2d:
        case OpKind::conv1d:
        case OpKind::transposed_conv2d:
            return true;
        default:
            return false;
    }
}

nlohmann::json layers_to_json(std::span<const LayerSpec> layers) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& l : layers) {
        nlohmann::json j{{"op", op_name(l.op)}};
        switch (l.op) {
            case OpKind::linear:
                j["in"] = l.in;
                j["out"] = l.out;
                break;
            case OpKind::conv2d:
            case OpKind::conv1d:
            case OpKind::transposed_conv2d:
                j["in"] = l.in;
                j["out"] = l.out;
                j["kernel"] = l.kernel;
                j["stride"] = l.attrs.stride;
                j["padding"] = l.attrs.padding;
                break;
            case OpKind::upsample2d_nearest:
            case OpKind::upsample1d_nearest:
                j["factor"] = l.attrs.factor;
                break;
            case OpKind::leaky_relu:
                j["slope"] = l.attrs.slope;
                break;
            case OpKind::dropout:
                j["rate"] = l.attrs.rate;
                break;
            case OpKind::reshape:
                j["shape"] = l.attrs.shape;
                break;
            default:
                break;
        }
        arr.push_back(std::move(j));
    }
    return arr;
}

std::vector<LayerSpec> layers_from_json(const nlohmann::json& j) {
    std::vector<LayerSpec> out;
    try {
        for (const auto& e : j) {
            const OpKind op = parse_op(e.at("op").get<std::string>());
            LayerSpec s;
            switch (op) {
                case OpKind::linear:
                    s = LayerSpec::linear(e.at("in"), e.at("out"));
                    break;
                case OpKind::conv2d:
                case OpKind::conv1d:
                case OpKind::transposed_conv2d:
                    s = conv_spec(op, e.at("in"), e.at("out"), e.at("kernel"), e.at("stride"), e.at("padding"));
                    break;
                case OpKind::upsample2d_nearest:
                    s = LayerSpec::upsample2d(e.at("factor"));
                    break;
                case OpKind::upsample1d_nearest:
                    s = LayerSpec::upsample1d(e.at("factor"));
                    break;
                case OpKind::leaky_relu:
                    s = LayerSpec::leaky_relu(e.at("slope"));
                    break;
                case OpKind::tanh:
                    s = LayerSpec::tanh();
                    break;
                case OpKind::softplus:
                    s = LayerSpec::softplus();
                    break;
                case OpKind::dropout:
                    s = LayerSpec::dropout(e.at("rate"));
                    break;
                case OpKind::reshape:
                    s = LayerSpec::reshape(e.at("shape").get<Shape>());
                    break;
                default:
                    throw ValidationError("op '" + std::string(op_name(op)) + "' cannot appear as a layer");
            }
            out.push_back(std::move(s));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed layer description: ") + e.what());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sequential

Sequential::Sequential(std::vector<LayerSpec> layers, std::uint64_t seed, std::string name_prefix)
    : layers_(std::move(layers)) {
    rng::CounterRng gen(seed);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const LayerSpec& l = layers_[i];
        if (!l.has_parameters()) continue;
        if (l.in == 0 || l.out == 0 || (l.op != OpKind::linear && l.kernel == 0))
            throw ValidationError("layer " + std::to_string(i) + " (" + std::string(op_name(l.op)) +
                                  ") has a zero dimension");
        Shape wshape;
        std::size_t fan_in = 0;
        switch (l.op) {
            case OpKind::linear:
                wshape = {l.out, l.in};
                fan_in = l.in;
                break;
            case OpKind::conv2d:
                wshape = {l.out, l.in, l.kernel, l.kernel};
                fan_in = l.in * l.kernel * l.kernel;
                break;
            case OpKind::conv1d:
                wshape = {l.out, l.in, l.kernel};
                fan_in = l.in * l.kernel;
                break;
            default:  // transposed_conv2d
                wshape = {l.in, l.out, l.kernel, l.kernel};
                fan_in = l.in * l.kernel * l.kernel / std::max<std::size_t>(1, l.attrs.stride * l.attrs.stride);
                break;
        }
        const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
        std::vector<double> w(shape_numel(wshape));
        for (double& v : w) v = gen.uniform(-bound, bound);
        const std::string base = name_prefix + "." + std::to_string(i) + "." + std::string(op_name(l.op));
        params_.push_back({base + ".weight", Tensor(std::move(wshape), std::move(w))});
        params_.push_back({base + ".bias", Tensor::zeros({l.out})});
    }
}

bool Sequential::has_dropout() const {
    return std::any_of(layers_.begin(), layers_.end(),
                       [](const LayerSpec& l) { return l.op == OpKind::dropout && l.attrs.rate > 0.0; });
}

std::vector<NodeId> Sequential::forward(Tape& tape, NodeId input, std::span<const NodeId> params,
                                        const ForwardMode& mode) const {
    return {build(tape, input, params, mode)};
}

NodeId Sequential::build(Tape& tape, NodeId input, std::span<const NodeId> params, const ForwardMode& mode) const {
    if (params.size() != params_.size())
        throw ValidationError("expected " + std::to_string(params_.size()) + " parameter nodes, got " +
                              std::to_string(params.size()));
    NodeId x = input;
    std::size_t p = 0;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const LayerSpec& l = layers_[i];
        if (l.has_parameters()) {
            x = tape.apply(l.op, {x, params[p], params[p + 1]}, l.attrs);
            p += 2;
        } else if (l.op == OpKind::reshape) {
            Shape s{tape.value(x).dim(0)};
            s.insert(s.end(), l.attrs.shape.begin(), l.attrs.shape.end());
            x = ops::reshape(tape, x, std::move(s));
        } else if (l.op == OpKind::dropout) {
            OpAttrs a = l.attrs;
            a.training = mode.training;
            a.mask_seed = rng::mix(mode.dropout_seed, i);
            x = tape.apply(OpKind::dropout, {x}, a);
        } else {
            x = tape.apply(l.op, {x}, l.attrs);
        }
    }
    return x;
}

Shape Sequential::output_shape(const Shape& per_sample_input) const {
    Shape s{1};
    s.insert(s.end(), per_sample_input.begin(), per_sample_input.end());
    const Tensor out = infer(*this, Tensor::zeros(std::move(s))).front();
    return Shape(out.shape().begin() + 1, out.shape().end());
}

// ---------------------------------------------------------------------------
// Adam

AdamState::AdamState(AdamConfig config, std::span<const Parameter> params) : config_(config) {
    for (const auto& p : params) {
        m_.emplace_back(p.value.numel(), 0.0);
        v_.emplace_back(p.value.numel(), 0.0);
    }
}

void adam_step(AdamState& state, std::span<Parameter> params, std::span<const Tensor> grads) {
    if (params.size() != grads.size() || params.size() != state.m_.size())
        throw ValidationError("adam_step: parameter/gradient/state counts differ");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].shape() != params[i].value.shape())
            throw ValidationError("adam_step: gradient shape " + shape_to_string(grads[i].shape()) +
                                  " does not match parameter '" + params[i].name + "' " +
                                  shape_to_string(params[i].value.shape()));
        for (double g : grads[i].data())
            if (!std::isfinite(g)) throw NumericalError("non-finite gradient for parameter '" + params[i].name + "'");
    }
    const AdamConfig& c = state.config_;
    ++state.step_;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step_));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& m = state.m_[i];
        auto& v = state.v_[i];
        std::vector<double> w(params[i].value.data().begin(), params[i].value.data().end());
        for (std::size_t k = 0; k < w.size(); ++k) {
            const double g = grads[i][k];
            m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g;
            v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g * g;
            const double mhat = m[k] / bc1;
            const double vhat = v[k] / bc2;
            w[k] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
        }
        params[i].value = Tensor(params[i].value.shape(), std::move(w));
    }
}

void clip_parameters(std::span<Parameter> params, double bound) {
    for (auto& p : params) {
        std::vector<double> w(p.value.data().begin(), p.value.data().end());
        for (double& v : w) v = std::clamp(v, -bound, bound);
        p.value = Tensor(p.value.shape(), std::move(w));
    }
}

// ---------------------------------------------------------------------------
// Gradient check

double relative_error(double analytic, double numeric, double floor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

namespace {

// MSE against fixed pseudo-random targets, summed over heads.
NodeId check_loss(Tape& tape, const std::vector<NodeId>& outs) {
    NodeId total = 0;
    for (std::size_t h = 0; h < outs.size(); ++h) {
        const Tensor& o = tape.value(outs[h]);
        rng::CounterRng gen(rng::mix(0x5EEDF00DULL, h));
        std::vector<double> target(o.numel());
        for (double& v : target) v = gen.uniform(-1.0, 1.0);
        const NodeId t = tape.constant(Tensor(o.shape(), std::move(target)));
        const NodeId l = ops::mse_loss(tape, outs[h], t);
        total = h == 0 ? l : ops::add(tape, total, l);
    }
    return total;
}

double loss_value(const Network& net, const Tensor& input, const ForwardMode& mode) {
    Tape tape;
    const auto params = bind_parameters(tape, net.parameters(), false);
    const NodeId x = tape.constant(input);
    return tape.value(check_loss(tape, net.forward(tape, x, params, mode))).item();
}

}  // namespace

GradientCheckReport gradient_check(Network& net, const Tensor& input, double tolerance, const ForwardMode& mode,
                                   double step) {
    GradientCheckReport report;
    if (mode.training && net.has_dropout()) {
        report.refused = true;
        report.reason = "dropout is active; finite differences would see a different mask";
        return report;
    }
    Tape tape;
    const auto pnodes = bind_parameters(tape, net.parameters(), true);
    const NodeId x = tape.constant(input);
    const NodeId loss = check_loss(tape, net.forward(tape, x, pnodes, mode));
    const Gradients grads = tape.backward(loss);

    auto params = net.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Tensor original = params[i].value;
        const Tensor& g = grads.at(pnodes[i]);
        ParamCheck pc{params[i].name, 0.0};
        std::vector<double> w(original.data().begin(), original.data().end());
        for (std::size_t k = 0; k < w.size(); ++k) {
            const double saved = w[k];
            w[k] = saved + step;
            params[i].value = Tensor(original.shape(), w);
            const double up = loss_value(net, input, mode);
            w[k] = saved - step;
            params[i].value = Tensor(original.shape(), w);
            const double down = loss_value(net, input, mode);
            w[k] = saved;
            const double numeric = (up - down) / (2.0 * step);
            pc.max_rel_error = std::max(pc.max_rel_error, relative_error(g[k], numeric));
        }
        params[i].value = original;
        report.max_rel_error = std::max(report.max_rel_error, pc.max_rel_error);
        report.params.push_back(std::move(pc));
    }
    report.passed = report.max_rel_error <= tolerance;
    return report;
}

// ---------------------------------------------------------------------------
// Persistence helpers

std::vector<double> flatten_parameters(std::span<const Parameter> params) {
    std::vector<double> flat;
    for (const auto& p : params) flat.insert(flat.end(), p.value.data().begin(), p.value.data().end());
    return flat;
}

void assign_parameters(std::span<Parameter> params, std::span<const double> flat) {
    std::size_t total = 0;
    for (const auto& p : params) total += p.value.numel();
    if (total != flat.size())
        throw ValidationError("weight payload holds " + std::to_string(flat.size()) + " values, network needs " +
                              std::to_string(total));
    std::size_t off = 0;
    for (auto& p : params) {
        const std::size_t n = p.value.numel();
        p.value = Tensor(p.value.shape(), std::vector<double>(flat.begin() + off, flat.begin() + off + n));
        off += n;
    }
}

nlohmann::json describe_parameters(std::span<const Parameter> params) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : params) arr.push_back({{"name", p.name}, {"shape", p.value.shape()}});
    return arr;
}

}  // namespace fixsynth
