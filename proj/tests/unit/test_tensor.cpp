#include <cmath>
#include <vector>

#include "doctest.h"
#include "fixsynth/error.hpp"
#include "fixsynth/nn.hpp"
#include "fixsynth/rng.hpp"
#include "fixsynth/tensor.hpp"

using namespace fixsynth;

namespace {

Tensor random_tensor(Shape shape, rng::CounterRng& gen, double lo = -2.0, double hi = 2.0) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = gen.uniform(lo, hi);
    return Tensor(std::move(shape), std::move(v));
}

// Finite-difference oracle: perturbs each input entry, re-evaluates the op with the
// tape-free path and reduces with a weighted sum computed here, not by the engine.
struct OpCase {
    OpKind kind;
    std::vector<Tensor> inputs;
    OpAttrs attrs;
};

double weighted_sum(const Tensor& out, const std::vector<double>& weights) {
    double s = 0.0;
    for (std::size_t i = 0; i < out.numel(); ++i) s += out[i] * weights[i];
    return s;
}

double check_op(const OpCase& c, std::uint64_t seed) {
    const Tensor out0 = evaluate(c.kind, c.inputs, c.attrs);
    rng::CounterRng gen(seed);
    std::vector<double> weights(out0.numel());
    for (double& w : weights) w = gen.uniform(-1.0, 1.0);

    Tape tape;
    std::vector<NodeId> ids;
    for (const auto& t : c.inputs) ids.push_back(tape.leaf(t.with_requires_grad(true)));
    const NodeId y = tape.apply(c.kind, ids, c.attrs);
    const NodeId w = tape.constant(Tensor({1, out0.numel()}, weights));
    const NodeId flat = ops::reshape(tape, y, {out0.numel(), 1});
    const NodeId loss = ops::matmul(tape, w, flat);
    const Gradients g = tape.backward(loss);

    double worst = 0.0;
    const double h = 1e-6;
    for (std::size_t i = 0; i < c.inputs.size(); ++i) {
        const Tensor& base = c.inputs[i];
        for (std::size_t k = 0; k < base.numel(); ++k) {
            auto perturbed = [&](double delta) {
                std::vector<Tensor> in = c.inputs;
                std::vector<double> d(base.data().begin(), base.data().end());
                d[k] += delta;
                in[i] = Tensor(base.shape(), std::move(d));
                return weighted_sum(evaluate(c.kind, in, c.attrs), weights);
            };
            const double numeric = (perturbed(h) - perturbed(-h)) / (2 * h);
            worst = std::max(worst, relative_error(g.at(ids[i])[k], numeric, 1e-4));
        }
    }
    return worst;
}

}  // namespace

TEST_CASE("tensor construction validates element count") {
    CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), ValidationError);
    const Tensor t({2, 3}, std::vector<double>(6, 1.5));
    CHECK(t.numel() == 6);
    CHECK(Tensor::scalar(3.0).item() == 3.0);
}

TEST_CASE("primitive forward examples") {
    SUBCASE("leaky_relu") {
        OpAttrs a;
        a.slope = 0.2;
        const Tensor x = Tensor::scalar(-1.0);
        CHECK(evaluate(OpKind::leaky_relu, std::vector{x}, a).item() == doctest::Approx(-0.2).epsilon(1e-15));
    }
    SUBCASE("upsample2d nearest") {
        const Tensor x({2, 2}, {1, 2, 3, 4});
        OpAttrs a;
        a.factor = 2;
        const Tensor y = evaluate(OpKind::upsample2d_nearest, std::vector{x}, a);
        CHECK(y.shape() == Shape{4, 4});
        const std::vector<double> want{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
        CHECK(std::vector<double>(y.data().begin(), y.data().end()) == want);
    }
    SUBCASE("identity 1x1 convolution") {
        rng::CounterRng gen(3);
        const Tensor x = random_tensor({2, 1, 5, 5}, gen);
        const Tensor w({1, 1, 1, 1}, {1.0});
        const Tensor b({1}, {0.0});
        const Tensor y = evaluate(OpKind::conv2d, std::vector{x, w, b});
        CHECK(y.bitwise_equal(x));
    }
    SUBCASE("conv1d padding keeps length") {
        rng::CounterRng gen(4);
        const Tensor x = random_tensor({1, 2, 8}, gen);
        const Tensor w = random_tensor({3, 2, 3}, gen);
        const Tensor b = random_tensor({3}, gen);
        OpAttrs a;
        a.padding = 1;
        CHECK(evaluate(OpKind::conv1d, std::vector{x, w, b}, a).shape() == Shape{1, 3, 8});
    }
    SUBCASE("transposed conv doubles spatial size with k4 s2 p1") {
        rng::CounterRng gen(5);
        const Tensor x = random_tensor({1, 2, 4, 4}, gen);
        const Tensor w = random_tensor({2, 3, 4, 4}, gen);
        const Tensor b = random_tensor({3}, gen);
        OpAttrs a;
        a.stride = 2;
        a.padding = 1;
        CHECK(evaluate(OpKind::transposed_conv2d, std::vector{x, w, b}, a).shape() == Shape{1, 3, 8, 8});
    }
}

TEST_CASE("transposed convolution is the adjoint of convolution") {
    // <conv(x), y> == <x, tconv(y)> for matching weights and no bias.
    rng::CounterRng gen(11);
    const Tensor x = random_tensor({2, 3, 7, 7}, gen);
    const Tensor w = random_tensor({4, 3, 3, 3}, gen);
    const Tensor zb3 = Tensor::zeros({3}), zb4 = Tensor::zeros({4});
    OpAttrs a;
    a.stride = 2;
    a.padding = 1;
    const Tensor cx = evaluate(OpKind::conv2d, std::vector{x, w, zb4}, a);
    const Tensor y = random_tensor(cx.shape(), gen);
    // conv weight [Cout, Cin, k, k] doubles as tconv weight [Cin', Cout'] with Cin'=4, Cout'=3
    const Tensor ty = evaluate(OpKind::transposed_conv2d, std::vector{y, w, zb3}, a);
    REQUIRE(ty.shape() == x.shape());
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < cx.numel(); ++i) lhs += cx[i] * y[i];
    for (std::size_t i = 0; i < x.numel(); ++i) rhs += x[i] * ty[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("shape errors are descriptive") {
    const Tensor a({2, 3}, std::vector<double>(6));
    const Tensor b({2, 2}, std::vector<double>(4));
    CHECK_THROWS_WITH_AS(evaluate(OpKind::matmul, std::vector{a, b}), doctest::Contains("inner dimensions"),
                         ValidationError);
    CHECK_THROWS_AS(evaluate(OpKind::add, std::vector{a, b}), ValidationError);
    CHECK_THROWS_AS(parse_op("softmax"), ValidationError);
    OpAttrs zero_stride;
    zero_stride.stride = 0;
    const Tensor x({1, 1, 4, 4}, std::vector<double>(16));
    const Tensor w({1, 1, 3, 3}, std::vector<double>(9));
    CHECK_THROWS_AS(evaluate(OpKind::conv2d, std::vector{x, w}, zero_stride), ValidationError);
}

TEST_CASE("backward examples") {
    SUBCASE("x*x at 3") {
        Tape tape;
        const NodeId x = tape.leaf(Tensor({1, 1}, {3.0}, true));
        const NodeId y = ops::matmul(tape, x, x);
        CHECK(tape.backward(y).at(x)[0] == doctest::Approx(6.0));
    }
    SUBCASE("mse gradient") {
        Tape tape;
        const NodeId yh = tape.leaf(Tensor({2}, {1.0, 2.0}, true));
        const NodeId y = tape.constant(Tensor({2}, {0.0, 0.0}));
        const NodeId l = ops::mse_loss(tape, yh, y);
        CHECK(tape.value(l).item() == doctest::Approx(2.5));
        const Gradients g = tape.backward(l);
        CHECK(g.at(yh)[0] == doctest::Approx(1.0));
        CHECK(g.at(yh)[1] == doctest::Approx(2.0));
    }
    SUBCASE("non-scalar loss rejected; tape is consumed") {
        Tape tape;
        const NodeId x = tape.leaf(Tensor({2}, {1.0, 2.0}, true));
        const NodeId y = ops::tanh(tape, x);
        CHECK_THROWS_AS(tape.backward(y), ValidationError);
        const NodeId m = ops::mean(tape, y);
        (void)tape.backward(m);
        CHECK_THROWS_AS(tape.backward(m), ValidationError);
        tape.reset();
        CHECK(tape.size() == 0);
    }
}

TEST_CASE("tape records in topological order") {
    Tape tape;
    const NodeId a = tape.leaf(Tensor({2, 2}, {1, 2, 3, 4}, true));
    const NodeId b = ops::tanh(tape, a);
    const NodeId c = ops::add(tape, a, b);
    const NodeId d = ops::mean(tape, ops::leaky_relu(tape, c));
    for (NodeId id = 0; id <= d; ++id)
        for (NodeId in : tape.inputs(id)) CHECK(in < id);
}

TEST_CASE("every primitive matches finite differences on random inputs") {
    rng::CounterRng gen(2024);
    int cases = 0;
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t bsz = 1 + gen.below(2), c1 = 1 + gen.below(3), c2 = 1 + gen.below(3);
        const std::size_t hw = 3 + gen.below(4), k = 1 + gen.below(3), s = 1 + gen.below(2), p = gen.below(2);
        const std::size_t f = 1 + gen.below(3), len = 4 + gen.below(5);
        std::vector<OpCase> cs;
        {
            OpCase c{OpKind::linear, {random_tensor({bsz, c1 + 2}, gen), random_tensor({c2, c1 + 2}, gen),
                                      random_tensor({c2}, gen)}, {}};
            cs.push_back(c);
        }
        {
            OpAttrs a;
            a.stride = s;
            a.padding = p;
            cs.push_back({OpKind::conv2d,
                          {random_tensor({bsz, c1, hw, hw}, gen), random_tensor({c2, c1, k, k}, gen),
                           random_tensor({c2}, gen)},
                          a});
            cs.push_back({OpKind::conv1d,
                          {random_tensor({bsz, c1, len}, gen), random_tensor({c2, c1, k}, gen),
                           random_tensor({c2}, gen)},
                          a});
            OpAttrs ta;
            ta.stride = s;
            ta.padding = std::min<std::size_t>(p, k - 1);
            cs.push_back({OpKind::transposed_conv2d,
                          {random_tensor({bsz, c1, hw, hw}, gen), random_tensor({c1, c2, k, k}, gen),
                           random_tensor({c2}, gen)},
                          ta});
        }
        {
            OpAttrs a;
            a.factor = f;
            cs.push_back({OpKind::upsample2d_nearest, {random_tensor({bsz, c1, hw, hw}, gen)}, a});
            cs.push_back({OpKind::upsample1d_nearest, {random_tensor({bsz, c1, len}, gen)}, a});
        }
        {
            OpAttrs a;
            a.slope = 0.2;
            cs.push_back({OpKind::leaky_relu, {random_tensor({bsz, len}, gen)}, a});
            cs.push_back({OpKind::tanh, {random_tensor({bsz, len}, gen)}, {}});
            cs.push_back({OpKind::softplus, {random_tensor({bsz, len}, gen)}, {}});
            OpAttrs d;
            d.rate = 0.3;
            d.training = true;
            d.mask_seed = trial;
            cs.push_back({OpKind::dropout, {random_tensor({bsz, len}, gen)}, d});
            cs.push_back({OpKind::add, {random_tensor({bsz, len}, gen), random_tensor({bsz, len}, gen)}, {}});
            cs.push_back({OpKind::matmul, {random_tensor({c1, len}, gen), random_tensor({len, c2}, gen)}, {}});
            cs.push_back({OpKind::mse_loss, {random_tensor({bsz, len}, gen), random_tensor({bsz, len}, gen)}, {}});
            OpAttrs sc;
            sc.alpha = -0.7;
            cs.push_back({OpKind::scale, {random_tensor({bsz, len}, gen)}, sc});
            cs.push_back({OpKind::mean, {random_tensor({bsz, len}, gen)}, {}});
        }
        for (const auto& c : cs) {
            const double err = check_op(c, 77 + cases);
            INFO("op ", op_name(c.kind), " trial ", trial);
            CHECK(err <= 1e-4);
            worst = std::max(worst, err);
            ++cases;
        }
    }
    CHECK(cases >= 100);
    MESSAGE("worst relative error " << worst);
}

TEST_CASE("dropout") {
    const Tensor x({1, 1000}, std::vector<double>(1000, 1.0));
    OpAttrs eval;
    eval.rate = 0.5;
    CHECK(evaluate(OpKind::dropout, std::vector{x}, eval).bitwise_equal(x));
    OpAttrs train = eval;
    train.training = true;
    train.mask_seed = 9;
    const Tensor a = evaluate(OpKind::dropout, std::vector{x}, train);
    const Tensor b = evaluate(OpKind::dropout, std::vector{x}, train);
    CHECK(a.bitwise_equal(b));
    std::size_t zeros = 0;
    for (double v : a.data()) {
        CHECK((v == 0.0 || v == 2.0));
        zeros += v == 0.0;
    }
    CHECK(zeros > 400);
    CHECK(zeros < 600);
}

TEST_CASE("adam") {
    SUBCASE("first step moves by about lr against the gradient sign") {
        std::vector<Parameter> p{{"w", Tensor({1}, {0.5})}};
        AdamState st(AdamConfig{}, p);
        adam_step(st, p, std::vector{Tensor({1}, {1.0})});
        CHECK(p[0].value[0] - 0.5 == doctest::Approx(-1e-3).epsilon(1e-6));
        CHECK(st.step() == 1);
    }
    SUBCASE("zero gradient leaves parameters unchanged") {
        std::vector<Parameter> p{{"w", Tensor({3}, {0.1, -0.2, 0.3})}};
        AdamState st(AdamConfig{}, p);
        adam_step(st, p, std::vector{Tensor::zeros({3})});
        CHECK(p[0].value.bitwise_equal(Tensor({3}, {0.1, -0.2, 0.3})));
    }
    SUBCASE("two steps follow the hand recurrence") {
        // lr 0.1, g 0.5 constant. Step 1: m=0.05 v=0.00025 mhat=0.5 vhat=0.25.
        // Step 2: m=0.095 v=0.00049975, bias corrections 0.19 and 0.001999 give mhat=0.5 vhat=0.25 again.
        std::vector<Parameter> p{{"w", Tensor({1}, {1.0})}};
        AdamConfig cfg;
        cfg.lr = 0.1;
        AdamState st(cfg, p);
        adam_step(st, p, std::vector{Tensor({1}, {0.5})});
        const double step = 0.1 * 0.5 / (0.5 + 1e-8);
        CHECK(p[0].value[0] == doctest::Approx(1.0 - step).epsilon(1e-13));
        adam_step(st, p, std::vector{Tensor({1}, {0.5})});
        const double m2 = 0.095 / 0.19, v2 = 0.00049975 / 0.001999;
        CHECK(p[0].value[0] == doctest::Approx(1.0 - step - 0.1 * m2 / (std::sqrt(v2) + 1e-8)).epsilon(1e-13));
    }
    SUBCASE("non-finite gradient names the parameter") {
        std::vector<Parameter> p{{"gen.0.linear.weight", Tensor({1}, {1.0})}};
        AdamState st(AdamConfig{}, p);
        CHECK_THROWS_WITH_AS(adam_step(st, p, std::vector{Tensor({1}, {NAN})}),
                             doctest::Contains("gen.0.linear.weight"), NumericalError);
        CHECK(p[0].value[0] == 1.0);
    }
}

TEST_CASE("gradient_check") {
    rng::CounterRng gen(8);
    SUBCASE("linear only") {
        Sequential net({LayerSpec::linear(5, 3)}, 1, "lin");
        const auto r = gradient_check(net, random_tensor({4, 5}, gen), 1e-7);
        CHECK_FALSE(r.refused);
        CHECK(r.max_rel_error <= 1e-7);
        CHECK(r.passed);
    }
    SUBCASE("conv2d + leaky_relu stack") {
        Sequential net({LayerSpec::conv2d(1, 3, 3, 1, 1), LayerSpec::leaky_relu(), LayerSpec::conv2d(3, 2, 3, 2, 1),
                        LayerSpec::leaky_relu(), LayerSpec::reshape({2 * 3 * 3}), LayerSpec::linear(18, 2)},
                       2, "conv");
        const auto r = gradient_check(net, random_tensor({2, 1, 6, 6}, gen), 1e-4);
        CHECK(r.max_rel_error <= 1e-4);
    }
    SUBCASE("dropout left enabled is refused") {
        Sequential net({LayerSpec::linear(4, 4), LayerSpec::dropout(0.5)}, 3, "drop");
        ForwardMode train;
        train.training = true;
        const auto r = gradient_check(net, random_tensor({2, 4}, gen), 1e-4, train);
        CHECK(r.refused);
        CHECK(r.params.empty());
        CHECK_FALSE(gradient_check(net, random_tensor({2, 4}, gen), 1e-4).refused);
    }
}

TEST_CASE("sequential output shape and serialization of layer specs") {
    Sequential net({LayerSpec::linear(8, 32), LayerSpec::reshape({2, 4, 4}), LayerSpec::upsample2d(2),
                    LayerSpec::conv2d(2, 1, 3, 1, 1), LayerSpec::tanh()},
                   5, "g");
    CHECK(net.output_shape({8}) == Shape{1, 8, 8});
    const auto j = layers_to_json(net.layers());
    const auto back = layers_from_json(j);
    CHECK(layers_to_json(back) == j);
    Sequential again(back, 5, "g");
    CHECK(flatten_parameters(again.parameters()) == flatten_parameters(net.parameters()));
}
