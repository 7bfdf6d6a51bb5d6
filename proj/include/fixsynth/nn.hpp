#pragma once

// Trainable building blocks on top of the tape: named parameters, a layer-list
// network, Adam, finite-difference gradient checking and weight persistence.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fixsynth/tensor.hpp"

namespace fixsynth {

struct Parameter {
    std::string name;
    Tensor value;
};

struct ForwardMode {
    bool training = false;          // enables dropout
    std::uint64_t dropout_seed = 0;  // mask key for this forward pass
};

/// Anything with parameters and a forward graph. Outputs are one node per head.
class Network {
public:
    virtual ~Network() = default;
    virtual std::span<Parameter> parameters() = 0;
    virtual std::span<const Parameter> parameters() const = 0;
    /// `params` are tape nodes bound to parameters(), in order.
    virtual std::vector<NodeId> forward(Tape& tape, NodeId input, std::span<const NodeId> params,
                                        const ForwardMode& mode) const = 0;
    virtual bool has_dropout() const = 0;
};

/// Adds every parameter to the tape as a leaf.
std::vector<NodeId> bind_parameters(Tape& tape, std::span<const Parameter> params, bool requires_grad);

/// Runs the network without recording gradients.
std::vector<Tensor> infer(const Network& net, const Tensor& input, const ForwardMode& mode = {});

struct LayerSpec {
    OpKind op = OpKind::linear;
    std::size_t in = 0;  // features (linear) or channels (conv)
    std::size_t out = 0;
    std::size_t kernel = 0;
    OpAttrs attrs;

    static LayerSpec linear(std::size_t in, std::size_t out);
    static LayerSpec conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                            std::size_t padding);
    static LayerSpec conv1d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                            std::size_t padding);
    static LayerSpec transposed_conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                                       std::size_t padding);
    static LayerSpec upsample2d(std::size_t factor);
    static LayerSpec upsample1d(std::size_t factor);
    static LayerSpec leaky_relu(double slope = 0.2);
    static LayerSpec tanh();
    static LayerSpec softplus();
    static LayerSpec dropout(double rate);
    /// Per-sample target shape; the batch axis is kept.
    static LayerSpec reshape(Shape per_sample);

    bool has_parameters() const noexcept;
};

nlohmann::json layers_to_json(std::span<const LayerSpec> layers);
std::vector<LayerSpec> layers_from_json(const nlohmann::json& j);

/// A straight chain of layers.
class Sequential final : public Network {
public:
    Sequential() = default;
    /// Weights drawn uniformly in ±1/sqrt(fan_in) from `seed`; biases start at zero.
    Sequential(std::vector<LayerSpec> layers, std::uint64_t seed, std::string name_prefix);

    std::span<Parameter> parameters() override { return params_; }
    std::span<const Parameter> parameters() const override { return params_; }
    std::vector<NodeId> forward(Tape& tape, NodeId input, std::span<const NodeId> params,
                                const ForwardMode& mode) const override;
    bool has_dropout() const override;

    /// Forward graph; `params` holds exactly this network's parameter nodes.
    NodeId build(Tape& tape, NodeId input, std::span<const NodeId> params, const ForwardMode& mode) const;

    const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
    /// Output shape for a given per-sample input shape (batch axis excluded).
    Shape output_shape(const Shape& per_sample_input) const;

private:
    std::vector<LayerSpec> layers_;
    std::vector<Parameter> params_;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class AdamState {
public:
    AdamState(AdamConfig config, std::span<const Parameter> params);
    const AdamConfig& config() const noexcept { return config_; }
    std::uint64_t step() const noexcept { return step_; }

private:
    friend void adam_step(AdamState&, std::span<Parameter>, std::span<const Tensor>);
    AdamConfig config_;
    std::uint64_t step_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

/// One bias-corrected Adam update in place. Throws NumericalError naming the first
/// parameter whose gradient is not finite; parameters are left untouched in that case.
void adam_step(AdamState& state, std::span<Parameter> params, std::span<const Tensor> grads);

/// Clamp every parameter entry into [-bound, bound].
void clip_parameters(std::span<Parameter> params, double bound);

struct ParamCheck {
    std::string name;
    double max_rel_error = 0.0;
};

struct GradientCheckReport {
    bool refused = false;
    std::string reason;
    std::vector<ParamCheck> params;
    double max_rel_error = 0.0;
    bool passed = false;
};

/// Compares reverse-mode gradients of a fixed random-target MSE on the network
/// outputs with central finite differences. Refuses when dropout would be active.
GradientCheckReport gradient_check(Network& net, const Tensor& input, double tolerance,
                                   const ForwardMode& mode = {}, double step = 1e-5);

/// |a - b| / max(|a|, |b|, floor).
double relative_error(double analytic, double numeric, double floor = 1e-6);

std::vector<double> flatten_parameters(std::span<const Parameter> params);
void assign_parameters(std::span<Parameter> params, std::span<const double> flat);
nlohmann::json describe_parameters(std::span<const Parameter> params);

}  // namespace fixsynth
