#pragma once

// Dense 64-bit tensors and a reverse-mode tape.
//
// A Tape records every primitive applied to it. Node ids are handed out in
// application order, so the recorded list is already a topological order and
// backward() is a single reverse sweep.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fixsynth {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape) noexcept;
std::string shape_to_string(const Shape& shape);

/// Immutable dense tensor. Copies share the underlying buffer.
class Tensor {
public:
    Tensor();
    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t numel() const noexcept { return data_->size(); }
    std::span<const double> data() const noexcept { return *data_; }
    double operator[](std::size_t i) const { return (*data_)[i]; }
    /// Value of a one-element tensor.
    double item() const;

    bool requires_grad() const noexcept { return requires_grad_; }
    Tensor with_requires_grad(bool flag) const;
    Tensor reshaped(Shape shape) const;

    bool bitwise_equal(const Tensor& other) const noexcept;

private:
    Shape shape_;
    std::shared_ptr<const std::vector<double>> data_;
    bool requires_grad_ = false;
};

enum class OpKind {
    linear,
    conv2d,
    conv1d,
    transposed_conv2d,
    upsample2d_nearest,
    upsample1d_nearest,
    leaky_relu,
    tanh,
    softplus,
    dropout,
    add,
    matmul,
    mse_loss,
    // Structural helpers: no arithmetic beyond a copy or a constant factor.
    reshape,
    scale,
    mean,
};

std::string_view op_name(OpKind kind) noexcept;
/// Parses an op name; throws ValidationError for anything outside the supported set.
OpKind parse_op(std::string_view name);

struct OpAttrs {
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t factor = 2;       // upsampling
    double slope = 0.2;           // leaky_relu
    double alpha = 1.0;           // scale
    double rate = 0.0;            // dropout probability
    bool training = false;        // dropout active only when true
    std::uint64_t mask_seed = 0;  // dropout mask key
    Shape shape;                  // reshape target
};

using NodeId = std::size_t;

/// Gradients produced by one backward sweep, indexed by node id.
class Gradients {
public:
    explicit Gradients(std::vector<std::optional<Tensor>> grads) : grads_(std::move(grads)) {}
    bool has(NodeId id) const noexcept { return id < grads_.size() && grads_[id].has_value(); }
    /// Gradient of the loss with respect to the node; zeros if the loss does not depend on it.
    const Tensor& at(NodeId id) const;

private:
    std::vector<std::optional<Tensor>> grads_;
};

class Tape {
public:
    /// A leaf input. Gradients are accumulated for it iff tensor.requires_grad().
    NodeId leaf(Tensor value);
    NodeId constant(Tensor value) { return leaf(value.with_requires_grad(false)); }

    NodeId apply(OpKind kind, std::span<const NodeId> inputs, const OpAttrs& attrs = {});
    NodeId apply(OpKind kind, std::initializer_list<NodeId> inputs, const OpAttrs& attrs = {}) {
        return apply(kind, std::span<const NodeId>(inputs.begin(), inputs.size()), attrs);
    }

    const Tensor& value(NodeId id) const;
    bool requires_grad(NodeId id) const;
    std::size_t size() const noexcept { return nodes_.size(); }
    /// Input ids of a recorded node (empty for leaves).
    std::span<const NodeId> inputs(NodeId id) const;

    /// Reverse sweep from a scalar loss. Consumes the tape: further apply/backward calls
    /// throw until reset().
    Gradients backward(NodeId loss);
    void reset();

private:
    struct Node {
        std::optional<OpKind> op;  // empty for leaves
        std::vector<NodeId> inputs;
        OpAttrs attrs;
        Tensor value;
        std::vector<double> saved;  // op-specific forward state (dropout mask)
        bool requires_grad = false;
    };

    void check_live() const;

    std::vector<Node> nodes_;
    bool consumed_ = false;
};

/// Tape-free evaluation of a single primitive.
Tensor evaluate(OpKind kind, std::span<const Tensor> inputs, const OpAttrs& attrs = {});

// Typed wrappers over Tape::apply.
namespace ops {
NodeId linear(Tape& t, NodeId x, NodeId w, NodeId b);
NodeId conv2d(Tape& t, NodeId x, NodeId w, NodeId b, std::size_t stride = 1, std::size_t padding = 0);
NodeId conv1d(Tape& t, NodeId x, NodeId w, NodeId b, std::size_t stride = 1, std::size_t padding = 0);
NodeId transposed_conv2d(Tape& t, NodeId x, NodeId w, NodeId b, std::size_t stride = 1,
                         std::size_t padding = 0);
NodeId upsample2d(Tape& t, NodeId x, std::size_t factor);
NodeId upsample1d(Tape& t, NodeId x, std::size_t factor);
NodeId leaky_relu(Tape& t, NodeId x, double slope = 0.2);
NodeId tanh(Tape& t, NodeId x);
NodeId softplus(Tape& t, NodeId x);
NodeId dropout(Tape& t, NodeId x, double rate, bool training, std::uint64_t mask_seed);
NodeId add(Tape& t, NodeId a, NodeId b);
NodeId matmul(Tape& t, NodeId a, NodeId b);
NodeId mse_loss(Tape& t, NodeId prediction, NodeId target);
NodeId reshape(Tape& t, NodeId x, Shape shape);
NodeId scale(Tape& t, NodeId x, double alpha);
NodeId mean(Tape& t, NodeId x);
NodeId sub(Tape& t, NodeId a, NodeId b);
}  // namespace ops

}  // namespace fixsynth
