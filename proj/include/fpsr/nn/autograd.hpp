#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "fpsr/nn/tensor.hpp"

namespace fpsr::nn {

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward_fn;

    /// Zero-initialized gradient buffer, allocated on first use.
    Tensor& ensure_grad();
};

/// Handle to a node of the dynamic computation graph. Copies share the node.
class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }
    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }

    bool has_grad() const { return !node_->grad.empty(); }
    const Tensor& grad() const { return node_->grad; }
    Tensor& grad() { return node_->ensure_grad(); }
    void zero_grad() { node_->grad = Tensor(); }

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& handle() const { return node_; }

    /// Builds a result node; keeps the inputs and closure only if any input needs a gradient.
    static Var make(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn);

private:
    std::shared_ptr<Node> node_;
};

/// Runs reverse-mode accumulation from a scalar (or seeded) output.
void backward(const Var& output);
void backward(const Var& output, const Tensor& seed);

/// Value copy cut off from the graph.
Var detach(const Var& v);

}  // namespace fpsr::nn
