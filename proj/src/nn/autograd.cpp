#include "fpsr/nn/autograd.hpp"

#include <stdexcept>
#include <unordered_set>

namespace fpsr::nn {

Tensor& Node::ensure_grad() {
    if (grad.empty() && value.size() != 0) {
        grad = Tensor(value.shape(), 0.0);
    }
    return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

Var Var::make(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn) {
    Var out(std::move(value), false);
    bool needs = false;
    for (const auto& in : inputs) {
        if (in.defined() && in.requires_grad()) {
            needs = true;
            break;
        }
    }
    if (needs) {
        out.node_->requires_grad = true;
        out.node_->inputs.reserve(inputs.size());
        for (auto& in : inputs) {
            out.node_->inputs.push_back(in.node_);
        }
        out.node_->backward_fn = std::move(backward_fn);
    }
    return out;
}

namespace {

std::vector<Node*> topo_order(Node* root) {
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    // Iterative post-order DFS; graphs can be hundreds of nodes deep.
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    seen.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child && child->requires_grad && seen.insert(child).second) {
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

}  // namespace

void backward(const Var& output) {
    backward(output, Tensor(output.shape(), 1.0));
}

void backward(const Var& output, const Tensor& seed) {
    if (!output.requires_grad()) {
        throw std::logic_error("backward() on a value that does not require grad");
    }
    if (!(seed.shape() == output.shape())) {
        throw std::invalid_argument("backward seed shape mismatch");
    }
    Node* root = output.node();
    Tensor& g = root->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] += seed[i];
    }
    const auto order = topo_order(root);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && !n->grad.empty()) {
            n->backward_fn(*n);
        }
    }
    // Intermediate gradients are not needed once propagated; leaves keep theirs.
    for (Node* n : order) {
        if (n->backward_fn) {
            n->grad = Tensor();
        }
    }
}

Var detach(const Var& v) { return Var(v.value(), false); }

}  // namespace fpsr::nn
