#pragma once

// Define-by-run reverse-mode differentiation. Every differentiable op
// returns a Var whose node remembers its parents and a closure that pushes
// the node's gradient into them. The graph lives as long as the last Var
// referencing it, so the tape is rebuilt on each forward pass.

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "pcs/error.hpp"
#include "pcs/tensor.hpp"

namespace pcs {

namespace detail {

template <typename T>
struct Node {
    Tensor<T> value;
    std::optional<Tensor<T>> grad;
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    void accumulate(const Tensor<T>& g) {
        if (grad) {
            *grad += g;
        } else {
            grad = g;
        }
    }

    void accumulate(Tensor<T>&& g) {
        if (grad) {
            *grad += g;
        } else {
            grad = std::move(g);
        }
    }
};

// Fault injection for the gradient checker's negative control: the named op
// scales every gradient it emits by (1 + fault_scale).
inline std::string& injected_fault_op() {
    static std::string op;
    return op;
}

inline double& injected_fault_scale() {
    static double scale = 0.1;
    return scale;
}

template <typename T>
void apply_fault(const char* op, Tensor<T>& g) {
    const std::string& target = injected_fault_op();
    if (!target.empty() && target == op) {
        for (auto& v : g.data()) v *= T(1.0 + injected_fault_scale());
    }
}

}  // namespace detail

/// Scoped corruption of one op's backward pass (test fixture only).
class FaultInjection {
public:
    explicit FaultInjection(std::string op, double relative_error = 0.1) {
        detail::injected_fault_op() = std::move(op);
        detail::injected_fault_scale() = relative_error;
    }
    ~FaultInjection() { detail::injected_fault_op().clear(); }
    FaultInjection(const FaultInjection&) = delete;
    FaultInjection& operator=(const FaultInjection&) = delete;
};

/// Differentiable handle: a value plus an optional accumulated gradient.
/// Copies alias the same node.
template <typename T>
class Var {
public:
    Var() : node_(std::make_shared<detail::Node<T>>()) {}

    explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<detail::Node<T>>()) {
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
    }

    static Var parameter(Tensor<T> value) { return Var(std::move(value), true); }
    static Var constant(Tensor<T> value) { return Var(std::move(value), false); }

    const Tensor<T>& value() const noexcept { return node_->value; }
    /// Leaf values may be updated in place (optimizer steps).
    Tensor<T>& mutable_value() noexcept { return node_->value; }
    const Shape& shape() const noexcept { return node_->value.shape(); }

    bool requires_grad() const noexcept { return node_->requires_grad; }
    bool has_grad() const noexcept { return node_->grad.has_value(); }
    const Tensor<T>& grad() const {
        if (!node_->grad) throw ContractError("gradient requested for a node that has none");
        return *node_->grad;
    }
    void zero_grad() { node_->grad.reset(); }

    /// Same value, cut from the graph.
    Var detach() const { return Var(node_->value, false); }

    const char* op() const noexcept { return node_->op; }
    detail::Node<T>& node() const noexcept { return *node_; }
    const std::shared_ptr<detail::Node<T>>& node_ptr() const noexcept { return node_; }

    /// Builds the result node of an op. The closure runs only when the result
    /// has a gradient and at least one parent requires one.
    static Var make(Tensor<T> value, const char* op, std::vector<Var> parents,
                    std::function<void(detail::Node<T>&)> backward) {
        Var out(std::move(value), false);
        out.node_->op = op;
        for (const auto& p : parents) {
            out.node_->requires_grad = out.node_->requires_grad || p.requires_grad();
        }
        if (out.node_->requires_grad) {
            for (auto& p : parents) out.node_->parents.push_back(p.node_);
            out.node_->backward = std::move(backward);
        }
        return out;
    }

private:
    std::shared_ptr<detail::Node<T>> node_;
};

/// Populates gradients of every node reachable from `loss` that requires
/// one. Leaf gradients accumulate across calls until zero_grad().
template <typename T>
void backward(const Var<T>& loss) {
    using NodeT = detail::Node<T>;
    if (!(loss.shape() == kScalarShape)) {
        throw ContractError("backward: loss must have shape (1,1,1,1), got " + loss.shape().str());
    }
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<NodeT*> order;
    std::unordered_set<NodeT*> seen;
    std::vector<std::pair<NodeT*, std::size_t>> stack{{&loss.node(), 0}};
    seen.insert(&loss.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            NodeT* parent = node->parents[next++].get();
            if (parent->requires_grad && seen.insert(parent).second) stack.push_back({parent, 0});
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Intermediate gradients are reset so a second backward over a fresh
    // graph does not see stale values; leaves keep accumulating.
    for (NodeT* n : order) {
        if (!n->parents.empty()) n->grad.reset();
    }
    loss.node().accumulate(Tensor<T>::scalar(T(1)));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        NodeT* n = *it;
        if (n->backward && n->grad) n->backward(*n);
    }
}

}  // namespace pcs
