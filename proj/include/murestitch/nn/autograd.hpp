#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "murestitch/nn/tensor.hpp"

namespace murestitch::nn {

// A value in the computation graph. Parameters are long-lived nodes with
// requires_grad set; intermediate nodes exist only while a graph is alive.
template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    Tensor<T>& grad_buffer() {
        if (grad.size() != value.size()) grad = Tensor<T>(value.shape);
        return grad;
    }
    void zero_grad() { grad = Tensor<T>(); }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

bool grad_enabled();

// Disables graph construction on this thread for the guard's lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

template <typename T>
Var<T> constant(Tensor<T> value) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    return node;
}

template <typename T>
Var<T> parameter(Tensor<T> value) {
    auto node = constant(std::move(value));
    node->requires_grad = true;
    return node;
}

// Wraps an op result. The backward closure is kept only when some parent
// participates in differentiation.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> fn) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    if (!grad_enabled()) return node;
    bool any = false;
    for (const auto& p : parents) any = any || p->requires_grad;
    if (!any) return node;
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward_fn = std::move(fn);
    return node;
}

// Reverse-mode sweep from a scalar root; gradients accumulate into every
// reachable node with requires_grad set.
template <typename T>
void backward(const Var<T>& root, T seed = T(1));

}  // namespace murestitch::nn
