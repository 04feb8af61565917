#include "murestitch/nn/autograd.hpp"

#include <sstream>
#include <unordered_set>

namespace murestitch::nn {

namespace {
thread_local bool g_grad_enabled = true;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
void backward(const Var<T>& root, T seed) {
    if (!root->requires_grad) return;
    // Iterative post-order DFS gives a topological order.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    auto& g = root->grad_buffer();
    for (auto& v : g.data) v += seed;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* node = *it;
        if (node->backward_fn && node->grad.size() == node->value.size()) node->backward_fn(*node);
    }
}

template void backward<float>(const Var<float>&, float);
template void backward<double>(const Var<double>&, double);

}  // namespace murestitch::nn
