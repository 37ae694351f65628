#include "cmc/nn/autograd.hpp"

#include <unordered_set>

namespace cmc::nn {

namespace {
thread_local bool t_grad_enabled = true;
}

void Node::accumulate(const Eigen::Ref<const Matrix>& g) {
    if (grad.size() == 0)
        grad = g;
    else
        grad += g;
}

Var constant(Matrix value, Shape3 grid) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->grid = grid;
    return n;
}

Var parameter(Matrix value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = true;
    return n;
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

void backward(std::span<const Var> roots) {
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    // Iterative post-order DFS.
    std::vector<std::pair<Node*, std::size_t>> stack;
    for (const auto& r : roots) {
        if (!r || !seen.insert(r.get()).second) continue;
        stack.emplace_back(r.get(), 0);
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->parents.size()) {
                Node* p = node->parents[next++].get();
                if (p && seen.insert(p).second) stack.emplace_back(p, 0);
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && n->grad.size() != 0) n->backward(*n);
    }
}

void backward(const Var& root, const Matrix& seed) {
    root->accumulate(seed);
    const Var roots[] = {root};
    backward(roots);
}

}  // namespace cmc::nn
