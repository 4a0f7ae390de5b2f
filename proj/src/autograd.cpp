#include "bseg/autograd.hpp"

#include <unordered_set>

namespace bseg {

Var make_param(Tensor value, std::string name) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = true;
    n->is_leaf = true;
    n->name = std::move(name);
    return n;
}

Var make_constant(Tensor value, std::string name) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = false;
    n->is_leaf = true;
    n->name = std::move(name);
    return n;
}

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->is_leaf = false;
    for (const auto& p : parents) {
        if (p && p->requires_grad) {
            n->requires_grad = true;
            break;
        }
    }
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backward_fn = std::move(backward_fn);
    }
    return n;
}

namespace {

// Iterative post-order DFS; recursion would overflow on deep graphs.
void topo_sort(const Var& root, std::vector<Node*>& order) {
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next_child] = stack.back();
        if (next_child < node->parents.size()) {
            Node* child = node->parents[next_child].get();
            ++next_child;
            if (child && child->requires_grad && !visited.count(child)) {
                visited.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
}

}  // namespace

void backward(const Var& root) {
    check(root->value.numel() == 1, "backward: root must be a scalar, got " + shape_str(root->value.shape()));
    if (!root->requires_grad) return;
    std::vector<Node*> order;
    topo_sort(root, order);
    root->ensure_grad();
    root->grad.fill(1.0);
    // order is post-order (children first); walk it backwards.
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn) {
            n->ensure_grad();
            n->backward_fn(*n);
        }
    }
}

}  // namespace bseg
