#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "bseg/tensor.hpp"

namespace bseg {

struct Node;
using Var = std::shared_ptr<Node>;

/// One value in a dynamically built computation graph. Graphs are rebuilt
/// every forward pass; leaves (parameters, inputs, buffers) persist across
/// passes. Gradients of leaves accumulate until explicitly zeroed, interior
/// nodes are fresh per graph.
struct Node {
    Tensor value;
    Tensor grad;  // allocated on first use, same shape as value
    bool requires_grad = false;
    bool is_leaf = true;
    std::vector<Var> parents;
    // Reads this->grad and accumulates into the parents' grads.
    std::function<void(Node&)> backward_fn;
    std::string name;

    Tensor& ensure_grad() {
        if (grad.empty()) grad = Tensor::zeros(value.shape());
        return grad;
    }
    void zero_grad() {
        if (!grad.empty()) grad.fill(0.0);
    }
};

/// Leaf holding trainable state.
Var make_param(Tensor value, std::string name = {});
/// Leaf that never receives gradients (inputs, targets, fixed kernels).
Var make_constant(Tensor value, std::string name = {});

/// Reverse-mode sweep from a scalar root. Interior grads are freshly
/// allocated per call; leaf grads accumulate.
void backward(const Var& root);

/// Builds an interior node; requires_grad is inherited from parents.
Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn);

/// Accumulate `g` into `p`'s gradient if it participates in the graph.
inline void accumulate_grad(const Var& p, const Tensor& g) {
    if (p->requires_grad) p->ensure_grad().add_(g);
}

}  // namespace bseg
