#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "bseg/ops.hpp"

namespace bseg {

/// Flat registry of named parameters and buffers. Registration order is the
/// construction order of the model and defines the checkpoint/optimizer
/// ordering, so it must be deterministic.
class ParamStore {
public:
    Var param(const std::string& name, Tensor init);
    Var buffer(const std::string& name, Tensor init);

    const std::vector<std::pair<std::string, Var>>& params() const { return params_; }
    const std::vector<std::pair<std::string, Var>>& buffers() const { return buffers_; }

    Var find_param(const std::string& name) const;
    Var find_buffer(const std::string& name) const;

    /// Number of trainable scalars under a name prefix ("" = all).
    int64_t param_count(const std::string& prefix = "") const;
    /// Number of non-trainable scalars under a name prefix.
    int64_t buffer_count(const std::string& prefix = "") const;

    void zero_grads();

private:
    std::vector<std::pair<std::string, Var>> params_;
    std::vector<std::pair<std::string, Var>> buffers_;
};

namespace init {
/// Fan-in-scaled normal: std = gain / sqrt(fan_in). Convolutions use
/// gain = sqrt(2) (ReLU), linear projections gain = 1.
Tensor fan_in_normal(Shape shape, int64_t fan_in, double gain, std::mt19937_64& rng);
}  // namespace init

class Conv2d {
public:
    Conv2d(ParamStore& store, const std::string& name, int64_t cin, int64_t cout, int kernel,
           int stride, int pad, std::mt19937_64& rng, bool bias = true, int groups = 1);
    Var forward(const Var& x) const { return ops::conv2d(x, w_, b_, stride_, pad_, groups_); }

    Var w_, b_;  // b_ is null when constructed without bias
    int stride_, pad_, groups_;
};

class BatchNorm2d {
public:
    BatchNorm2d(ParamStore& store, const std::string& name, int64_t channels);
    Var forward(const Var& x, bool training) const {
        return ops::batchnorm2d(x, gamma_, beta_, rmean_->value, rvar_->value, training, momentum_, eps_);
    }

    Var gamma_, beta_;
    Var rmean_, rvar_;  // buffers, updated in place during training
    double momentum_ = 0.1;
    double eps_ = 1e-5;
};

class Linear {
public:
    Linear(ParamStore& store, const std::string& name, int64_t in, int64_t out, std::mt19937_64& rng,
           bool bias = true);
    Var forward(const Var& x) const { return ops::linear(x, w_, b_); }

    Var w_, b_;
};

class LayerNorm {
public:
    LayerNorm(ParamStore& store, const std::string& name, int64_t dim);
    Var forward(const Var& x) const { return ops::layernorm_lastdim(x, gamma_, beta_); }

    Var gamma_, beta_;
};

/// Conv (bias-free) -> BatchNorm -> ReLU, the workhorse block of the decoder.
class ConvBnRelu {
public:
    ConvBnRelu(ParamStore& store, const std::string& name, int64_t cin, int64_t cout, int kernel,
               int stride, int pad, std::mt19937_64& rng)
        : conv_(store, name + ".conv", cin, cout, kernel, stride, pad, rng, /*bias=*/false),
          bn_(store, name + ".bn", cout) {}
    Var forward(const Var& x, bool training) const {
        return ops::relu(bn_.forward(conv_.forward(x), training));
    }

    Conv2d conv_;
    BatchNorm2d bn_;
};

}  // namespace bseg
