#include "bseg/layers.hpp"

#include <cmath>

namespace bseg {

Var ParamStore::param(const std::string& name, Tensor init) {
    if (find_param(name) || find_buffer(name)) throw ConfigError("duplicate parameter name: " + name);
    Var v = make_param(std::move(init), name);
    params_.emplace_back(name, v);
    return v;
}

Var ParamStore::buffer(const std::string& name, Tensor init) {
    if (find_param(name) || find_buffer(name)) throw ConfigError("duplicate buffer name: " + name);
    Var v = make_constant(std::move(init), name);
    buffers_.emplace_back(name, v);
    return v;
}

Var ParamStore::find_param(const std::string& name) const {
    for (const auto& [n, v] : params_)
        if (n == name) return v;
    return nullptr;
}

Var ParamStore::find_buffer(const std::string& name) const {
    for (const auto& [n, v] : buffers_)
        if (n == name) return v;
    return nullptr;
}

int64_t ParamStore::param_count(const std::string& prefix) const {
    int64_t n = 0;
    for (const auto& [name, v] : params_)
        if (name.rfind(prefix, 0) == 0) n += v->value.numel();
    return n;
}

int64_t ParamStore::buffer_count(const std::string& prefix) const {
    int64_t n = 0;
    for (const auto& [name, v] : buffers_)
        if (name.rfind(prefix, 0) == 0) n += v->value.numel();
    return n;
}

void ParamStore::zero_grads() {
    for (auto& [name, v] : params_) v->zero_grad();
}

namespace init {

Tensor fan_in_normal(Shape shape, int64_t fan_in, double gain, std::mt19937_64& rng) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, gain / std::sqrt(static_cast<double>(fan_in)));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = dist(rng);
    return t;
}

}  // namespace init

Conv2d::Conv2d(ParamStore& store, const std::string& name, int64_t cin, int64_t cout, int kernel,
               int stride, int pad, std::mt19937_64& rng, bool bias, int groups)
    : stride_(stride), pad_(pad), groups_(groups) {
    const int64_t cin_g = cin / groups;
    const int64_t fan_in = cin_g * kernel * kernel;
    w_ = store.param(name + ".w",
                     init::fan_in_normal({cout, cin_g, kernel, kernel}, fan_in, std::sqrt(2.0), rng));
    if (bias) b_ = store.param(name + ".b", Tensor::zeros({cout}));
}

BatchNorm2d::BatchNorm2d(ParamStore& store, const std::string& name, int64_t channels) {
    gamma_ = store.param(name + ".gamma", Tensor::full({channels}, 1.0));
    beta_ = store.param(name + ".beta", Tensor::zeros({channels}));
    rmean_ = store.buffer(name + ".running_mean", Tensor::zeros({channels}));
    rvar_ = store.buffer(name + ".running_var", Tensor::full({channels}, 1.0));
}

Linear::Linear(ParamStore& store, const std::string& name, int64_t in, int64_t out,
               std::mt19937_64& rng, bool bias) {
    w_ = store.param(name + ".w", init::fan_in_normal({out, in}, in, 1.0, rng));
    if (bias) b_ = store.param(name + ".b", Tensor::zeros({out}));
}

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, int64_t dim) {
    gamma_ = store.param(name + ".gamma", Tensor::full({dim}, 1.0));
    beta_ = store.param(name + ".beta", Tensor::zeros({dim}));
}

}  // namespace bseg
