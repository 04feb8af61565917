#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "murestitch/nn/ops.hpp"

namespace murestitch::nn {

// Which trainable part of the composition model a parameter belongs to.
enum class ParamGroup { EncoderBackbone, Adaptor, Denoiser };

template <typename T>
struct NamedParam {
    std::string name;
    ParamGroup group;
    Var<T> var;
};

// Ordered registry of all trainable tensors; names are stable and used as
// checkpoint keys.
template <typename T>
class ParameterSet {
public:
    explicit ParameterSet(std::uint64_t seed) : rng_(seed) {}

    Var<T> uniform(const std::string& name, Shape shape, T bound, ParamGroup group) {
        std::uniform_real_distribution<double> dist(-static_cast<double>(bound), static_cast<double>(bound));
        Tensor<T> t(std::move(shape));
        for (auto& v : t.data) v = static_cast<T>(dist(rng_));
        return add(name, std::move(t), group);
    }

    Var<T> filled(const std::string& name, Shape shape, T value, ParamGroup group) {
        return add(name, Tensor<T>(std::move(shape), value), group);
    }

    Var<T> add(const std::string& name, Tensor<T> init, ParamGroup group) {
        if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
        index_[name] = params_.size();
        params_.push_back({name, group, parameter(std::move(init))});
        return params_.back().var;
    }

    const std::vector<NamedParam<T>>& params() const { return params_; }
    std::vector<NamedParam<T>>& params() { return params_; }

    const NamedParam<T>* find(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : &params_[it->second];
    }

    std::size_t count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.var->value.size();
        return n;
    }

    void zero_grad() {
        for (auto& p : params_) p.var->zero_grad();
    }

private:
    std::mt19937_64 rng_;
    std::vector<NamedParam<T>> params_;
    std::map<std::string, std::size_t> index_;
};

template <typename T>
struct Linear {
    Var<T> weight;
    Var<T> bias;

    Linear() = default;
    Linear(ParameterSet<T>& ps, const std::string& name, int in, int out, ParamGroup group, bool with_bias = true) {
        const T bound = T(1) / std::sqrt(static_cast<T>(in));
        weight = ps.uniform(name + ".weight", {out, in}, bound, group);
        if (with_bias) bias = ps.filled(name + ".bias", {out}, T(0), group);
    }
    Var<T> operator()(const Var<T>& x) const { return linear(x, weight, bias); }
};

template <typename T>
struct Conv2d {
    Var<T> weight;
    Var<T> bias;
    int stride = 1;

    Conv2d() = default;
    Conv2d(ParameterSet<T>& ps, const std::string& name, int in, int out, int kernel, int stride_, ParamGroup group)
        : stride(stride_) {
        const T bound = T(1) / std::sqrt(static_cast<T>(in * kernel * kernel));
        weight = ps.uniform(name + ".weight", {out, in, kernel, kernel}, bound, group);
        bias = ps.filled(name + ".bias", {out}, T(0), group);
    }
    Var<T> operator()(const Var<T>& x) const { return conv2d(x, weight, bias, stride); }
};

template <typename T>
struct GroupNorm {
    Var<T> gamma;
    Var<T> beta;
    int groups = 1;

    GroupNorm() = default;
    GroupNorm(ParameterSet<T>& ps, const std::string& name, int channels, int groups_, ParamGroup group)
        : groups(std::min(groups_, channels)) {
        while (channels % groups != 0) --groups;
        gamma = ps.filled(name + ".gamma", {channels}, T(1), group);
        beta = ps.filled(name + ".beta", {channels}, T(0), group);
    }
    Var<T> operator()(const Var<T>& x) const { return group_norm(x, gamma, beta, groups); }
};

template <typename T>
struct LayerNorm {
    Var<T> gamma;
    Var<T> beta;

    LayerNorm() = default;
    LayerNorm(ParameterSet<T>& ps, const std::string& name, int width, ParamGroup group) {
        gamma = ps.filled(name + ".gamma", {width}, T(1), group);
        beta = ps.filled(name + ".beta", {width}, T(0), group);
    }
    Var<T> operator()(const Var<T>& x) const { return layer_norm(x, gamma, beta); }
};

// Single-head scaled dot-product attention of queries [N, Dq] over a
// context [M, Dc]. Keys and values carry no positional term, so the output
// does not depend on the order of context rows.
template <typename T>
struct Attention {
    Linear<T> to_q, to_k, to_v, to_out;
    int width = 0;

    Attention() = default;
    Attention(ParameterSet<T>& ps, const std::string& name, int query_dim, int context_dim, int width_,
              ParamGroup group)
        : width(width_) {
        to_q = Linear<T>(ps, name + ".to_q", query_dim, width, group, false);
        to_k = Linear<T>(ps, name + ".to_k", context_dim, width, group, false);
        to_v = Linear<T>(ps, name + ".to_v", context_dim, width, group, false);
        to_out = Linear<T>(ps, name + ".to_out", width, query_dim, group);
    }

    Var<T> operator()(const Var<T>& queries, const Var<T>& context) const {
        auto q = to_q(queries);
        auto k = to_k(context);
        auto v = to_v(context);
        auto weights = softmax_rows(matmul_nt(q, k), T(1) / std::sqrt(static_cast<T>(width)));
        return to_out(matmul(weights, v));
    }
};

}  // namespace murestitch::nn
