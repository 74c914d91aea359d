#include "fpsr/nn/layers.hpp"

#include <cmath>

#include "fpsr/nn/ops.hpp"

namespace fpsr::nn {

namespace {

Tensor he_normal(Shape shape, int fan_in, double gain, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, std::sqrt(gain / fan_in));
    Tensor t(shape);
    for (double& v : t.values()) v = dist(rng);
    return t;
}

}  // namespace

Var ParamStore::add_param(std::string name, Tensor init) {
    Var v(std::move(init), !frozen_);
    entries_.push_back({std::move(name), v, true});
    return v;
}

Var ParamStore::add_buffer(std::string name, Tensor init) {
    Var v(std::move(init), false);
    entries_.push_back({std::move(name), v, false});
    return v;
}

std::vector<Var> ParamStore::trainable() const {
    std::vector<Var> out;
    for (const auto& e : entries_)
        if (e.trainable) out.push_back(e.var);
    return out;
}

std::size_t ParamStore::parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_)
        if (e.trainable) n += e.var.value().size();
    return n;
}

void ParamStore::set_frozen(bool frozen) {
    frozen_ = frozen;
    for (auto& e : entries_) {
        if (!e.trainable) continue;
        Var v = e.var;
        v.set_requires_grad(!frozen);
        if (frozen) v.zero_grad();
    }
}

void ParamStore::zero_grad() {
    for (auto& e : entries_) {
        Var v = e.var;
        v.zero_grad();
    }
}

Conv2d::Conv2d(ParamStore& store, const std::string& name, int in_ch, int out_ch, int kernel,
               int stride, std::mt19937_64& rng, double gain)
    : out_ch_(out_ch), stride_(stride), pad_(kernel / 2) {
    weight = store.add_param(name + ".weight",
                             he_normal({out_ch, in_ch, kernel, kernel}, in_ch * kernel * kernel,
                                       gain, rng));
    bias = store.add_param(name + ".bias", Tensor({out_ch, 1, 1, 1}));
}

Var Conv2d::operator()(const Var& x) const { return ops::conv2d(x, weight, bias, stride_, pad_); }

BatchNorm2d::BatchNorm2d(ParamStore& store, const std::string& name, int channels) {
    gamma = store.add_param(name + ".gamma", Tensor({channels, 1, 1, 1}, 1.0));
    beta = store.add_param(name + ".beta", Tensor({channels, 1, 1, 1}, 0.0));
    running_mean = store.add_buffer(name + ".running_mean", Tensor({channels, 1, 1, 1}, 0.0));
    running_var = store.add_buffer(name + ".running_var", Tensor({channels, 1, 1, 1}, 1.0));
}

Var BatchNorm2d::operator()(const Var& x, bool training) {
    if (!training) {
        return ops::batch_norm_eval(x, gamma, beta, running_mean.value(), running_var.value(), eps);
    }
    Tensor mu;
    Tensor var;
    Var out = ops::batch_norm_train(x, gamma, beta, eps, &mu, &var);
    const double count = static_cast<double>(x.shape().n) * x.shape().plane();
    const double unbias = count > 1.0 ? count / (count - 1.0) : 1.0;
    Tensor& rm = running_mean.mutable_value();
    Tensor& rv = running_var.mutable_value();
    for (std::size_t c = 0; c < rm.size(); ++c) {
        rm[c] = (1.0 - momentum) * rm[c] + momentum * mu[c];
        rv[c] = (1.0 - momentum) * rv[c] + momentum * var[c] * unbias;
    }
    return out;
}

PReLU::PReLU(ParamStore& store, const std::string& name, int channels, double init) {
    alpha = store.add_param(name + ".alpha", Tensor({channels, 1, 1, 1}, init));
}

Var PReLU::operator()(const Var& x) const { return ops::prelu(x, alpha); }

Linear::Linear(ParamStore& store, const std::string& name, int in, int out, std::mt19937_64& rng,
               double gain) {
    weight = store.add_param(name + ".weight", he_normal({out, in, 1, 1}, in, gain, rng));
    bias = store.add_param(name + ".bias", Tensor({out, 1, 1, 1}));
}

Var Linear::operator()(const Var& x) const { return ops::linear(x, weight, bias); }

}  // namespace fpsr::nn
