#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "fpsr/nn/autograd.hpp"

namespace fpsr::nn {

/// Named parameters and buffers of one network, in registration order.
class ParamStore {
public:
    struct Entry {
        std::string name;
        Var var;
        bool trainable;
    };

    Var add_param(std::string name, Tensor init);
    Var add_buffer(std::string name, Tensor init);

    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<Var> trainable() const;
    std::size_t parameter_count() const;

    /// Frozen parameters receive no gradient; gradients still flow through them.
    void set_frozen(bool frozen);
    bool frozen() const { return frozen_; }

    void zero_grad();

private:
    std::vector<Entry> entries_;
    bool frozen_ = false;
};

class Conv2d {
public:
    Conv2d() = default;
    Conv2d(ParamStore& store, const std::string& name, int in_ch, int out_ch, int kernel,
           int stride, std::mt19937_64& rng, double gain = 2.0);

    Var operator()(const Var& x) const;
    int out_channels() const { return out_ch_; }

    Var weight;
    Var bias;

private:
    int out_ch_ = 0;
    int stride_ = 1;
    int pad_ = 0;
};

class BatchNorm2d {
public:
    BatchNorm2d() = default;
    BatchNorm2d(ParamStore& store, const std::string& name, int channels);

    /// Training mode normalizes with batch statistics and updates the running ones.
    Var operator()(const Var& x, bool training);

    Var gamma;
    Var beta;
    Var running_mean;
    Var running_var;
    double momentum = 0.1;
    double eps = 1e-5;
};

class PReLU {
public:
    PReLU() = default;
    PReLU(ParamStore& store, const std::string& name, int channels, double init = 0.25);

    Var operator()(const Var& x) const;

    Var alpha;
};

class Linear {
public:
    Linear() = default;
    Linear(ParamStore& store, const std::string& name, int in, int out, std::mt19937_64& rng,
           double gain = 2.0);

    Var operator()(const Var& x) const;

    Var weight;
    Var bias;
};

}  // namespace fpsr::nn
