#pragma once

#include <string>
#include <vector>

#include "fpsr/nn/layers.hpp"

namespace fpsr::nn {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.5;
    double beta2 = 0.9;
    double eps = 1e-8;
    /// Global gradient-norm clip; 0 disables.
    double clip_norm = 0.0;
};

/// Adam over the trainable entries of one ParamStore. Parameters without a gradient
/// (frozen, or unused this step) keep their value and moments.
class Adam {
public:
    Adam() = default;
    Adam(ParamStore& store, AdamConfig config);

    void step();
    void zero_grad();

    const AdamConfig& config() const { return config_; }
    void set_lr(double lr) { config_.lr = lr; }
    long steps() const { return t_; }
    void set_steps(long t) { t_ = t; }

    /// Moment tensors named "m/<param>" and "v/<param>".
    std::vector<std::pair<std::string, Tensor*>> state();

    /// Global L2 norm of the current gradients.
    double grad_norm() const;

private:
    struct Slot {
        std::string name;
        Var param;
        Tensor m;
        Tensor v;
    };
    AdamConfig config_;
    std::vector<Slot> slots_;
    long t_ = 0;
};

}  // namespace fpsr::nn
