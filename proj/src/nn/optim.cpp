#include "fpsr/nn/optim.hpp"

#include <cmath>

namespace fpsr::nn {

Adam::Adam(ParamStore& store, AdamConfig config) : config_(config) {
    for (const auto& e : store.entries()) {
        if (!e.trainable) continue;
        slots_.push_back({e.name, e.var, Tensor(e.var.shape()), Tensor(e.var.shape())});
    }
}

double Adam::grad_norm() const {
    double s = 0.0;
    for (const auto& slot : slots_) {
        if (!slot.param.has_grad()) continue;
        for (double g : slot.param.grad().values()) s += g * g;
    }
    return std::sqrt(s);
}

void Adam::step() {
    ++t_;
    double scale = 1.0;
    if (config_.clip_norm > 0.0) {
        const double norm = grad_norm();
        if (norm > config_.clip_norm) scale = config_.clip_norm / norm;
    }
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (auto& slot : slots_) {
        if (!slot.param.has_grad() || !slot.param.requires_grad()) continue;
        const Tensor& g = slot.param.grad();
        Tensor& p = slot.param.mutable_value();
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = g[i] * scale;
            slot.m[i] = b1 * slot.m[i] + (1.0 - b1) * gi;
            slot.v[i] = b2 * slot.v[i] + (1.0 - b2) * gi * gi;
            p[i] -= config_.lr * (slot.m[i] / c1) / (std::sqrt(slot.v[i] / c2) + config_.eps);
        }
    }
}

void Adam::zero_grad() {
    for (auto& slot : slots_) slot.param.zero_grad();
}

std::vector<std::pair<std::string, Tensor*>> Adam::state() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (auto& slot : slots_) {
        out.emplace_back("m/" + slot.name, &slot.m);
        out.emplace_back("v/" + slot.name, &slot.v);
    }
    return out;
}

}  // namespace fpsr::nn
