#include "edge/optimizer.hpp"

#include <cmath>

#include "edge/errors.hpp"

namespace edge {

OptimizerKind parse_optimizer(const std::string& name) {
    if (name == "rmsprop") return OptimizerKind::rmsprop;
    if (name == "adam") return OptimizerKind::adam;
    throw ConfigError("unknown optimizer '" + name + "' (expected rmsprop or adam)");
}

std::string optimizer_name(OptimizerKind kind) { return kind == OptimizerKind::adam ? "adam" : "rmsprop"; }

Optimizer::Optimizer(OptimizerKind kind, double learning_rate) : kind_(kind), lr_(learning_rate) {
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
}

void Optimizer::zero_grad(ParamMap& params) const {
    for (auto& [name, p] : params) p.zero_grad();
}

void Optimizer::step(ParamMap& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& [name, p] : params) {
        if (!p.trainable || p.grad.data.size() != p.value.data.size()) continue;
        Slots& s = slots_[name];
        const std::size_t n = p.value.data.size();
        if (s.v.size() != n) s.v.assign(n, 0.0);
        if (kind_ == OptimizerKind::rmsprop) {
            for (std::size_t i = 0; i < n; ++i) {
                const double g = p.grad.data[i];
                s.v[i] = rms_decay_ * s.v[i] + (1.0 - rms_decay_) * g * g;
                p.value.data[i] -= lr_ * g / (std::sqrt(s.v[i]) + eps_);
            }
        } else {
            if (s.m.size() != n) s.m.assign(n, 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                const double g = p.grad.data[i];
                s.m[i] = beta1_ * s.m[i] + (1.0 - beta1_) * g;
                s.v[i] = beta2_ * s.v[i] + (1.0 - beta2_) * g * g;
                p.value.data[i] -= lr_ * (s.m[i] / bc1) / (std::sqrt(s.v[i] / bc2) + eps_);
            }
        }
    }
}

}  // namespace edge
