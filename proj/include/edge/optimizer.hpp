#pragma once

#include <map>
#include <string>
#include <vector>

#include "edge/autograd.hpp"

namespace edge {

enum class OptimizerKind { rmsprop, adam };

OptimizerKind parse_optimizer(const std::string& name);
std::string optimizer_name(OptimizerKind kind);

// First-order adaptive optimizer over the trainable entries of a ParamMap.
// rmsprop carries no momentum term; adam is available for the evaluation towers.
class Optimizer {
public:
    Optimizer(OptimizerKind kind, double learning_rate);

    void zero_grad(ParamMap& params) const;
    // Updates every param with trainable == true; others are untouched.
    void step(ParamMap& params);

    double learning_rate() const { return lr_; }
    long steps() const { return t_; }

private:
    struct Slots {
        std::vector<double> m;
        std::vector<double> v;
    };
    OptimizerKind kind_;
    double lr_;
    double beta1_ = 0.9;
    double beta2_ = 0.999;
    double rms_decay_ = 0.99;
    double eps_ = 1e-8;
    long t_ = 0;
    std::map<std::string, Slots> slots_;
};

}  // namespace edge
