#pragma once
// Minimal reverse-mode differentiation over Tensor values.
//
// A Tape records nodes in creation order; backward() walks them in reverse and
// calls each node's pullback. Parameters enter as leaves and accumulate their
// gradient into Param::grad, which the optimizer consumes.

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "edge/tensor.hpp"

namespace edge {

struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
    bool trainable = true;

    void zero_grad() {
        if (grad.data.size() != value.data.size()) grad = Tensor::zeros(value.shape);
        else grad.fill(0.0);
    }
};

// Parameters keyed by stable dotted names ("unet.conv_in.weight"); std::map keeps
// iteration order fixed for checkpoints and optimizers.
using ParamMap = std::map<std::string, Param>;

Param& add_param(ParamMap& params, const std::string& name, Tensor init);

class Tape;

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

class Tape {
public:
    using Pullback = std::function<void(Tape&)>;

    Var constant(Tensor value);
    // A frozen (non-trainable) parameter enters as a constant.
    Var param(Param& p);
    // Node whose gradient is pushed to its inputs by `pullback`.
    Var make(Tensor value, bool requires_grad, Pullback pullback);

    const Tensor& value(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).value; }
    bool requires_grad(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).requires_grad; }
    // Lazily zero-initialized gradient buffer.
    Tensor& grad(Var v);

    // Adds `g` into the gradient of `v`. Call for each loss output, then backward().
    void seed(Var v, const Tensor& g);
    void backward();

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        Pullback pullback;
    };
    std::vector<Node> nodes_;
};

namespace ops {

// x[N,D] · W[O,D]ᵀ + b[O]
Var linear(Tape& tape, Var x, Var weight, Var bias);
// Stride-1 "same" convolution. x[N,C,H,W], weight[O, C*k*k], bias[O], odd k.
Var conv2d(Tape& tape, Var x, Var weight, Var bias, int kernel);
Var silu(Tape& tape, Var x);
Var add(Tape& tape, Var a, Var b);
// x[N,C,H,W] + v[N,C] broadcast over space.
Var add_channel(Tape& tape, Var x, Var v);
Var avg_pool2(Tape& tape, Var x);
Var upsample2(Tape& tape, Var x);
Var concat_channels(Tape& tape, Var a, Var b);
// Adaptive average pooling of [N,C,H,W] to a grid×grid map, flattened to [N, C*grid*grid].
// grid = 1 is the global spatial mean.
Var pool_grid(Tape& tape, Var x, int grid);
Var flatten(Tape& tape, Var x);
// Row-wise a_n * ca[n] + b_n * cb[n] for same-shaped a, b.
Var row_combine(Tape& tape, Var a, std::vector<double> ca, Var b, std::vector<double> cb);
// Same data, new shape (element counts must agree).
Var reshape(Tape& tape, Var x, std::vector<int> shape);
// Rows of table[V,D] selected by each token list and averaged -> [N,D].
Var embedding_mean(Tape& tape, Var table, const std::vector<std::vector<int>>& tokens);

}  // namespace ops
}  // namespace edge
