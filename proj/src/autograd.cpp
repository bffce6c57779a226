#include "edge/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "edge/errors.hpp"
#include "edge/kernels.hpp"

namespace edge {

Param& add_param(ParamMap& params, const std::string& name, Tensor init) {
    auto [it, inserted] = params.emplace(name, Param{name, std::move(init), {}, true});
    if (!inserted) throw ConfigError("duplicate parameter name: " + name);
    it->second.grad = Tensor::zeros(it->second.value.shape);
    return it->second;
}

Var Tape::constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, false, {}});
    return Var{static_cast<int>(nodes_.size() - 1)};
}

Var Tape::param(Param& p) {
    if (!p.trainable) return constant(p.value);
    Param* target = &p;
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{p.value, {}, true, [target, id](Tape& t) {
                              const Tensor& g = t.nodes_[static_cast<std::size_t>(id)].grad;
                              if (target->grad.data.size() != g.data.size()) target->zero_grad();
                              kernels::axpy(1.0, g.data, target->grad.data);
                          }});
    return Var{id};
}

Var Tape::make(Tensor value, bool requires_grad, Pullback pullback) {
    nodes_.push_back(Node{std::move(value), {}, requires_grad, requires_grad ? std::move(pullback) : Pullback{}});
    return Var{static_cast<int>(nodes_.size() - 1)};
}

Tensor& Tape::grad(Var v) {
    Node& n = nodes_.at(static_cast<std::size_t>(v.id));
    if (n.grad.data.size() != n.value.data.size()) n.grad = Tensor::zeros(n.value.shape);
    return n.grad;
}

void Tape::seed(Var v, const Tensor& g) {
    if (!requires_grad(v)) return;
    if (g.data.size() != value(v).data.size())
        throw ConfigError("gradient seed shape " + shape_str(g.shape) + " does not match " + shape_str(value(v).shape));
    kernels::axpy(1.0, g.data, grad(v).data);
}

void Tape::backward() {
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requires_grad || !n.pullback || n.grad.data.empty()) continue;
        n.pullback(*this);
    }
}

namespace ops {
namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (t.rank() != rank)
        throw ConfigError(std::string(op) + ": expected rank " + std::to_string(rank) + " input, got " + shape_str(t.shape));
}

std::vector<double> transpose(const double* src, std::size_t rows, std::size_t cols) {
    std::vector<double> out(rows * cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = src[r * cols + c];
    return out;
}

}  // namespace

Var linear(Tape& tape, Var x, Var weight, Var bias) {
    const Tensor& X = tape.value(x);
    const Tensor& W = tape.value(weight);
    require_rank(X, 2, "linear");
    require_rank(W, 2, "linear");
    const std::size_t N = static_cast<std::size_t>(X.dim(0)), D = static_cast<std::size_t>(X.dim(1));
    const std::size_t O = static_cast<std::size_t>(W.dim(0));
    if (static_cast<std::size_t>(W.dim(1)) != D)
        throw ConfigError("linear: input width " + std::to_string(D) + " vs weight " + shape_str(W.shape));
    Tensor Y({static_cast<int>(N), static_cast<int>(O)});
    kernels::gemm_nt(N, O, D, X.data.data(), D, W.data.data(), D, Y.data.data(), O, false);
    if (bias.valid()) {
        const Tensor& B = tape.value(bias);
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t o = 0; o < O; ++o) Y.data[n * O + o] += B.data[o];
    }
    const bool rg = tape.requires_grad(x) || tape.requires_grad(weight) || (bias.valid() && tape.requires_grad(bias));
    Var out{static_cast<int>(tape.size())};
    return tape.make(std::move(Y), rg, [=](Tape& t) {
        const Tensor& dY = t.grad(out);
        const Tensor& Xv = t.value(x);
        const Tensor& Wv = t.value(weight);
        if (t.requires_grad(weight)) {
            auto dYt = transpose(dY.data.data(), N, O);
            auto Xt = transpose(Xv.data.data(), N, D);
            kernels::gemm_nt(O, D, N, dYt.data(), N, Xt.data(), N, t.grad(weight).data.data(), D, true);
        }
        if (bias.valid() && t.requires_grad(bias)) {
            Tensor& dB = t.grad(bias);
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t o = 0; o < O; ++o) dB.data[o] += dY.data[n * O + o];
        }
        if (t.requires_grad(x)) {
            auto Wt = transpose(Wv.data.data(), O, D);
            kernels::gemm_nt(N, D, O, dY.data.data(), O, Wt.data(), O, t.grad(x).data.data(), D, true);
        }
    });
}

Var conv2d(Tape& tape, Var x, Var weight, Var bias, int kernel) {
    const Tensor& X = tape.value(x);
    const Tensor& W = tape.value(weight);
    require_rank(X, 4, "conv2d");
    if (kernel % 2 == 0) throw ConfigError("conv2d: kernel size must be odd");
    const int N = X.dim(0), C = X.dim(1), H = X.dim(2), Wd = X.dim(3);
    const int O = W.dim(0);
    const int pad = kernel / 2;
    const std::size_t KK = static_cast<std::size_t>(C) * kernel * kernel;
    const std::size_t HW = static_cast<std::size_t>(H) * Wd;
    if (W.rank() != 2 || static_cast<std::size_t>(W.dim(1)) != KK)
        throw ConfigError("conv2d: weight " + shape_str(W.shape) + " does not match input channels " + std::to_string(C));

    // im2col rows are output positions, columns are (c, ky, kx).
    auto cols = std::make_shared<std::vector<double>>(static_cast<std::size_t>(N) * HW * KK, 0.0);
    for (int n = 0; n < N; ++n) {
        const double* xs = X.data.data() + static_cast<std::size_t>(n) * C * HW;
        double* cs = cols->data() + static_cast<std::size_t>(n) * HW * KK;
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < Wd; ++xx) {
                double* row = cs + (static_cast<std::size_t>(y) * Wd + xx) * KK;
                std::size_t k = 0;
                for (int c = 0; c < C; ++c)
                    for (int ky = -pad; ky <= pad; ++ky)
                        for (int kx = -pad; kx <= pad; ++kx, ++k) {
                            const int sy = y + ky, sx = xx + kx;
                            if (sy >= 0 && sy < H && sx >= 0 && sx < Wd)
                                row[k] = xs[static_cast<std::size_t>(c) * HW + static_cast<std::size_t>(sy) * Wd + sx];
                        }
            }
    }
    Tensor Y({N, O, H, Wd});
    for (int n = 0; n < N; ++n)
        kernels::gemm_nt(static_cast<std::size_t>(O), HW, KK, W.data.data(), KK,
                         cols->data() + static_cast<std::size_t>(n) * HW * KK, KK,
                         Y.data.data() + static_cast<std::size_t>(n) * O * HW, HW, false);
    if (bias.valid()) {
        const Tensor& B = tape.value(bias);
        for (int n = 0; n < N; ++n)
            for (int o = 0; o < O; ++o) {
                double* ys = Y.data.data() + (static_cast<std::size_t>(n) * O + o) * HW;
                for (std::size_t i = 0; i < HW; ++i) ys[i] += B.data[static_cast<std::size_t>(o)];
            }
    }
    const bool rg = tape.requires_grad(x) || tape.requires_grad(weight) || (bias.valid() && tape.requires_grad(bias));
    Var out{static_cast<int>(tape.size())};
    return tape.make(std::move(Y), rg, [=](Tape& t) {
        const Tensor& dY = t.grad(out);
        const Tensor& Wv = t.value(weight);
        const bool gw = t.requires_grad(weight);
        const bool gx = t.requires_grad(x);
        std::vector<double> Wt;
        if (gx) Wt = transpose(Wv.data.data(), static_cast<std::size_t>(O), KK);
        std::vector<double> dcols(gx ? HW * KK : 0);
        for (int n = 0; n < N; ++n) {
            const double* dy = dY.data.data() + static_cast<std::size_t>(n) * O * HW;
            const double* cs = cols->data() + static_cast<std::size_t>(n) * HW * KK;
            if (gw) {
                auto colsT = transpose(cs, HW, KK);
                kernels::gemm_nt(static_cast<std::size_t>(O), KK, HW, dy, HW, colsT.data(), HW,
                                 t.grad(weight).data.data(), KK, true);
            }
            if (gx) {
                auto dyT = transpose(dy, static_cast<std::size_t>(O), HW);
                kernels::gemm_nt(HW, KK, static_cast<std::size_t>(O), dyT.data(), static_cast<std::size_t>(O),
                                 Wt.data(), static_cast<std::size_t>(O), dcols.data(), KK, false);
                double* dx = t.grad(x).data.data() + static_cast<std::size_t>(n) * C * HW;
                for (int y = 0; y < H; ++y)
                    for (int xx = 0; xx < Wd; ++xx) {
                        const double* row = dcols.data() + (static_cast<std::size_t>(y) * Wd + xx) * KK;
                        std::size_t k = 0;
                        for (int c = 0; c < C; ++c)
                            for (int ky = -pad; ky <= pad; ++ky)
                                for (int kx = -pad; kx <= pad; ++kx, ++k) {
                                    const int sy = y + ky, sx = xx + kx;
                                    if (sy >= 0 && sy < H && sx >= 0 && sx < Wd)
                                        dx[static_cast<std::size_t>(c) * HW + static_cast<std::size_t>(sy) * Wd + sx] += row[k];
                                }
                    }
            }
        }
        if (bias.valid() && t.requires_grad(bias)) {
            Tensor& dB = t.grad(bias);
            for (int n = 0; n < N; ++n)
                for (int o = 0; o < O; ++o) {
                    const double* dy = dY.data.data() + (static_cast<std::size_t>(n) * O + o) * HW;
                    double s = 0.0;
                    for (std::size_t i = 0; i < HW; ++i) s += dy[i];
                    dB.data[static_cast<std::size_t>(o)] += s;
                }
        }
    });
}

Var silu(Tape& tape, Var x) {
    const Tensor& X = tape.value(x);
    Tensor Y = X;
    for (double& v : Y.data) v = v / (1.0 + std::exp(-v));
    Var out{static_cast<int>(tape.size())};
    return tape.make(std::move(Y), tape.requires_grad(x), [=](Tape& t) {
        const Tensor& dY = t.grad(out);
        const Tensor& Xv = t.value(x);
        Tensor& dX = t.grad(x);
        for (std::size_t i = 0; i < Xv.data.size(); ++i) {
            const double s = 1.0 / (1.0 + std::exp(-Xv.data[i]));
            dX.data[i] += dY.data[i] * s * (1.0 + Xv.data[i] * (1.0 - s));
        }
    });
}

Var add(Tape& tape, Var a, Var b) {
    const Tensor& A = tape.value(a);
    const Tensor& B = tape.value(b);
    if (!A.same_shape(B)) throw ConfigError("add: shape mismatch " + shape_str(A.shape) + " vs " + shape_str(B.shape));
    Tensor Y = A;
    kernels::axpy(1.0, B.data, Y.data);
    Var out{static_cast<int>(tape.size())};
    return tape.make(std::move(Y), tape.requires_grad(a) || tape.requires_grad(b), [=](Tape& t) {
        const Tensor& dY = t.grad(out);
        if (t.requires_grad(a)) kernels::axpy(1.0, dY.data, t.grad(a).data);
        if (t.requires_grad(b)) kernels::axpy(1.0, dY.data, t.grad(b).data);
    });
}

Var add_channel(Tape& tape, Var x, Var v) {
    const Tensor& X = tape.value(x);
    const Tensor& V = tape.value(v);
    require_rank(X, 4, "add_channel");
    require_rank(V, 2, "add_channel");
    const int N = X.dim(0), C = X.dim(1);
    if (V.dim(0) != N || V.dim(1) != C)
        throw ConfigError("add_channel: " + shape_str(V.shape) + " does not broadcast onto " + shape_str(X.shape));
    const std::size_t HW = static_cast<std::size_t>(X.dim(2)) * X.dim(3);
    Tensor Y = X;
    for (std::size_t nc = 0; nc < static_cast<std::size_t>(N) * C; ++nc)
        for (std::size_t i = 0; i < HW; ++i) Y.data[nc * HW + i] += V.data[nc];
    Var out{static_cast<int>(tape.size())};
    return tape.make(std::move(Y), tape.requires_grad(x) || tape.requires_grad(v), [=](Tape& t) {
        const Tensor& dY = t.grad(out);
        if (t.requires_grad(x)) kernels::axpy(1.0, dY.data, t.grad(x).data);
        if (t.requires_grad(v)) {
            Tensor& dV = t.grad(v);
            for (std::size_t nc = 0; nc < static_cast<std::size_t>(N) * C; ++nc) {
                double s = 0.0;
                for (std::size_t i = 0; i < HW; ++i) s += dY.data[nc * HW + i];
                dV.data[nc] += s;
            }
        }
    });
}

Var avg_pool2(Tape& tape, Var x) {
    const Tensor& X = tape.value(x);
    require_rank(X, 4, "avg_pool2");
    const int N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
    if (H % 2 || W % 2) throw ConfigError("avg_pool2: odd spatial size " + shape_str(X.shape));
    const int h = H / 2, w = W / 2;
    Tensor Y({N, C, h, w});
    for (int nc = 0; nc < N * C; ++nc)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
                const double* s = X.data.data() + static_cast<std::size_t>(nc) * H * W;
                Y.data[(static_cast<std::size_t>(nc) * h + y) * w + xx] =
                    0.25 * (s[(2 * y) * W + 2 * xx] + s[(2 * y) * W + 2 * xx + 1] + s[(2 * y + 1) * W + 2 * xx] +
                            s[(2 * y + 1) * W + 2 * xx + 1]);
            }
    Var out{static_cast<int>(tape.size())};
    return tape.make(std::move(Y), tape.requires_grad(x), [=](Tape& t) {
        const Tensor& dY = t.grad(out);
        Tensor& dX = t.grad(x);
        for (int nc = 0; nc < N * C; ++nc)
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) {
                    const double g = 0.25 * dY.data[(static_cast<std::size_t>(nc) * h + y) * w + xx];
                    double* d = dX.data.data() + static_cast<std::size_t>(nc) * H * W;
                    d[(2 * y) * W + 2 * xx] += g;
                    d[(2 * y) * W + 2 * xx + 1] += g;
                    d[(2 * y + 1) * W + 2 * xx] += g;
                    d[(2 * y + 1) * W + 2 * xx + 1] += g;
                }
    });
}

Var upsample2(Tape& tape, Var x) {
    const Tensor& X = tape.value(x);
    require_rank(X, 4, "upsample2");
    const int N = X.dim(0), C = X.dim(1), h = X.dim(2), w = X.dim(3);
    const int H = 2 * h, W = 2 * w;
    Tensor Y({N, C, H, W});
    for (int nc = 0; nc < N * C; ++nc)
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx)
                Y.data[(static_cast<std::size_t>(nc) * H + y) * W + xx] =
                    X.data[(static_cast<std::size_t>(nc) * h + y / 2) * w + xx / 2];
    Var out{static_cast<int>(tape.size())};
    return tape.make(std::move(Y), tape.requires_grad(x), [=](Tape& t) {
        const Tensor& dY = t.grad(out);
        Tensor& dX = t.grad(x);
        for (int nc = 0; nc < N * C; ++nc)
            for (int y = 0; y < H; ++y)
                for (int xx = 0; xx < W; ++xx)
                    dX.data[(static_cast<std::size_t>(nc) * h + y / 2) * w + xx / 2] +=
                        dY.data[(static_cast<std::size_t>(nc) * H + y) * W + xx];
    });
}

Var concat_channels(Tape& tape, Var a, Var b) {
    const Tensor& A = tape.value(a);
    const Tensor& B = tape.value(b);
    require_rank(A, 4, "concat_channels");
    require_rank(B, 4, "concat_channels");
    if (A.dim(0) != B.dim(0) || A.dim(2) != B.dim(2) || A.dim(3) != B.dim(3))
        throw ConfigError("concat_channels: " + shape_str(A.shape) + " vs " + shape_str(B.shape));
    const int N = A.dim(0), Ca = A.dim(1), Cb = B.dim(1);
    const std::size_t HW = static_cast<std::size_t>(A.dim(2)) * A.dim(3);
    const std::size_t sa = Ca * HW, sb = Cb * HW;
    Tensor Y({N, Ca + Cb, A.dim(2), A.dim(3)});
    for (int n = 0; n < N; ++n) {
        std::copy_n(A.data.data() + n * sa, sa, Y.data.data() + n * (sa + sb));
        std::copy_n(B.data.data() + n * sb, sb, Y.data.data() + n * (sa + sb) + sa);
    }
    Var out{static_cast<int>(tape.size())};
    return tape.make(std::move(Y), tape.requires_grad(a) || tape.requires_grad(b), [=](Tape& t) {
        const Tensor& dY = t.grad(out);
        for (int n = 0; n < N; ++n) {
            const double* src = dY.data.data() + n * (sa + sb);
            if (t.requires_grad(a)) kernels::axpy(1.0, {src, sa}, {t.grad(a).data.data() + n * sa, sa});
            if (t.requires_grad(b)) kernels::axpy(1.0, {src + sa, sb}, {t.grad(b).data.data() + n * sb, sb});
        }
    });
}

Var pool_grid(Tape& tape, Var x, int grid) {
    const Tensor& X = tape.value(x);
    require_rank(X, 4, "pool_grid");
    const int N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
    if (grid < 1 || H % grid || W % grid)
        throw ConfigError("pool_grid: grid " + std::to_string(grid) + " does not divide " + shape_str(X.shape));
    const int ch = H / grid, cw = W / grid;
    const double inv = 1.0 / (ch * cw);
    const int F = C * grid * grid;
    Tensor Y({N, F});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
                for (int xx = 0; xx < W; ++xx) {
                    const int cell = (y / ch) * grid + xx / cw;
                    Y.data[static_cast<std::size_t>(n) * F + c * grid * grid + cell] +=
                        inv * X.data[((static_cast<std::size_t>(n) * C + c) * H + y) * W + xx];
                }
    Var out{static_cast<int>(tape.size())};
    return tape.make(std::move(Y), tape.requires_grad(x), [=](Tape& t) {
        const Tensor& dY = t.grad(out);
        Tensor& dX = t.grad(x);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < H; ++y)
                    for (int xx = 0; xx < W; ++xx) {
                        const int cell = (y / ch) * grid + xx / cw;
                        dX.data[((static_cast<std::size_t>(n) * C + c) * H + y) * W + xx] +=
                            inv * dY.data[static_cast<std::size_t>(n) * F + c * grid * grid + cell];
                    }
    });
}

Var flatten(Tape& tape, Var x) {
    const Tensor& X = tape.value(x);
    const int N = X.dim(0);
    Tensor Y({N, static_cast<int>(X.stride0())}, X.data);
    Var out{static_cast<int>(tape.size())};
    return tape.make(std::move(Y), tape.requires_grad(x), [=](Tape& t) {
        kernels::axpy(1.0, t.grad(out).data, t.grad(x).data);
    });
}

Var row_combine(Tape& tape, Var a, std::vector<double> ca, Var b, std::vector<double> cb) {
    const Tensor& A = tape.value(a);
    const Tensor& B = tape.value(b);
    if (!A.same_shape(B)) throw ConfigError("row_combine: shape mismatch " + shape_str(A.shape) + " vs " + shape_str(B.shape));
    const std::size_t N = A.rank() ? static_cast<std::size_t>(A.dim(0)) : 0;
    if (ca.size() != N || cb.size() != N) throw ConfigError("row_combine: one coefficient per row required");
    Tensor Y(A.shape);
    for (std::size_t n = 0; n < N; ++n) {
        kernels::axpy(ca[n], A.row(n), Y.row(n));
        kernels::axpy(cb[n], B.row(n), Y.row(n));
    }
    Var out{static_cast<int>(tape.size())};
    return tape.make(std::move(Y), tape.requires_grad(a) || tape.requires_grad(b),
                     [=, ca = std::move(ca), cb = std::move(cb)](Tape& t) {
                         const Tensor& dY = t.grad(out);
                         for (std::size_t n = 0; n < N; ++n) {
                             if (t.requires_grad(a)) kernels::axpy(ca[n], dY.row(n), t.grad(a).row(n));
                             if (t.requires_grad(b)) kernels::axpy(cb[n], dY.row(n), t.grad(b).row(n));
                         }
                     });
}

Var reshape(Tape& tape, Var x, std::vector<int> shape) {
    const Tensor& X = tape.value(x);
    if (shape_numel(shape) != X.numel())
        throw ConfigError("reshape " + shape_str(X.shape) + " -> " + shape_str(shape) + " changes the element count");
    Tensor Y(std::move(shape), X.data);
    Var out{static_cast<int>(tape.size())};
    return tape.make(std::move(Y), tape.requires_grad(x), [=](Tape& t) {
        kernels::axpy(1.0, t.grad(out).data, t.grad(x).data);
    });
}

Var embedding_mean(Tape& tape, Var table, const std::vector<std::vector<int>>& tokens) {
    const Tensor& E = tape.value(table);
    require_rank(E, 2, "embedding_mean");
    const int V = E.dim(0), D = E.dim(1);
    const int N = static_cast<int>(tokens.size());
    Tensor Y({N, D});
    for (int n = 0; n < N; ++n) {
        const auto& toks = tokens[static_cast<std::size_t>(n)];
        if (toks.empty()) throw ValidationError("embedding_mean: empty token list");
        const double inv = 1.0 / static_cast<double>(toks.size());
        for (int tok : toks) {
            if (tok < 0 || tok >= V) throw IndexError("token id " + std::to_string(tok) + " outside vocabulary");
            kernels::axpy(inv, E.row(static_cast<std::size_t>(tok)), Y.row(static_cast<std::size_t>(n)));
        }
    }
    Var out{static_cast<int>(tape.size())};
    return tape.make(std::move(Y), tape.requires_grad(table), [=](Tape& t) {
        const Tensor& dY = t.grad(out);
        Tensor& dE = t.grad(table);
        for (int n = 0; n < N; ++n) {
            const auto& toks = tokens[static_cast<std::size_t>(n)];
            const double inv = 1.0 / static_cast<double>(toks.size());
            for (int tok : toks) kernels::axpy(inv, dY.row(static_cast<std::size_t>(n)), dE.row(static_cast<std::size_t>(tok)));
        }
    });
}

}  // namespace ops
}  // namespace edge
