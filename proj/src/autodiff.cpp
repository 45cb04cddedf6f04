#include "vtt/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vtt/errors.hpp"

namespace vtt::inline VTT_PRECISION_NS {
namespace ad {

// ---------------------------------------------------------------------------
// Tape

const Tensor& Var::value() const {
    if (!tape_) throw ContractError("use of an unbound Var");
    return tape_->nodes_[static_cast<std::size_t>(id_)].value;
}

bool Var::requires_grad() const {
    return tape_ && tape_->nodes_[static_cast<std::size_t>(id_)].requires_grad;
}

Var Tape::constant(Tensor value) { return leaf(std::move(value), false); }

Var Tape::leaf(Tensor value, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), "leaf", requires_grad, {}});
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(std::string_view op, Tensor value, std::vector<Var> parents, BackwardFn fn) {
    bool needs = false;
    for (const auto& p : parents) {
        if (!p.valid()) continue;
        if (&p.tape() != this) throw ContractError("op mixes Vars from different tapes");
        needs = needs || p.requires_grad();
    }
    nodes_.push_back(Node{std::move(value), op, needs, needs ? std::move(fn) : BackwardFn{}});
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

std::vector<Scalar>& Tape::grad_buffer(int id) {
    auto& g = grads_[static_cast<std::size_t>(id)];
    if (g.empty()) g.assign(nodes_[static_cast<std::size_t>(id)].value.numel(), Scalar(0));
    return g;
}

void Tape::accumulate(Var v, std::span<const Scalar> g) { accumulate_at(v, 0, g); }

void Tape::accumulate_at(Var v, std::size_t offset, std::span<const Scalar> g) {
    if (!v.valid() || !v.requires_grad()) return;
    auto& buf = grad_buffer(v.id());
    for (std::size_t i = 0; i < g.size(); ++i) buf[offset + i] += g[i];
}

void Tape::backward(Var root) {
    if (!root.valid() || &root.tape() != this) throw ContractError("backward root is not on this tape");
    if (root.value().numel() != 1) {
        throw ContractError("backward needs a scalar root, got " + shape_str(root.shape()));
    }
    grads_.assign(nodes_.size(), {});
    last_visits_ = 0;
    if (!root.requires_grad()) return;
    grads_[static_cast<std::size_t>(root.id())] = {Scalar(1)};
    for (int i = root.id(); i >= 0; --i) {
        auto& node = nodes_[static_cast<std::size_t>(i)];
        const auto& g = grads_[static_cast<std::size_t>(i)];
        if (g.empty()) continue;
        ++last_visits_;
        if (node.backward) node.backward(g, *this);
    }
}

Tensor Tape::grad(Var v) const {
    const auto& shape = v.shape();
    if (static_cast<std::size_t>(v.id()) >= grads_.size() || grads_[static_cast<std::size_t>(v.id())].empty()) {
        return Tensor::zeros(shape);
    }
    return Tensor(shape, grads_[static_cast<std::size_t>(v.id())]);
}

// ---------------------------------------------------------------------------
// helpers

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

void require_matrix(const Var& a, const char* op) {
    if (a.value().rank() != 2) {
        throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
    }
}

// C[m x n] += A[m x k] * B[k x n]. Four rows of A share each pass over a row
// of B, which roughly halves the loads compared with a plain row-by-row loop.
void gemm_acc(const Scalar* A, const Scalar* B, double* C, std::size_t m, std::size_t k, std::size_t n) {
    std::vector<double> bd(B, B + k * n);
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        double* __restrict c0 = C + i * n;
        double* __restrict c1 = c0 + n;
        double* __restrict c2 = c1 + n;
        double* __restrict c3 = c2 + n;
        for (std::size_t p = 0; p < k; ++p) {
            const double a0 = A[i * k + p], a1 = A[(i + 1) * k + p], a2 = A[(i + 2) * k + p], a3 = A[(i + 3) * k + p];
            const double* __restrict b = bd.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                const double bj = b[j];
                c0[j] += a0 * bj;
                c1[j] += a1 * bj;
                c2[j] += a2 * bj;
                c3[j] += a3 * bj;
            }
        }
    }
    for (; i < m; ++i) {
        double* __restrict c0 = C + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double a0 = A[i * k + p];
            const double* __restrict b = bd.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) c0[j] += a0 * b[j];
        }
    }
}

std::vector<Scalar> transposed(std::span<const Scalar> x, std::size_t rows, std::size_t cols) {
    std::vector<Scalar> t(rows * cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = x[r * cols + c];
    return t;
}

std::vector<Scalar> narrow(const std::vector<double>& v) { return std::vector<Scalar>(v.begin(), v.end()); }

std::size_t row_count(const Tensor& t) { return t.rank() == 1 ? 1 : t.numel() / t.shape().back(); }

template <typename F>
Var unary(const char* op, Var a, F&& fwd_bwd) {
    const auto& x = a.value().data();
    std::vector<Scalar> out(x.size());
    std::vector<Scalar> deriv(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) fwd_bwd(x[i], out[i], deriv[i]);
    auto d = std::make_shared<std::vector<Scalar>>(std::move(deriv));
    return a.tape().record(op, Tensor(a.shape(), std::move(out)), {a},
                           [a, d](std::span<const Scalar> g, Tape& tape) {
                               std::vector<Scalar> gx(g.size());
                               for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * (*d)[i];
                               tape.accumulate(a, gx);
                           });
}

}  // namespace

// ---------------------------------------------------------------------------
// elementwise

Var add(Var a, Var b) {
    require_same_shape(a, b, "add");
    const auto& x = a.value().data();
    const auto& y = b.value().data();
    std::vector<Scalar> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
    return a.tape().record("add", Tensor(a.shape(), std::move(out)), {a, b},
                           [a, b](std::span<const Scalar> g, Tape& tape) {
                               tape.accumulate(a, g);
                               tape.accumulate(b, g);
                           });
}

Var sub(Var a, Var b) {
    require_same_shape(a, b, "sub");
    const auto& x = a.value().data();
    const auto& y = b.value().data();
    std::vector<Scalar> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
    return a.tape().record("sub", Tensor(a.shape(), std::move(out)), {a, b},
                           [a, b](std::span<const Scalar> g, Tape& tape) {
                               tape.accumulate(a, g);
                               std::vector<Scalar> ng(g.begin(), g.end());
                               for (auto& v : ng) v = -v;
                               tape.accumulate(b, ng);
                           });
}

Var mul(Var a, Var b) {
    require_same_shape(a, b, "mul");
    const auto& x = a.value().data();
    const auto& y = b.value().data();
    std::vector<Scalar> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
    return a.tape().record("mul", Tensor(a.shape(), std::move(out)), {a, b},
                           [a, b](std::span<const Scalar> g, Tape& tape) {
                               const auto& xv = a.value().data();
                               const auto& yv = b.value().data();
                               std::vector<Scalar> ga(g.size()), gb(g.size());
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                   ga[i] = g[i] * yv[i];
                                   gb[i] = g[i] * xv[i];
                               }
                               tape.accumulate(a, ga);
                               tape.accumulate(b, gb);
                           });
}

Var scale(Var a, Scalar s) {
    return unary("scale", a, [s](Scalar x, Scalar& y, Scalar& d) {
        y = x * s;
        d = s;
    });
}

Var add_scalar(Var a, Scalar s) {
    return unary("add_scalar", a, [s](Scalar x, Scalar& y, Scalar& d) {
        y = x + s;
        d = 1;
    });
}

Var neg(Var a) { return scale(a, Scalar(-1)); }

Var relu(Var a) {
    return unary("relu", a, [](Scalar x, Scalar& y, Scalar& d) {
        y = x > 0 ? x : Scalar(0);
        d = x > 0 ? Scalar(1) : Scalar(0);
    });
}

Var gelu(Var a) {
    return unary("gelu", a, [](Scalar x, Scalar& y, Scalar& d) {
        constexpr Scalar c = Scalar(0.7978845608028654);  // sqrt(2/pi)
        constexpr Scalar k = Scalar(0.044715);
        const Scalar u = c * (x + k * x * x * x);
        // tanh through a single exp; exp overflow gives t = 1 as it should.
        const Scalar t = 1 - 2 / (std::exp(2 * u) + 1);
        y = Scalar(0.5) * x * (1 + t);
        d = Scalar(0.5) * (1 + t) + Scalar(0.5) * x * (1 - t * t) * c * (1 + 3 * k * x * x);
    });
}

Var silu(Var a) {
    return unary("silu", a, [](Scalar x, Scalar& y, Scalar& d) {
        const double s = 1.0 / (1.0 + std::exp(-static_cast<double>(x)));
        y = static_cast<Scalar>(x * s);
        d = static_cast<Scalar>(s * (1.0 + x * (1.0 - s)));
    });
}

// ---------------------------------------------------------------------------
// linear algebra

Var matmul(Var a, Var b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != k) {
        throw DimensionError("matmul: inner dims differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    std::vector<double> acc(m * n, 0.0);
    gemm_acc(a.value().data().data(), b.value().data().data(), acc.data(), m, k, n);
    return a.tape().record(
        "matmul", Tensor({m, n}, narrow(acc)), {a, b}, [a, b, m, k, n](std::span<const Scalar> g, Tape& tape) {
            if (a.requires_grad()) {
                std::vector<double> ga(m * k, 0.0);
                const auto bt = transposed(b.value().data(), k, n);
                gemm_acc(g.data(), bt.data(), ga.data(), m, n, k);
                tape.accumulate(a, narrow(ga));
            }
            if (b.requires_grad()) {
                std::vector<double> gb(k * n, 0.0);
                const auto at = transposed(a.value().data(), m, k);
                gemm_acc(at.data(), g.data(), gb.data(), k, m, n);
                tape.accumulate(b, narrow(gb));
            }
        });
}

Var transpose(Var a) {
    require_matrix(a, "transpose");
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    const auto& x = a.value().data();
    std::vector<Scalar> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
    return a.tape().record("transpose", Tensor({n, m}, std::move(out)), {a},
                           [a, m, n](std::span<const Scalar> g, Tape& tape) {
                               std::vector<Scalar> ga(m * n);
                               for (std::size_t i = 0; i < m; ++i)
                                   for (std::size_t j = 0; j < n; ++j) ga[i * n + j] = g[j * m + i];
                               tape.accumulate(a, ga);
                           });
}

Var linear(Var x, Var weight, Var bias) {
    require_matrix(weight, "linear");
    const std::size_t out_dim = weight.shape()[0], in_dim = weight.shape()[1];
    const auto& xt = x.value();
    if (xt.rank() > 2 || xt.shape().back() != in_dim) {
        throw DimensionError("linear: input " + shape_str(xt.shape()) + " does not match weight " +
                             shape_str(weight.shape()));
    }
    if (bias.valid() && bias.shape() != Shape{out_dim}) {
        throw DimensionError("linear: bias " + shape_str(bias.shape()) + " does not match out dim " +
                             std::to_string(out_dim));
    }
    const std::size_t rows = row_count(xt);
    std::vector<double> acc(rows * out_dim, 0.0);
    if (bias.valid()) {
        const auto& bv = bias.value().data();
        for (std::size_t t = 0; t < rows; ++t)
            for (std::size_t o = 0; o < out_dim; ++o) acc[t * out_dim + o] = bv[o];
    }
    const auto wt = transposed(weight.value().data(), out_dim, in_dim);
    gemm_acc(xt.data().data(), wt.data(), acc.data(), rows, in_dim, out_dim);
    Shape shape = xt.rank() == 1 ? Shape{out_dim} : Shape{rows, out_dim};
    return x.tape().record(
        "linear", Tensor(shape, narrow(acc)), {x, weight, bias},
        [x, weight, bias, rows, in_dim, out_dim](std::span<const Scalar> g, Tape& tape) {
            if (x.requires_grad()) {
                std::vector<double> gx(rows * in_dim, 0.0);
                gemm_acc(g.data(), weight.value().data().data(), gx.data(), rows, out_dim, in_dim);
                tape.accumulate(x, narrow(gx));
            }
            if (weight.requires_grad()) {
                std::vector<double> gw(out_dim * in_dim, 0.0);
                const auto gt = transposed(g, rows, out_dim);
                gemm_acc(gt.data(), x.value().data().data(), gw.data(), out_dim, rows, in_dim);
                tape.accumulate(weight, narrow(gw));
            }
            if (bias.valid() && bias.requires_grad()) {
                std::vector<Scalar> gb(out_dim);
                for (std::size_t o = 0; o < out_dim; ++o) {
                    double acc = 0.0;
                    for (std::size_t t = 0; t < rows; ++t) acc += g[t * out_dim + o];
                    gb[o] = static_cast<Scalar>(acc);
                }
                tape.accumulate(bias, gb);
            }
        });
}

// ---------------------------------------------------------------------------
// row-wise normalisations

Var softmax(Var x, Scalar temperature) {
    if (!(temperature > 0)) throw ParameterError("softmax temperature must be > 0");
    const auto& xt = x.value();
    const std::size_t rows = row_count(xt), n = xt.shape().back();
    const auto& xv = xt.data();
    std::vector<Scalar> out(xv.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const Scalar* xr = xv.data() + r * n;
        const double mx = *std::max_element(xr, xr + n);
        double total = 0.0;
        std::vector<double> e(n);
        for (std::size_t j = 0; j < n; ++j) {
            e[j] = std::exp((xr[j] - mx) / temperature);
            total += e[j];
        }
        for (std::size_t j = 0; j < n; ++j) out[r * n + j] = static_cast<Scalar>(e[j] / total);
    }
    Tensor y(xt.shape(), std::move(out));
    return x.tape().record("softmax", y, {x}, [x, y, rows, n, temperature](std::span<const Scalar> g, Tape& tape) {
        const auto& yv = y.data();
        std::vector<Scalar> gx(rows * n);
        for (std::size_t r = 0; r < rows; ++r) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += static_cast<double>(g[r * n + j]) * yv[r * n + j];
            for (std::size_t j = 0; j < n; ++j)
                gx[r * n + j] = static_cast<Scalar>(yv[r * n + j] * (g[r * n + j] - s) / temperature);
        }
        tape.accumulate(x, gx);
    });
}

Var log_softmax(Var x, Scalar temperature) {
    if (!(temperature > 0)) throw ParameterError("log_softmax temperature must be > 0");
    const auto& xt = x.value();
    const std::size_t rows = row_count(xt), n = xt.shape().back();
    const auto& xv = xt.data();
    std::vector<Scalar> out(xv.size());
    auto probs = std::make_shared<std::vector<double>>(xv.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const Scalar* xr = xv.data() + r * n;
        const double mx = *std::max_element(xr, xr + n) / static_cast<double>(temperature);
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) total += std::exp(xr[j] / static_cast<double>(temperature) - mx);
        const double lse = mx + std::log(total);
        for (std::size_t j = 0; j < n; ++j) {
            const double lp = xr[j] / static_cast<double>(temperature) - lse;
            out[r * n + j] = static_cast<Scalar>(lp);
            (*probs)[r * n + j] = std::exp(lp);
        }
    }
    return x.tape().record("log_softmax", Tensor(xt.shape(), std::move(out)), {x},
                           [x, probs, rows, n, temperature](std::span<const Scalar> g, Tape& tape) {
                               std::vector<Scalar> gx(rows * n);
                               for (std::size_t r = 0; r < rows; ++r) {
                                   double s = 0.0;
                                   for (std::size_t j = 0; j < n; ++j) s += g[r * n + j];
                                   for (std::size_t j = 0; j < n; ++j)
                                       gx[r * n + j] = static_cast<Scalar>(
                                           (g[r * n + j] - (*probs)[r * n + j] * s) / temperature);
                               }
                               tape.accumulate(x, gx);
                           });
}

Var layer_norm(Var x, Var gain, Var bias, Scalar eps) {
    const auto& xt = x.value();
    const std::size_t rows = row_count(xt), n = xt.shape().back();
    if (gain.shape() != Shape{n} || bias.shape() != Shape{n}) {
        throw DimensionError("layer_norm: gain/bias must be [" + std::to_string(n) + "]");
    }
    const auto& xv = xt.data();
    const auto& gv = gain.value().data();
    const auto& bv = bias.value().data();
    auto xhat = std::make_shared<std::vector<double>>(xv.size());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    std::vector<Scalar> out(xv.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const Scalar* xr = xv.data() + r * n;
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += xr[j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<double>(n);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (std::size_t j = 0; j < n; ++j) {
            const double h = (xr[j] - mu) * is;
            (*xhat)[r * n + j] = h;
            out[r * n + j] = static_cast<Scalar>(h * gv[j] + bv[j]);
        }
    }
    return x.tape().record(
        "layer_norm", Tensor(xt.shape(), std::move(out)), {x, gain, bias},
        [x, gain, bias, xhat, inv_std, rows, n](std::span<const Scalar> g, Tape& tape) {
            const auto& gv2 = gain.value().data();
            std::vector<Scalar> gx(rows * n);
            std::vector<double> gg(n, 0.0), gb(n, 0.0);
            std::vector<double> dh(n);
            for (std::size_t r = 0; r < rows; ++r) {
                double mean_dh = 0.0, mean_dh_h = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    const double gj = g[r * n + j];
                    const double h = (*xhat)[r * n + j];
                    gg[j] += gj * h;
                    gb[j] += gj;
                    dh[j] = gj * gv2[j];
                    mean_dh += dh[j];
                    mean_dh_h += dh[j] * h;
                }
                mean_dh /= static_cast<double>(n);
                mean_dh_h /= static_cast<double>(n);
                for (std::size_t j = 0; j < n; ++j) {
                    gx[r * n + j] = static_cast<Scalar>(
                        (*inv_std)[r] * (dh[j] - mean_dh - (*xhat)[r * n + j] * mean_dh_h));
                }
            }
            tape.accumulate(x, gx);
            std::vector<Scalar> ggs(gg.begin(), gg.end()), gbs(gb.begin(), gb.end());
            tape.accumulate(gain, ggs);
            tape.accumulate(bias, gbs);
        });
}

Var l2_normalize(Var x) {
    const auto& xt = x.value();
    const std::size_t rows = row_count(xt), n = xt.shape().back();
    const auto& xv = xt.data();
    auto norms = std::make_shared<std::vector<double>>(rows);
    std::vector<Scalar> out(xv.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double nr = norm2(xv.subspan(r * n, n));
        if (!(nr > 0.0)) throw DegenerateInputError("l2_normalize of a zero vector");
        (*norms)[r] = nr;
        for (std::size_t j = 0; j < n; ++j) out[r * n + j] = static_cast<Scalar>(xv[r * n + j] / nr);
    }
    Tensor y(xt.shape(), std::move(out));
    return x.tape().record("l2_normalize", y, {x}, [x, y, norms, rows, n](std::span<const Scalar> g, Tape& tape) {
        const auto& yv = y.data();
        std::vector<Scalar> gx(rows * n);
        for (std::size_t r = 0; r < rows; ++r) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += static_cast<double>(g[r * n + j]) * yv[r * n + j];
            for (std::size_t j = 0; j < n; ++j)
                gx[r * n + j] = static_cast<Scalar>((g[r * n + j] - yv[r * n + j] * s) / (*norms)[r]);
        }
        tape.accumulate(x, gx);
    });
}

// ---------------------------------------------------------------------------
// reductions and reshaping

Var mean(Var x, std::size_t axis) {
    const auto& xt = x.value();
    const auto& xv = xt.data();
    if (xt.rank() == 1) {
        if (axis != 0) throw DimensionError("mean: axis out of range for rank-1 input");
        const std::size_t n = xv.size();
        double acc = 0.0;
        for (auto v : xv) acc += v;
        return x.tape().record("mean", Tensor::scalar(static_cast<Scalar>(acc / static_cast<double>(n))), {x},
                               [x, n](std::span<const Scalar> g, Tape& tape) {
                                   std::vector<Scalar> gx(n, static_cast<Scalar>(g[0] / static_cast<double>(n)));
                                   tape.accumulate(x, gx);
                               });
    }
    require_matrix(x, "mean");
    const std::size_t rows = xt.shape()[0], cols = xt.shape()[1];
    if (axis == 0) {
        std::vector<double> acc(cols, 0.0);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) acc[c] += xv[r * cols + c];
        std::vector<Scalar> out(cols);
        for (std::size_t c = 0; c < cols; ++c) out[c] = static_cast<Scalar>(acc[c] / static_cast<double>(rows));
        return x.tape().record("mean", Tensor({cols}, std::move(out)), {x},
                               [x, rows, cols](std::span<const Scalar> g, Tape& tape) {
                                   std::vector<Scalar> gx(rows * cols);
                                   for (std::size_t r = 0; r < rows; ++r)
                                       for (std::size_t c = 0; c < cols; ++c)
                                           gx[r * cols + c] = static_cast<Scalar>(g[c] / static_cast<double>(rows));
                                   tape.accumulate(x, gx);
                               });
    }
    if (axis != 1) throw DimensionError("mean: axis out of range");
    std::vector<Scalar> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < cols; ++c) acc += xv[r * cols + c];
        out[r] = static_cast<Scalar>(acc / static_cast<double>(cols));
    }
    return x.tape().record("mean", Tensor({rows}, std::move(out)), {x},
                           [x, rows, cols](std::span<const Scalar> g, Tape& tape) {
                               std::vector<Scalar> gx(rows * cols);
                               for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t c = 0; c < cols; ++c)
                                       gx[r * cols + c] = static_cast<Scalar>(g[r] / static_cast<double>(cols));
                               tape.accumulate(x, gx);
                           });
}

Var sum(Var x) {
    const auto& xv = x.value().data();
    double acc = 0.0;
    for (auto v : xv) acc += v;
    const std::size_t n = xv.size();
    return x.tape().record("sum", Tensor::scalar(static_cast<Scalar>(acc)), {x},
                           [x, n](std::span<const Scalar> g, Tape& tape) {
                               std::vector<Scalar> gx(n, g[0]);
                               tape.accumulate(x, gx);
                           });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
    if (parts.empty()) throw ContractError("concat of no parts");
    const auto rank = parts[0].value().rank();
    for (const auto& p : parts) {
        if (p.value().rank() != rank) throw DimensionError("concat: mixed ranks");
    }
    Tape& tape = parts[0].tape();
    if (rank == 1) {
        if (axis != 0) throw DimensionError("concat: rank-1 parts only join along axis 0");
        std::vector<Scalar> out;
        std::vector<std::size_t> offsets;
        for (const auto& p : parts) {
            offsets.push_back(out.size());
            out.insert(out.end(), p.value().data().begin(), p.value().data().end());
        }
        const auto n = out.size();
        return tape.record("concat", Tensor({n}, std::move(out)), parts,
                           [parts, offsets](std::span<const Scalar> g, Tape& t) {
                               for (std::size_t i = 0; i < parts.size(); ++i)
                                   t.accumulate(parts[i], g.subspan(offsets[i], parts[i].value().numel()));
                           });
    }
    if (rank != 2) throw DimensionError("concat supports rank 1 and 2");
    if (axis == 0) {
        const std::size_t cols = parts[0].shape()[1];
        std::vector<Scalar> out;
        std::vector<std::size_t> offsets;
        for (const auto& p : parts) {
            if (p.shape()[1] != cols) throw DimensionError("concat axis 0: column counts differ");
            offsets.push_back(out.size());
            out.insert(out.end(), p.value().data().begin(), p.value().data().end());
        }
        const std::size_t rows = out.size() / cols;
        return tape.record("concat", Tensor({rows, cols}, std::move(out)), parts,
                           [parts, offsets](std::span<const Scalar> g, Tape& t) {
                               for (std::size_t i = 0; i < parts.size(); ++i)
                                   t.accumulate(parts[i], g.subspan(offsets[i], parts[i].value().numel()));
                           });
    }
    if (axis != 1) throw DimensionError("concat: axis out of range");
    const std::size_t rows = parts[0].shape()[0];
    std::size_t cols = 0;
    std::vector<std::size_t> col_offsets;
    for (const auto& p : parts) {
        if (p.shape()[0] != rows) throw DimensionError("concat axis 1: row counts differ");
        col_offsets.push_back(cols);
        cols += p.shape()[1];
    }
    std::vector<Scalar> out(rows * cols);
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const auto& v = parts[i].value().data();
        const std::size_t pc = parts[i].shape()[1];
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < pc; ++c) out[r * cols + col_offsets[i] + c] = v[r * pc + c];
    }
    return tape.record("concat", Tensor({rows, cols}, std::move(out)), parts,
                       [parts, col_offsets, rows, cols](std::span<const Scalar> g, Tape& t) {
                           for (std::size_t i = 0; i < parts.size(); ++i) {
                               if (!parts[i].requires_grad()) continue;
                               const std::size_t pc = parts[i].shape()[1];
                               std::vector<Scalar> gp(rows * pc);
                               for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t c = 0; c < pc; ++c)
                                       gp[r * pc + c] = g[r * cols + col_offsets[i] + c];
                               t.accumulate(parts[i], gp);
                           }
                       });
}

Var slice(Var x, std::size_t axis, std::size_t start, std::size_t length) {
    const auto& xt = x.value();
    const auto& xv = xt.data();
    if (length == 0) throw DimensionError("slice: empty slice");
    if (xt.rank() == 1) {
        if (axis != 0 || start + length > xv.size()) throw DimensionError("slice out of range");
        std::vector<Scalar> out(xv.begin() + static_cast<std::ptrdiff_t>(start),
                                xv.begin() + static_cast<std::ptrdiff_t>(start + length));
        return x.tape().record("slice", Tensor({length}, std::move(out)), {x},
                               [x, start](std::span<const Scalar> g, Tape& tape) { tape.accumulate_at(x, start, g); });
    }
    require_matrix(x, "slice");
    const std::size_t rows = xt.shape()[0], cols = xt.shape()[1];
    if (axis == 0) {
        if (start + length > rows) throw DimensionError("slice rows out of range");
        std::vector<Scalar> out(xv.begin() + static_cast<std::ptrdiff_t>(start * cols),
                                xv.begin() + static_cast<std::ptrdiff_t>((start + length) * cols));
        return x.tape().record("slice", Tensor({length, cols}, std::move(out)), {x},
                               [x, start, cols](std::span<const Scalar> g, Tape& tape) {
                                   tape.accumulate_at(x, start * cols, g);
                               });
    }
    if (axis != 1 || start + length > cols) throw DimensionError("slice cols out of range");
    std::vector<Scalar> out(rows * length);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < length; ++c) out[r * length + c] = xv[r * cols + start + c];
    return x.tape().record("slice", Tensor({rows, length}, std::move(out)), {x},
                           [x, start, rows, cols, length](std::span<const Scalar> g, Tape& tape) {
                               std::vector<Scalar> gx(rows * cols, Scalar(0));
                               for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t c = 0; c < length; ++c) gx[r * cols + start + c] = g[r * length + c];
                               tape.accumulate(x, gx);
                           });
}

Var stack(const std::vector<Var>& rows) {
    if (rows.empty()) throw ContractError("stack of no rows");
    const std::size_t d = rows[0].value().numel();
    std::vector<Var> mats;
    mats.reserve(rows.size());
    for (const auto& r : rows) {
        if (r.value().rank() != 1 || r.value().numel() != d) throw DimensionError("stack: rows must be [d] vectors");
        mats.push_back(reshape(r, {1, d}));
    }
    return concat(mats, 0);
}

Var row(Var x, std::size_t r) {
    require_matrix(x, "row");
    return reshape(slice(x, 0, r, 1), {x.shape()[1]});
}

Var reshape(Var x, Shape shape) {
    Tensor y = x.value().reshape(std::move(shape));
    return x.tape().record("reshape", y, {x}, [x](std::span<const Scalar> g, Tape& tape) { tape.accumulate(x, g); });
}

Var embedding(Var table, const std::vector<std::size_t>& ids) {
    require_matrix(table, "embedding");
    const std::size_t vocab = table.shape()[0], d = table.shape()[1];
    if (ids.empty()) throw DimensionError("embedding: empty id list");
    const auto& tv = table.value().data();
    std::vector<Scalar> out(ids.size() * d);
    for (std::size_t t = 0; t < ids.size(); ++t) {
        if (ids[t] >= vocab) throw VocabularyError("token id " + std::to_string(ids[t]) + " outside vocabulary");
        std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(ids[t] * d), d, out.begin() + static_cast<std::ptrdiff_t>(t * d));
    }
    return table.tape().record("embedding", Tensor({ids.size(), d}, std::move(out)), {table},
                               [table, ids, d](std::span<const Scalar> g, Tape& tape) {
                                   for (std::size_t t = 0; t < ids.size(); ++t)
                                       tape.accumulate_at(table, ids[t] * d, g.subspan(t * d, d));
                               });
}

Var nll_loss(Var log_probs, const std::vector<std::size_t>& labels) {
    const auto& lp = log_probs.value();
    const std::size_t rows = row_count(lp), k = lp.shape().back();
    if (labels.size() != rows) throw DimensionError("nll_loss: label count differs from rows");
    double acc = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
        if (labels[i] >= k) throw ParameterError("label " + std::to_string(labels[i]) + " out of range");
        acc -= lp.data()[i * k + labels[i]];
    }
    const double n = static_cast<double>(rows);
    return log_probs.tape().record("nll_loss", Tensor::scalar(static_cast<Scalar>(acc / n)), {log_probs},
                                   [log_probs, labels, rows, k, n](std::span<const Scalar> g, Tape& tape) {
                                       std::vector<Scalar> gx(rows * k, Scalar(0));
                                       for (std::size_t i = 0; i < rows; ++i)
                                           gx[i * k + labels[i]] = static_cast<Scalar>(-g[0] / n);
                                       tape.accumulate(log_probs, gx);
                                   });
}

// ---------------------------------------------------------------------------
// attention

AttentionResult multi_head_attention(Var q, Var k, Var v, std::size_t heads, std::size_t groups) {
    require_matrix(q, "attention");
    require_same_shape(q, k, "attention");
    require_same_shape(q, v, "attention");
    const std::size_t rows = q.shape()[0], d = q.shape()[1];
    if (heads == 0 || d % heads != 0) throw DimensionError("attention: model dim not divisible by head count");
    if (groups == 0 || rows % groups != 0) throw DimensionError("attention: rows not divisible into groups");
    const std::size_t T = rows / groups;
    const std::size_t dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    const auto& qv = q.value().data();
    const auto& kv = k.value().data();
    const auto& vv = v.value().data();

    std::vector<Scalar> probs(groups * heads * T * T);
    std::vector<Scalar> out(rows * d);
    std::vector<double> row(T);
    for (std::size_t b = 0; b < groups; ++b) {
        const std::size_t base = b * T;
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = h * dh;
            Scalar* P = probs.data() + (b * heads + h) * T * T;
            for (std::size_t i = 0; i < T; ++i) {
                const Scalar* qi = qv.data() + (base + i) * d + off;
                double mx = -HUGE_VAL;
                for (std::size_t j = 0; j < T; ++j) {
                    const Scalar* kj = kv.data() + (base + j) * d + off;
                    double s = 0.0;
                    for (std::size_t c = 0; c < dh; ++c) s += static_cast<double>(qi[c]) * kj[c];
                    row[j] = s * inv_sqrt;
                    mx = std::max(mx, row[j]);
                }
                double total = 0.0;
                for (std::size_t j = 0; j < T; ++j) {
                    row[j] = std::exp(static_cast<Scalar>(row[j] - mx));
                    total += row[j];
                }
                for (std::size_t j = 0; j < T; ++j) {
                    row[j] /= total;
                    P[i * T + j] = static_cast<Scalar>(row[j]);
                }
                for (std::size_t c = 0; c < dh; ++c) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < T; ++j) acc += row[j] * vv[(base + j) * d + off + c];
                    out[(base + i) * d + off + c] = static_cast<Scalar>(acc);
                }
            }
        }
    }
    Tensor weights({groups * heads, T, T}, std::move(probs));
    Var o = q.tape().record(
        "attention", Tensor({rows, d}, std::move(out)), {q, k, v},
        [q, k, v, weights, heads, groups, T, d, dh, inv_sqrt](std::span<const Scalar> g, Tape& tape) {
            const auto& qv2 = q.value().data();
            const auto& kv2 = k.value().data();
            const auto& vv2 = v.value().data();
            const auto& p = weights.data();
            const std::size_t rows = groups * T;
            std::vector<double> gq(rows * d, 0.0), gk(rows * d, 0.0), gv(rows * d, 0.0);
            std::vector<double> dp(T), ds(T);
            for (std::size_t b = 0; b < groups; ++b) {
                const std::size_t base = b * T;
                for (std::size_t h = 0; h < heads; ++h) {
                    const std::size_t off = h * dh;
                    const Scalar* P = p.data() + (b * heads + h) * T * T;
                    for (std::size_t i = 0; i < T; ++i) {
                        const Scalar* pr = P + i * T;
                        const Scalar* gi = g.data() + (base + i) * d + off;
                        double dot_pd = 0.0;
                        for (std::size_t j = 0; j < T; ++j) {
                            const Scalar* vj = vv2.data() + (base + j) * d + off;
                            double* gvj = gv.data() + (base + j) * d + off;
                            double acc = 0.0;
                            for (std::size_t c = 0; c < dh; ++c) {
                                acc += static_cast<double>(gi[c]) * vj[c];
                                gvj[c] += static_cast<double>(pr[j]) * gi[c];
                            }
                            dp[j] = acc;
                            dot_pd += acc * pr[j];
                        }
                        const Scalar* qi = qv2.data() + (base + i) * d + off;
                        double* gqi = gq.data() + (base + i) * d + off;
                        for (std::size_t j = 0; j < T; ++j) {
                            const double s = pr[j] * (dp[j] - dot_pd) * inv_sqrt;
                            if (s == 0.0) continue;
                            const Scalar* kj = kv2.data() + (base + j) * d + off;
                            double* gkj = gk.data() + (base + j) * d + off;
                            for (std::size_t c = 0; c < dh; ++c) {
                                gqi[c] += s * kj[c];
                                gkj[c] += s * qi[c];
                            }
                        }
                    }
                }
            }
            std::vector<Scalar> a(gq.begin(), gq.end()), bb(gk.begin(), gk.end()), c(gv.begin(), gv.end());
            tape.accumulate(q, a);
            tape.accumulate(k, bb);
            tape.accumulate(v, c);
        });
    return {o, weights};
}

Var interleave_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ContractError("interleave_rows of no parts");
    require_matrix(parts[0], "interleave_rows");
    const std::size_t B = parts[0].shape()[0], d = parts[0].shape()[1], P = parts.size();
    for (const auto& p : parts) {
        if (p.shape() != parts[0].shape()) throw DimensionError("interleave_rows: parts differ in shape");
    }
    std::vector<Scalar> out(B * P * d);
    for (std::size_t p = 0; p < P; ++p) {
        const auto& v = parts[p].value().data();
        for (std::size_t b = 0; b < B; ++b)
            std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(b * d), d,
                        out.begin() + static_cast<std::ptrdiff_t>((b * P + p) * d));
    }
    return parts[0].tape().record("interleave_rows", Tensor({B * P, d}, std::move(out)), parts,
                                  [parts, B, P, d](std::span<const Scalar> g, Tape& tape) {
                                      for (std::size_t p = 0; p < P; ++p) {
                                          if (!parts[p].requires_grad()) continue;
                                          std::vector<Scalar> gp(B * d);
                                          for (std::size_t b = 0; b < B; ++b)
                                              std::copy_n(g.begin() + static_cast<std::ptrdiff_t>((b * P + p) * d), d,
                                                          gp.begin() + static_cast<std::ptrdiff_t>(b * d));
                                          tape.accumulate(parts[p], gp);
                                      }
                                  });
}

Var segment_mean(Var x, std::size_t segment) {
    require_matrix(x, "segment_mean");
    const std::size_t rows = x.shape()[0], d = x.shape()[1];
    if (segment == 0 || rows % segment != 0) throw DimensionError("segment_mean: rows not divisible by segment");
    const std::size_t B = rows / segment;
    const auto& xv = x.value().data();
    std::vector<Scalar> out(B * d);
    std::vector<double> acc(d);
    for (std::size_t b = 0; b < B; ++b) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t s = 0; s < segment; ++s)
            for (std::size_t c = 0; c < d; ++c) acc[c] += xv[(b * segment + s) * d + c];
        for (std::size_t c = 0; c < d; ++c) out[b * d + c] = static_cast<Scalar>(acc[c] / static_cast<double>(segment));
    }
    return x.tape().record("segment_mean", Tensor({B, d}, std::move(out)), {x},
                           [x, B, d, segment](std::span<const Scalar> g, Tape& tape) {
                               std::vector<Scalar> gx(B * segment * d);
                               const double inv = 1.0 / static_cast<double>(segment);
                               for (std::size_t b = 0; b < B; ++b)
                                   for (std::size_t s = 0; s < segment; ++s)
                                       for (std::size_t c = 0; c < d; ++c)
                                           gx[(b * segment + s) * d + c] = static_cast<Scalar>(g[b * d + c] * inv);
                               tape.accumulate(x, gx);
                           });
}

Var detach(Var x) { return x.tape().constant(x.value()); }

}  // namespace ad
}  // namespace vtt::inline VTT_PRECISION_NS
