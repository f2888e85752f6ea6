#pragma once

// Reverse-mode differentiation over a Wengert list ("tape").
//
// Every primitive records its output value and a closure that pushes the
// output adjoint back to its inputs. The scalar type is a template parameter
// so the same tape runs over double (gradients) or Dual<double> (exact
// Hessian-vector products via forward-over-reverse).

#include <algorithm>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "metagate/core/errors.hpp"
#include "metagate/core/tensor.hpp"

namespace metagate::ad {

template <class T>
class Tape;

template <class T>
struct Var {
    Tape<T>* tape = nullptr;
    std::size_t id = 0;

    [[nodiscard]] const Tensor<T>& value() const { return tape->value(id); }
    [[nodiscard]] const std::vector<std::size_t>& shape() const { return value().shape(); }
    [[nodiscard]] bool needs_grad() const { return tape->needs_grad(id); }
};

template <class T>
class Tape {
public:
    using Backward = std::function<void(Tape&, std::size_t)>;

    Var<T> variable(Tensor<T> value) { return push("leaf", std::move(value), true, {}); }
    Var<T> constant(Tensor<T> value) { return push("const", std::move(value), false, {}); }

    /// Registers a node. Forward values are checked here so a NaN/Inf is
    /// reported against the primitive that produced it.
    Var<T> push(const char* op, Tensor<T> value, bool needs_grad, Backward backward) {
        if (!value.all_finite())
            throw NumericError(op, "non-finite value in forward pass");
        nodes_.push_back(Node{std::move(value), {}, needs_grad, op, std::move(backward)});
        return Var<T>{this, nodes_.size() - 1};
    }

    [[nodiscard]] const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
    [[nodiscard]] bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
    [[nodiscard]] const Tensor<T>& grad(std::size_t id) const { return nodes_[id].grad; }
    [[nodiscard]] std::size_t size() const { return nodes_.size(); }

    /// Adds `g` into the adjoint of node `id` (no-op for constants).
    void accumulate(std::size_t id, const Tensor<T>& g) {
        Node& n = nodes_[id];
        if (!n.needs_grad) return;
        if (n.grad.size() == 0) {
            n.grad = g;
            return;
        }
        auto& dst = n.grad.data();
        const auto& src = g.data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
    Tensor<T>& grad_buffer(std::size_t id) {
        Node& n = nodes_[id];
        if (n.grad.size() == 0) n.grad = Tensor<T>(n.value.shape(), T{});
        return n.grad;
    }

    /// Reverse sweep from a scalar output; returns adjoints of `wrt`
    /// (zero tensors for inputs the output does not depend on).
    std::vector<Tensor<T>> gradient(Var<T> out, std::span<const Var<T>> wrt) {
        if (out.value().size() != 1)
            throw ContractViolation("gradient: loss is not a scalar (shape " +
                                    shape_str(out.value().shape()) + ")");
        for (auto& n : nodes_) n.grad = Tensor<T>();
        nodes_[out.id].grad = Tensor<T>(nodes_[out.id].value.shape(), T(1));
        for (std::size_t i = out.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.grad.size() == 0 || !n.backward) continue;
            n.backward(*this, i);
        }
        std::vector<Tensor<T>> result;
        result.reserve(wrt.size());
        for (const auto& w : wrt) {
            const Node& n = nodes_[w.id];
            result.push_back(n.grad.size() ? n.grad : Tensor<T>(n.value.shape(), T{}));
        }
        return result;
    }
    Tensor<T> gradient(Var<T> out, Var<T> wrt) {
        std::vector<Var<T>> w{wrt};
        return std::move(gradient(out, std::span<const Var<T>>(w)).front());
    }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool needs_grad;
        const char* op;
        Backward backward;
    };
    std::deque<Node> nodes_;
};

namespace detail {

template <class T>
bool any_grad(std::initializer_list<Var<T>> vs) {
    for (const auto& v : vs)
        if (v.needs_grad()) return true;
    return false;
}

template <class T>
void same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ContractViolation(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

template <class T, class F>
Var<T> unary(const char* op, Var<T> a, F&& fwd_and_deriv) {
    // fwd_and_deriv(x) -> pair(f(x), f'(x))
    const auto& x = a.value();
    Tensor<T> out(x.shape());
    Tensor<T> deriv(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        auto [f, df] = fwd_and_deriv(x[i]);
        out[i] = f;
        deriv[i] = df;
    }
    const bool ng = a.needs_grad();
    typename Tape<T>::Backward bw;
    if (ng) {
        bw = [ia = a.id, deriv = std::move(deriv)](Tape<T>& t, std::size_t self) {
            Tensor<T> g = t.grad(self);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] = g[i] * deriv[i];
            t.accumulate(ia, g);
        };
    }
    return a.tape->push(op, std::move(out), ng, std::move(bw));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
    detail::same_shape(a, b, "add");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    const bool ng = detail::any_grad({a, b});
    typename Tape<T>::Backward bw;
    if (ng)
        bw = [ia = a.id, ib = b.id](Tape<T>& t, std::size_t self) {
            const Tensor<T> g = t.grad(self);
            t.accumulate(ia, g);
            t.accumulate(ib, g);
        };
    return a.tape->push("add", std::move(out), ng, std::move(bw));
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
    detail::same_shape(a, b, "sub");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    const bool ng = detail::any_grad({a, b});
    typename Tape<T>::Backward bw;
    if (ng)
        bw = [ia = a.id, ib = b.id](Tape<T>& t, std::size_t self) {
            Tensor<T> g = t.grad(self);
            t.accumulate(ia, g);
            for (auto& x : g.data()) x = -x;
            t.accumulate(ib, g);
        };
    return a.tape->push("sub", std::move(out), ng, std::move(bw));
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
    detail::same_shape(a, b, "mul");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    const bool ng = detail::any_grad({a, b});
    typename Tape<T>::Backward bw;
    if (ng)
        bw = [ia = a.id, ib = b.id](Tape<T>& t, std::size_t self) {
            const Tensor<T>& g = t.grad(self);
            const Tensor<T>& av = t.value(ia);
            const Tensor<T>& bv = t.value(ib);
            if (t.needs_grad(ia)) {
                Tensor<T> ga(g.shape());
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * bv[i];
                t.accumulate(ia, ga);
            }
            if (t.needs_grad(ib)) {
                Tensor<T> gb(g.shape());
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] = g[i] * av[i];
                t.accumulate(ib, gb);
            }
        };
    return a.tape->push("mul", std::move(out), ng, std::move(bw));
}

template <class T>
Var<T> divide(Var<T> a, Var<T> b) {
    detail::same_shape(a, b, "divide");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] / b.value()[i];
    const bool ng = detail::any_grad({a, b});
    typename Tape<T>::Backward bw;
    if (ng)
        bw = [ia = a.id, ib = b.id](Tape<T>& t, std::size_t self) {
            const Tensor<T>& g = t.grad(self);
            const Tensor<T>& av = t.value(ia);
            const Tensor<T>& bv = t.value(ib);
            if (t.needs_grad(ia)) {
                Tensor<T> ga(g.shape());
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] / bv[i];
                t.accumulate(ia, ga);
            }
            if (t.needs_grad(ib)) {
                Tensor<T> gb(g.shape());
                for (std::size_t i = 0; i < g.size(); ++i)
                    gb[i] = -(g[i] * av[i]) / (bv[i] * bv[i]);
                t.accumulate(ib, gb);
            }
        };
    return a.tape->push("divide", std::move(out), ng, std::move(bw));
}

/// a * c for a constant scalar c.
template <class T>
Var<T> scale(Var<T> a, double c) {
    return detail::unary<T>("scale", a, [c](const T& x) { return std::pair<T, T>{x * T(c), T(c)}; });
}

/// a + c for a constant scalar c.
template <class T>
Var<T> add_scalar(Var<T> a, double c) {
    return detail::unary<T>("add_scalar", a, [c](const T& x) { return std::pair<T, T>{x + T(c), T(1)}; });
}

template <class T>
Var<T> square(Var<T> a) {
    return detail::unary<T>("square", a, [](const T& x) { return std::pair<T, T>{x * x, T(2) * x}; });
}

template <class T>
Var<T> relu(Var<T> a) {
    return detail::unary<T>("relu", a, [](const T& x) {
        return value_of(x) > 0.0 ? std::pair<T, T>{x, T(1)} : std::pair<T, T>{T(0), T(0)};
    });
}

template <class T>
Var<T> sigmoid(Var<T> a) {
    return detail::unary<T>("sigmoid", a, [](const T& x) {
        using std::exp;
        T s = value_of(x) >= 0.0 ? T(1) / (T(1) + exp(-x)) : exp(x) / (T(1) + exp(x));
        return std::pair<T, T>{s, s * (T(1) - s)};
    });
}

template <class T>
Var<T> log(Var<T> a) {
    for (const auto& x : a.value().data())
        if (!(value_of(x) > 0.0)) throw NumericError("log", "non-positive argument");
    return detail::unary<T>("log", a, [](const T& x) {
        using std::log;
        return std::pair<T, T>{log(x), T(1) / x};
    });
}

/// Elementwise max(a, c) against a constant; ties route the subgradient to `a`
/// (the first operand).
template <class T>
Var<T> maximum(Var<T> a, double c) {
    return detail::unary<T>("maximum", a, [c](const T& x) {
        return value_of(x) >= c ? std::pair<T, T>{x, T(1)} : std::pair<T, T>{T(c), T(0)};
    });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <class T>
Var<T> reshape(Var<T> a, std::vector<std::size_t> shape) {
    Tensor<T> out = a.value().reshaped(std::move(shape));
    const bool ng = a.needs_grad();
    typename Tape<T>::Backward bw;
    if (ng)
        bw = [ia = a.id](Tape<T>& t, std::size_t self) {
            t.accumulate(ia, t.grad(self).reshaped(t.value(ia).shape()));
        };
    return a.tape->push("reshape", std::move(out), ng, std::move(bw));
}

/// Contiguous range [offset, offset+count(shape)) of the flattened input.
template <class T>
Var<T> slice(Var<T> a, std::size_t offset, std::vector<std::size_t> shape) {
    const std::size_t n = Tensor<T>::count(shape);
    require(offset + n <= a.value().size(), "slice: range exceeds input");
    std::vector<T> data(a.value().data().begin() + offset, a.value().data().begin() + offset + n);
    Tensor<T> out(std::move(shape), std::move(data));
    const bool ng = a.needs_grad();
    typename Tape<T>::Backward bw;
    if (ng)
        bw = [ia = a.id, offset](Tape<T>& t, std::size_t self) {
            const Tensor<T>& g = t.grad(self);
            Tensor<T>& dst = t.grad_buffer(ia);
            for (std::size_t i = 0; i < g.size(); ++i) dst[offset + i] += g[i];
        };
    return a.tape->push("slice", std::move(out), ng, std::move(bw));
}

/// Columns [c0, c1) of a matrix.
template <class T>
Var<T> slice_cols(Var<T> a, std::size_t c0, std::size_t c1) {
    const auto& x = a.value();
    require(x.rank() == 2 && c0 <= c1 && c1 <= x.cols(), "slice_cols: bad range");
    const std::size_t R = x.rows(), C = x.cols(), W = c1 - c0;
    Tensor<T> out = Tensor<T>::matrix(R, W);
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < W; ++c) out.at(r, c) = x.at(r, c0 + c);
    const bool ng = a.needs_grad();
    typename Tape<T>::Backward bw;
    if (ng)
        bw = [ia = a.id, c0, R, C, W](Tape<T>& t, std::size_t self) {
            const Tensor<T>& g = t.grad(self);
            Tensor<T>& dst = t.grad_buffer(ia);
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t c = 0; c < W; ++c) dst[r * C + c0 + c] += g[r * W + c];
        };
    return a.tape->push("slice_cols", std::move(out), ng, std::move(bw));
}

/// Horizontal concatenation of matrices with equal row counts.
template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
    require(!parts.empty(), "concat_cols: no inputs");
    const std::size_t R = parts.front().value().rows();
    std::size_t C = 0;
    bool ng = false;
    for (const auto& p : parts) {
        require(p.value().rank() == 2 && p.value().rows() == R, "concat_cols: row mismatch");
        C += p.value().cols();
        ng = ng || p.needs_grad();
    }
    Tensor<T> out = Tensor<T>::matrix(R, C);
    std::vector<std::size_t> ids, offs, widths;
    std::size_t off = 0;
    for (const auto& p : parts) {
        const auto& x = p.value();
        const std::size_t W = x.cols();
        for (std::size_t r = 0; r < R; ++r)
            for (std::size_t c = 0; c < W; ++c) out.at(r, off + c) = x.at(r, c);
        ids.push_back(p.id);
        offs.push_back(off);
        widths.push_back(W);
        off += W;
    }
    typename Tape<T>::Backward bw;
    if (ng)
        bw = [ids, offs, widths, R, C](Tape<T>& t, std::size_t self) {
            const Tensor<T>& g = t.grad(self);
            for (std::size_t p = 0; p < ids.size(); ++p) {
                if (!t.needs_grad(ids[p])) continue;
                Tensor<T> gp = Tensor<T>::matrix(R, widths[p]);
                for (std::size_t r = 0; r < R; ++r)
                    for (std::size_t c = 0; c < widths[p]; ++c) gp.at(r, c) = g[r * C + offs[p] + c];
                t.accumulate(ids[p], gp);
            }
        };
    return parts.front().tape->push("concat", std::move(out), ng, std::move(bw));
}

/// out[i,:] = a[index[i],:]
template <class T>
Var<T> gather_rows(Var<T> a, std::vector<std::size_t> index) {
    const auto& x = a.value();
    require(x.rank() == 2, "gather_rows: matrix expected");
    const std::size_t C = x.cols();
    Tensor<T> out = Tensor<T>::matrix(index.size(), C);
    for (std::size_t i = 0; i < index.size(); ++i) {
        require(index[i] < x.rows(), "gather_rows: index out of range");
        for (std::size_t c = 0; c < C; ++c) out.at(i, c) = x.at(index[i], c);
    }
    const bool ng = a.needs_grad();
    typename Tape<T>::Backward bw;
    if (ng)
        bw = [ia = a.id, index = std::move(index), C](Tape<T>& t, std::size_t self) {
            const Tensor<T>& g = t.grad(self);
            Tensor<T>& dst = t.grad_buffer(ia);
            for (std::size_t i = 0; i < index.size(); ++i)
                for (std::size_t c = 0; c < C; ++c) dst[index[i] * C + c] += g[i * C + c];
        };
    return a.tape->push("gather_rows", std::move(out), ng, std::move(bw));
}

// ---------------------------------------------------------------------------
// Linear algebra and reductions

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
    const auto& A = a.value();
    const auto& B = b.value();
    require(A.rank() == 2 && B.rank() == 2 && A.cols() == B.rows(),
            "matmul: incompatible shapes " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
    const std::size_t M = A.rows(), K = A.cols(), N = B.cols();
    Tensor<T> out = Tensor<T>::matrix(M, N);
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t k = 0; k < K; ++k) {
            const T aik = A[i * K + k];
            if (value_of(aik) == 0.0 && std::is_same_v<T, double>) continue;
            for (std::size_t j = 0; j < N; ++j) out[i * N + j] += aik * B[k * N + j];
        }
    const bool ng = detail::any_grad({a, b});
    typename Tape<T>::Backward bw;
    if (ng)
        bw = [ia = a.id, ib = b.id, M, K, N](Tape<T>& t, std::size_t self) {
            const Tensor<T>& g = t.grad(self);
            const Tensor<T>& A = t.value(ia);
            const Tensor<T>& B = t.value(ib);
            if (t.needs_grad(ia)) {  // dA = G B^T
                Tensor<T> ga = Tensor<T>::matrix(M, K);
                for (std::size_t i = 0; i < M; ++i)
                    for (std::size_t k = 0; k < K; ++k) {
                        T s{};
                        for (std::size_t j = 0; j < N; ++j) s += g[i * N + j] * B[k * N + j];
                        ga[i * K + k] = s;
                    }
                t.accumulate(ia, ga);
            }
            if (t.needs_grad(ib)) {  // dB = A^T G
                Tensor<T> gb = Tensor<T>::matrix(K, N);
                for (std::size_t i = 0; i < M; ++i)
                    for (std::size_t k = 0; k < K; ++k) {
                        const T aik = A[i * K + k];
                        for (std::size_t j = 0; j < N; ++j) gb[k * N + j] += aik * g[i * N + j];
                    }
                t.accumulate(ib, gb);
            }
        };
    return a.tape->push("matmul", std::move(out), ng, std::move(bw));
}

/// a (R x C) + bias broadcast over rows; bias has C entries.
template <class T>
Var<T> add_bias(Var<T> a, Var<T> bias) {
    const auto& x = a.value();
    require(x.rank() == 2 && bias.value().size() == x.cols(), "add_bias: width mismatch");
    const std::size_t R = x.rows(), C = x.cols();
    Tensor<T> out = x;
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) out[r * C + c] += bias.value()[c];
    const bool ng = detail::any_grad({a, bias});
    typename Tape<T>::Backward bw;
    if (ng)
        bw = [ia = a.id, ib = bias.id, R, C](Tape<T>& t, std::size_t self) {
            const Tensor<T>& g = t.grad(self);
            t.accumulate(ia, g);
            if (t.needs_grad(ib)) {
                Tensor<T> gb(t.value(ib).shape());
                for (std::size_t r = 0; r < R; ++r)
                    for (std::size_t c = 0; c < C; ++c) gb[c] += g[r * C + c];
                t.accumulate(ib, gb);
            }
        };
    return a.tape->push("add_bias", std::move(out), ng, std::move(bw));
}

/// Sum of all entries -> scalar.
template <class T>
Var<T> sum(Var<T> a) {
    T s{};
    for (const auto& x : a.value().data()) s += x;
    const bool ng = a.needs_grad();
    typename Tape<T>::Backward bw;
    if (ng)
        bw = [ia = a.id](Tape<T>& t, std::size_t self) {
            const T g = t.grad(self)[0];
            t.accumulate(ia, Tensor<T>(t.value(ia).shape(), g));
        };
    return a.tape->push("sum", Tensor<T>::scalar(s), ng, std::move(bw));
}

/// Row sums of a matrix -> R x 1.
template <class T>
Var<T> sum_rows(Var<T> a) {
    const auto& x = a.value();
    const std::size_t R = x.rows(), C = x.cols();
    Tensor<T> out = Tensor<T>::matrix(R, 1);
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) out[r] += x[r * C + c];
    const bool ng = a.needs_grad();
    typename Tape<T>::Backward bw;
    if (ng)
        bw = [ia = a.id, R, C](Tape<T>& t, std::size_t self) {
            const Tensor<T>& g = t.grad(self);
            Tensor<T> ga(t.value(ia).shape());
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t c = 0; c < C; ++c) ga[r * C + c] = g[r];
            t.accumulate(ia, ga);
        };
    return a.tape->push("sum_rows", std::move(out), ng, std::move(bw));
}

/// Column sums of a matrix -> 1 x C.
template <class T>
Var<T> sum_cols(Var<T> a) {
    const auto& x = a.value();
    const std::size_t R = x.rows(), C = x.cols();
    Tensor<T> out = Tensor<T>::matrix(1, C);
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) out[c] += x[r * C + c];
    const bool ng = a.needs_grad();
    typename Tape<T>::Backward bw;
    if (ng)
        bw = [ia = a.id, R, C](Tape<T>& t, std::size_t self) {
            const Tensor<T>& g = t.grad(self);
            Tensor<T> ga(t.value(ia).shape());
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t c = 0; c < C; ++c) ga[r * C + c] = g[c];
            t.accumulate(ia, ga);
        };
    return a.tape->push("sum_cols", std::move(out), ng, std::move(bw));
}

/// Row-wise Euclidean norm -> R x 1. The derivative at a zero row is taken as 0.
template <class T>
Var<T> row_norm2(Var<T> a) {
    const auto& x = a.value();
    const std::size_t R = x.rows(), C = x.cols();
    Tensor<T> out = Tensor<T>::matrix(R, 1);
    for (std::size_t r = 0; r < R; ++r) {
        T s{};
        for (std::size_t c = 0; c < C; ++c) s += x[r * C + c] * x[r * C + c];
        using std::sqrt;
        out[r] = value_of(s) > 0.0 ? sqrt(s) : T(0);
    }
    const bool ng = a.needs_grad();
    typename Tape<T>::Backward bw;
    if (ng)
        bw = [ia = a.id, R, C](Tape<T>& t, std::size_t self) {
            const Tensor<T>& g = t.grad(self);
            const Tensor<T>& x = t.value(ia);
            const Tensor<T>& n = t.value(self);
            Tensor<T> ga(x.shape());
            for (std::size_t r = 0; r < R; ++r) {
                if (value_of(n[r]) == 0.0) continue;
                for (std::size_t c = 0; c < C; ++c) ga[r * C + c] = g[r] * x[r * C + c] / n[r];
            }
            t.accumulate(ia, ga);
        };
    return a.tape->push("norm2", std::move(out), ng, std::move(bw));
}

/// x (R x C) divided row-wise by d (R x 1).
template <class T>
Var<T> div_rows(Var<T> x, Var<T> d) {
    const auto& X = x.value();
    const std::size_t R = X.rows(), C = X.cols();
    require(d.value().size() == R, "div_rows: divisor length mismatch");
    Tensor<T> out = X;
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) out[r * C + c] = out[r * C + c] / d.value()[r];
    const bool ng = detail::any_grad({x, d});
    typename Tape<T>::Backward bw;
    if (ng)
        bw = [ix = x.id, id = d.id, R, C](Tape<T>& t, std::size_t self) {
            const Tensor<T>& g = t.grad(self);
            const Tensor<T>& X = t.value(ix);
            const Tensor<T>& D = t.value(id);
            if (t.needs_grad(ix)) {
                Tensor<T> gx(X.shape());
                for (std::size_t r = 0; r < R; ++r)
                    for (std::size_t c = 0; c < C; ++c) gx[r * C + c] = g[r * C + c] / D[r];
                t.accumulate(ix, gx);
            }
            if (t.needs_grad(id)) {
                Tensor<T> gd(D.shape());
                for (std::size_t r = 0; r < R; ++r) {
                    T s{};
                    for (std::size_t c = 0; c < C; ++c) s += g[r * C + c] * X[r * C + c];
                    gd[r] = -s / (D[r] * D[r]);
                }
                t.accumulate(id, gd);
            }
        };
    return x.tape->push("divide", std::move(out), ng, std::move(bw));
}

/// Max-reduce of rows grouped by segment id. Rows of `a` with segment[i] == s
/// are reduced into output row s. Ties route the subgradient to the first
/// attaining row (lowest input row index). Empty segments produce zeros.
template <class T>
Var<T> segment_max(Var<T> a, const std::vector<std::size_t>& segment, std::size_t num_segments) {
    const auto& x = a.value();
    const std::size_t R = x.rows(), C = x.cols();
    require(segment.size() == R, "segment_max: segment ids must cover every row");
    Tensor<T> out = Tensor<T>::matrix(num_segments, C);
    std::vector<std::size_t> argmax(num_segments * C, R);  // R == "empty"
    for (std::size_t r = 0; r < R; ++r) {
        const std::size_t s = segment[r];
        require(s < num_segments, "segment_max: segment id out of range");
        for (std::size_t c = 0; c < C; ++c) {
            std::size_t& am = argmax[s * C + c];
            if (am == R || value_of(x[r * C + c]) > value_of(x[am * C + c])) {
                am = r;
                out[s * C + c] = x[r * C + c];
            }
        }
    }
    const bool ng = a.needs_grad();
    typename Tape<T>::Backward bw;
    if (ng)
        bw = [ia = a.id, argmax = std::move(argmax), R, C](Tape<T>& t, std::size_t self) {
            const Tensor<T>& g = t.grad(self);
            Tensor<T>& dst = t.grad_buffer(ia);
            for (std::size_t i = 0; i < argmax.size(); ++i) {
                if (argmax[i] == R) continue;
                dst[argmax[i] * C + i % C] += g[i];
            }
        };
    return a.tape->push("max_reduce", std::move(out), ng, std::move(bw));
}

// ---------------------------------------------------------------------------
// Convolution and pooling on C x H x W feature maps

/// 2-D cross-correlation. x: Cin x H x W, w: Cout x Cin x kh x kw, b: Cout.
template <class T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, std::size_t stride = 1, std::size_t pad = 0) {
    const auto& X = x.value();
    const auto& Wt = w.value();
    require(X.rank() == 3 && Wt.rank() == 4, "conv2d: expected CxHxW input and 4-D kernel");
    const std::size_t Cin = X.dim(0), H = X.dim(1), Wd = X.dim(2);
    const std::size_t Cout = Wt.dim(0), kh = Wt.dim(2), kw = Wt.dim(3);
    require(Wt.dim(1) == Cin, "conv2d: channel mismatch");
    require(b.value().size() == Cout, "conv2d: bias length mismatch");
    require(stride >= 1, "conv2d: stride must be positive");
    require(H + 2 * pad >= kh && Wd + 2 * pad >= kw, "conv2d: kernel larger than padded input");
    const std::size_t Ho = (H + 2 * pad - kh) / stride + 1;
    const std::size_t Wo = (Wd + 2 * pad - kw) / stride + 1;
    Tensor<T> out(std::vector<std::size_t>{Cout, Ho, Wo});
    auto in_at = [&](std::size_t c, long i, long j) -> T {
        if (i < 0 || j < 0 || i >= static_cast<long>(H) || j >= static_cast<long>(Wd)) return T{};
        return X[(c * H + i) * Wd + j];
    };
    for (std::size_t o = 0; o < Cout; ++o)
        for (std::size_t i = 0; i < Ho; ++i)
            for (std::size_t j = 0; j < Wo; ++j) {
                T s = b.value()[o];
                for (std::size_t c = 0; c < Cin; ++c)
                    for (std::size_t p = 0; p < kh; ++p)
                        for (std::size_t q = 0; q < kw; ++q) {
                            const long ii = static_cast<long>(i * stride + p) - static_cast<long>(pad);
                            const long jj = static_cast<long>(j * stride + q) - static_cast<long>(pad);
                            s += Wt[((o * Cin + c) * kh + p) * kw + q] * in_at(c, ii, jj);
                        }
                out[(o * Ho + i) * Wo + j] = s;
            }
    const bool ng = detail::any_grad({x, w, b});
    typename Tape<T>::Backward bw;
    if (ng)
        bw = [ix = x.id, iw = w.id, ib = b.id, Cin, H, Wd, Cout, kh, kw, Ho, Wo, stride, pad](
                 Tape<T>& t, std::size_t self) {
            const Tensor<T>& g = t.grad(self);
            const Tensor<T>& X = t.value(ix);
            const Tensor<T>& Wt = t.value(iw);
            Tensor<T> gx(X.shape()), gw(Wt.shape()), gb(t.value(ib).shape());
            for (std::size_t o = 0; o < Cout; ++o)
                for (std::size_t i = 0; i < Ho; ++i)
                    for (std::size_t j = 0; j < Wo; ++j) {
                        const T go = g[(o * Ho + i) * Wo + j];
                        gb[o] += go;
                        for (std::size_t c = 0; c < Cin; ++c)
                            for (std::size_t p = 0; p < kh; ++p)
                                for (std::size_t q = 0; q < kw; ++q) {
                                    const long ii = static_cast<long>(i * stride + p) - static_cast<long>(pad);
                                    const long jj = static_cast<long>(j * stride + q) - static_cast<long>(pad);
                                    if (ii < 0 || jj < 0 || ii >= static_cast<long>(H) ||
                                        jj >= static_cast<long>(Wd))
                                        continue;
                                    const std::size_t xi = (c * H + ii) * Wd + jj;
                                    const std::size_t wi = ((o * Cin + c) * kh + p) * kw + q;
                                    gw[wi] += go * X[xi];
                                    gx[xi] += go * Wt[wi];
                                }
                    }
            t.accumulate(ix, gx);
            t.accumulate(iw, gw);
            t.accumulate(ib, gb);
        };
    return x.tape->push("conv2d", std::move(out), ng, std::move(bw));
}

/// Max pooling over size x size windows; ties route to the first element in
/// row-major window order.
template <class T>
Var<T> maxpool2d(Var<T> x, std::size_t size, std::size_t stride) {
    const auto& X = x.value();
    require(X.rank() == 3, "maxpool2d: expected CxHxW input");
    const std::size_t C = X.dim(0), H = X.dim(1), W = X.dim(2);
    require(size >= 1 && stride >= 1 && H >= size && W >= size, "maxpool2d: window larger than input");
    const std::size_t Ho = (H - size) / stride + 1, Wo = (W - size) / stride + 1;
    Tensor<T> out(std::vector<std::size_t>{C, Ho, Wo});
    std::vector<std::size_t> argmax(out.size());
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < Ho; ++i)
            for (std::size_t j = 0; j < Wo; ++j) {
                std::size_t best = (c * H + i * stride) * W + j * stride;
                for (std::size_t p = 0; p < size; ++p)
                    for (std::size_t q = 0; q < size; ++q) {
                        const std::size_t idx = (c * H + i * stride + p) * W + j * stride + q;
                        if (value_of(X[idx]) > value_of(X[best])) best = idx;
                    }
                const std::size_t o = (c * Ho + i) * Wo + j;
                out[o] = X[best];
                argmax[o] = best;
            }
    const bool ng = x.needs_grad();
    typename Tape<T>::Backward bw;
    if (ng)
        bw = [ix = x.id, argmax = std::move(argmax)](Tape<T>& t, std::size_t self) {
            const Tensor<T>& g = t.grad(self);
            Tensor<T>& dst = t.grad_buffer(ix);
            for (std::size_t o = 0; o < argmax.size(); ++o) dst[argmax[o]] += g[o];
        };
    return x.tape->push("max_pool", std::move(out), ng, std::move(bw));
}

}  // namespace metagate::ad
