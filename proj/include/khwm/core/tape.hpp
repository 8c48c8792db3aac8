#pragma once

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "khwm/core/errors.hpp"
#include "khwm/core/types.hpp"

namespace khwm {

// Reverse-mode automatic differentiation over dense Eigen matrices.
//
// A Tape owns the computation graph; Var is a cheap handle into it. Ops are
// free functions that push one node each and install a backward closure that
// scatters the node's gradient into its parents. backward(root) seeds the
// (scalar) root with 1 and sweeps nodes in reverse creation order. Gradients
// are allocated lazily, so untouched subgraphs cost nothing.

template <typename S>
class Tape;

template <typename S>
struct Var {
    Tape<S>* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Mat<S>& value() const;
    Index rows() const { return value().rows(); }
    Index cols() const { return value().cols(); }
    S scalar() const;
};

template <typename S>
class Tape {
public:
    using BackwardFn = std::function<void(Tape&)>;

    struct Node {
        Mat<S> value;
        Mat<S> grad;
        bool grad_set = false;
        BackwardFn backward;  // empty for leaves and constants
    };

    Var<S> push(Mat<S> value) {
        nodes_.push_back(Node{std::move(value), Mat<S>(), false, {}});
        return Var<S>{this, static_cast<int>(nodes_.size()) - 1};
    }

    void set_backward(int id, BackwardFn fn) { nodes_[static_cast<size_t>(id)].backward = std::move(fn); }

    // Leaf with gradient tracking (parameters, inputs under test).
    Var<S> leaf(Mat<S> value) { return push(std::move(value)); }

    // Constant input; structurally a leaf, any gradient flowing into it is
    // simply never read.
    Var<S> constant(Mat<S> value) { return push(std::move(value)); }

    Var<S> constant_scalar(S v) {
        Mat<S> m(1, 1);
        m(0, 0) = v;
        return push(std::move(m));
    }

    const Mat<S>& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }

    // Gradient accumulator, zero-initialized on first access.
    Mat<S>& grad(int id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.grad_set) {
            n.grad = Mat<S>::Zero(n.value.rows(), n.value.cols());
            n.grad_set = true;
        }
        return n.grad;
    }

    // Gradient of a var; zeros if nothing flowed into it.
    Mat<S> grad_of(const Var<S>& v) const {
        const Node& n = nodes_[static_cast<size_t>(v.id)];
        if (!n.grad_set) return Mat<S>::Zero(n.value.rows(), n.value.cols());
        return n.grad;
    }

    void backward(const Var<S>& root) {
        const Mat<S>& rv = value(root.id);
        if (rv.rows() != 1 || rv.cols() != 1)
            throw ContractError("backward: root must be a 1x1 scalar");
        grad(root.id)(0, 0) = S(1);
        for (int i = root.id; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (n.grad_set && n.backward) n.backward(*this);
        }
    }

    std::size_t size() const { return nodes_.size(); }

private:
    std::vector<Node> nodes_;
};

template <typename S>
const Mat<S>& Var<S>::value() const {
    return tape->value(id);
}

template <typename S>
S Var<S>::scalar() const {
    const Mat<S>& v = value();
    if (v.rows() != 1 || v.cols() != 1) throw ContractError("Var::scalar on non-scalar");
    return v(0, 0);
}

namespace detail {

template <typename S>
inline void check_same_shape(const Var<S>& a, const Var<S>& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ContractError(std::string(op) + ": shape mismatch");
}

template <typename S, typename F>
Var<S> unary_op(Var<S> a, Mat<S> value, F&& df) {
    // df(g_out, a_value) -> contribution to g_a
    Tape<S>& t = *a.tape;
    Var<S> out = t.push(std::move(value));
    t.set_backward(out.id, [out, a, df = std::forward<F>(df)](Tape<S>& tp) {
        tp.grad(a.id) += df(tp.grad(out.id), tp.value(a.id), tp.value(out.id));
    });
    return out;
}

}  // namespace detail

// ---- arithmetic ---- //

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
    detail::check_same_shape(a, b, "add");
    Tape<S>& t = *a.tape;
    Var<S> out = t.push(t.value(a.id) + t.value(b.id));
    t.set_backward(out.id, [out, a, b](Tape<S>& tp) {
        const Mat<S>& g = tp.grad(out.id);
        tp.grad(a.id) += g;
        tp.grad(b.id) += g;
    });
    return out;
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
    detail::check_same_shape(a, b, "sub");
    Tape<S>& t = *a.tape;
    Var<S> out = t.push(t.value(a.id) - t.value(b.id));
    t.set_backward(out.id, [out, a, b](Tape<S>& tp) {
        const Mat<S>& g = tp.grad(out.id);
        tp.grad(a.id) += g;
        tp.grad(b.id) -= g;
    });
    return out;
}

template <typename S>
Var<S> neg(Var<S> a) {
    return detail::unary_op(
        a, Mat<S>(-a.value()),
        [](const Mat<S>& g, const Mat<S>&, const Mat<S>&) { return Mat<S>(-g); });
}

// Matrix product.
template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
    if (a.cols() != b.rows()) throw ContractError("matmul: inner dimension mismatch");
    Tape<S>& t = *a.tape;
    Var<S> out = t.push(t.value(a.id) * t.value(b.id));
    t.set_backward(out.id, [out, a, b](Tape<S>& tp) {
        const Mat<S>& g = tp.grad(out.id);
        tp.grad(a.id).noalias() += g * tp.value(b.id).transpose();
        tp.grad(b.id).noalias() += tp.value(a.id).transpose() * g;
    });
    return out;
}

// Hadamard product.
template <typename S>
Var<S> cmul(Var<S> a, Var<S> b) {
    detail::check_same_shape(a, b, "cmul");
    Tape<S>& t = *a.tape;
    Var<S> out = t.push(t.value(a.id).cwiseProduct(t.value(b.id)));
    t.set_backward(out.id, [out, a, b](Tape<S>& tp) {
        const Mat<S>& g = tp.grad(out.id);
        tp.grad(a.id).array() += g.array() * tp.value(b.id).array();
        tp.grad(b.id).array() += g.array() * tp.value(a.id).array();
    });
    return out;
}

// Elementwise quotient.
template <typename S>
Var<S> cdiv(Var<S> a, Var<S> b) {
    detail::check_same_shape(a, b, "cdiv");
    Tape<S>& t = *a.tape;
    Var<S> out = t.push(Mat<S>(t.value(a.id).array() / t.value(b.id).array()));
    t.set_backward(out.id, [out, a, b](Tape<S>& tp) {
        const auto g = tp.grad(out.id).array();
        const auto bv = tp.value(b.id).array();
        tp.grad(a.id).array() += g / bv;
        tp.grad(b.id).array() -= g * tp.value(a.id).array() / (bv * bv);
    });
    return out;
}

template <typename S>
Var<S> scale(Var<S> a, S k) {
    return detail::unary_op(
        a, Mat<S>(a.value() * k),
        [k](const Mat<S>& g, const Mat<S>&, const Mat<S>&) { return Mat<S>(g * k); });
}

template <typename S>
Var<S> add_const(Var<S> a, S k) {
    return detail::unary_op(
        a, Mat<S>(a.value().array() + k),
        [](const Mat<S>& g, const Mat<S>&, const Mat<S>&) { return g; });
}

// Broadcast-add a 1xD row vector to every row of a NxD matrix.
template <typename S>
Var<S> add_rowvec(Var<S> a, Var<S> b) {
    if (b.rows() != 1 || a.cols() != b.cols()) throw ContractError("add_rowvec: shape mismatch");
    Tape<S>& t = *a.tape;
    Var<S> out = t.push(Mat<S>(t.value(a.id).rowwise() + t.value(b.id).row(0)));
    t.set_backward(out.id, [out, a, b](Tape<S>& tp) {
        const Mat<S>& g = tp.grad(out.id);
        tp.grad(a.id) += g;
        tp.grad(b.id) += g.colwise().sum();
    });
    return out;
}

// ---- elementwise nonlinearities ---- //

template <typename S>
Var<S> exp(Var<S> a) {
    return detail::unary_op(
        a, Mat<S>(a.value().array().exp()),
        [](const Mat<S>& g, const Mat<S>&, const Mat<S>& y) {
            return Mat<S>(g.array() * y.array());
        });
}

template <typename S>
Var<S> log(Var<S> a) {
    return detail::unary_op(
        a, Mat<S>(a.value().array().log()),
        [](const Mat<S>& g, const Mat<S>& x, const Mat<S>&) {
            return Mat<S>(g.array() / x.array());
        });
}

template <typename S>
Var<S> tanh(Var<S> a) {
    return detail::unary_op(
        a, Mat<S>(a.value().array().tanh()),
        [](const Mat<S>& g, const Mat<S>&, const Mat<S>& y) {
            return Mat<S>(g.array() * (S(1) - y.array().square()));
        });
}

template <typename S>
Var<S> sigmoid(Var<S> a) {
    Mat<S> y = (S(1) / (S(1) + (-a.value().array()).exp())).matrix();
    return detail::unary_op(
        a, std::move(y), [](const Mat<S>& g, const Mat<S>&, const Mat<S>& yv) {
            return Mat<S>(g.array() * yv.array() * (S(1) - yv.array()));
        });
}

// softplus(x) = log(1 + e^x), computed in the overflow-safe split form.
template <typename S>
Var<S> softplus(Var<S> a) {
    Mat<S> y = a.value().unaryExpr([](S x) {
        return x > S(30) ? x : std::log(S(1) + std::exp(x));
    });
    return detail::unary_op(
        a, std::move(y), [](const Mat<S>& g, const Mat<S>& x, const Mat<S>&) {
            Mat<S> s = (S(1) / (S(1) + (-x.array()).exp())).matrix();
            return Mat<S>(g.cwiseProduct(s));
        });
}

// GELU, tanh approximation (smooth everywhere, which keeps finite-difference
// gradient checks clean).
template <typename S>
Var<S> gelu(Var<S> a) {
    const S c = std::sqrt(S(2) / S(M_PI));
    const S k = S(0.044715);
    Mat<S> y = a.value().unaryExpr([c, k](S x) {
        return S(0.5) * x * (S(1) + std::tanh(c * (x + k * x * x * x)));
    });
    return detail::unary_op(
        a, std::move(y), [c, k](const Mat<S>& g, const Mat<S>& x, const Mat<S>&) {
            Mat<S> out(x.rows(), x.cols());
            for (Index i = 0; i < x.size(); ++i) {
                S xi = x(i);
                S u = c * (xi + k * xi * xi * xi);
                S th = std::tanh(u);
                S d = S(0.5) * (S(1) + th) +
                      S(0.5) * xi * (S(1) - th * th) * c * (S(1) + S(3) * k * xi * xi);
                out(i) = g(i) * d;
            }
            return out;
        });
}

template <typename S>
Var<S> square(Var<S> a) {
    return detail::unary_op(
        a, Mat<S>(a.value().array().square()),
        [](const Mat<S>& g, const Mat<S>& x, const Mat<S>&) {
            return Mat<S>(S(2) * g.array() * x.array());
        });
}

// ---- structure ---- //

template <typename S>
Var<S> transpose(Var<S> a) {
    return detail::unary_op(
        a, Mat<S>(a.value().transpose()),
        [](const Mat<S>& g, const Mat<S>&, const Mat<S>&) { return Mat<S>(g.transpose()); });
}

template <typename S>
Var<S> rows_block(Var<S> a, Index start, Index n) {
    if (start < 0 || n < 0 || start + n > a.rows()) throw ContractError("rows_block: out of range");
    Tape<S>& t = *a.tape;
    Var<S> out = t.push(Mat<S>(t.value(a.id).middleRows(start, n)));
    t.set_backward(out.id, [out, a, start, n](Tape<S>& tp) {
        tp.grad(a.id).middleRows(start, n) += tp.grad(out.id);
    });
    return out;
}

template <typename S>
Var<S> cols_block(Var<S> a, Index start, Index n) {
    if (start < 0 || n < 0 || start + n > a.cols()) throw ContractError("cols_block: out of range");
    Tape<S>& t = *a.tape;
    Var<S> out = t.push(Mat<S>(t.value(a.id).middleCols(start, n)));
    t.set_backward(out.id, [out, a, start, n](Tape<S>& tp) {
        tp.grad(a.id).middleCols(start, n) += tp.grad(out.id);
    });
    return out;
}

// out.row(i) = a.row(idx[i]); repeated indices accumulate on backward.
template <typename S>
Var<S> gather_rows(Var<S> a, std::vector<Index> idx) {
    Tape<S>& t = *a.tape;
    Mat<S> v(static_cast<Index>(idx.size()), a.cols());
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= a.rows()) throw ContractError("gather_rows: index out of range");
        v.row(static_cast<Index>(i)) = t.value(a.id).row(idx[i]);
    }
    Var<S> out = t.push(std::move(v));
    t.set_backward(out.id, [out, a, idx = std::move(idx)](Tape<S>& tp) {
        const Mat<S>& g = tp.grad(out.id);
        Mat<S>& ga = tp.grad(a.id);
        for (size_t i = 0; i < idx.size(); ++i) ga.row(idx[i]) += g.row(static_cast<Index>(i));
    });
    return out;
}

// Copy of base with base.row(idx[i]) replaced by vals.row(i). Indices must be
// distinct.
template <typename S>
Var<S> scatter_rows_replace(Var<S> base, std::vector<Index> idx, Var<S> vals) {
    if (vals.rows() != static_cast<Index>(idx.size()) || vals.cols() != base.cols())
        throw ContractError("scatter_rows_replace: shape mismatch");
    Tape<S>& t = *base.tape;
    Mat<S> v = t.value(base.id);
    for (size_t i = 0; i < idx.size(); ++i) v.row(idx[i]) = t.value(vals.id).row(static_cast<Index>(i));
    Var<S> out = t.push(std::move(v));
    t.set_backward(out.id, [out, base, vals, idx = std::move(idx)](Tape<S>& tp) {
        Mat<S> g = tp.grad(out.id);
        Mat<S>& gv = tp.grad(vals.id);
        for (size_t i = 0; i < idx.size(); ++i) {
            gv.row(static_cast<Index>(i)) += g.row(idx[i]);
            g.row(idx[i]).setZero();
        }
        tp.grad(base.id) += g;
    });
    return out;
}

// Stack a 1xD row n times into an nxD matrix.
template <typename S>
Var<S> repeat_row(Var<S> a, Index n) {
    if (a.rows() != 1) throw ContractError("repeat_row: expects a 1xD row");
    Tape<S>& t = *a.tape;
    Var<S> out = t.push(Mat<S>(t.value(a.id).replicate(n, 1)));
    t.set_backward(out.id, [out, a](Tape<S>& tp) {
        tp.grad(a.id) += tp.grad(out.id).colwise().sum();
    });
    return out;
}

template <typename S>
Var<S> vcat(const std::vector<Var<S>>& parts) {
    if (parts.empty()) throw ContractError("vcat: empty");
    Tape<S>& t = *parts[0].tape;
    Index rows = 0;
    const Index cols = parts[0].cols();
    for (const auto& p : parts) {
        if (p.cols() != cols) throw ContractError("vcat: column mismatch");
        rows += p.rows();
    }
    Mat<S> v(rows, cols);
    Index at = 0;
    for (const auto& p : parts) {
        v.middleRows(at, p.rows()) = p.value();
        at += p.rows();
    }
    Var<S> out = t.push(std::move(v));
    t.set_backward(out.id, [out, parts](Tape<S>& tp) {
        const Mat<S>& g = tp.grad(out.id);
        Index at2 = 0;
        for (const auto& p : parts) {
            tp.grad(p.id) += g.middleRows(at2, tp.value(p.id).rows());
            at2 += tp.value(p.id).rows();
        }
    });
    return out;
}

template <typename S>
Var<S> hcat(const std::vector<Var<S>>& parts) {
    if (parts.empty()) throw ContractError("hcat: empty");
    Tape<S>& t = *parts[0].tape;
    Index cols = 0;
    const Index rows = parts[0].rows();
    for (const auto& p : parts) {
        if (p.rows() != rows) throw ContractError("hcat: row mismatch");
        cols += p.cols();
    }
    Mat<S> v(rows, cols);
    Index at = 0;
    for (const auto& p : parts) {
        v.middleCols(at, p.cols()) = p.value();
        at += p.cols();
    }
    Var<S> out = t.push(std::move(v));
    t.set_backward(out.id, [out, parts](Tape<S>& tp) {
        const Mat<S>& g = tp.grad(out.id);
        Index at2 = 0;
        for (const auto& p : parts) {
            tp.grad(p.id) += g.middleCols(at2, tp.value(p.id).cols());
            at2 += tp.value(p.id).cols();
        }
    });
    return out;
}

// ---- reductions ---- //

template <typename S>
Var<S> sum_all(Var<S> a) {
    Tape<S>& t = *a.tape;
    Mat<S> v(1, 1);
    v(0, 0) = t.value(a.id).sum();
    Var<S> out = t.push(std::move(v));
    t.set_backward(out.id, [out, a](Tape<S>& tp) {
        tp.grad(a.id).array() += tp.grad(out.id)(0, 0);
    });
    return out;
}

template <typename S>
Var<S> mean_all(Var<S> a) {
    Tape<S>& t = *a.tape;
    const S n = static_cast<S>(a.rows() * a.cols());
    Mat<S> v(1, 1);
    v(0, 0) = t.value(a.id).sum() / n;
    Var<S> out = t.push(std::move(v));
    t.set_backward(out.id, [out, a, n](Tape<S>& tp) {
        tp.grad(a.id).array() += tp.grad(out.id)(0, 0) / n;
    });
    return out;
}

// Mean over consecutive row groups of equal size; (G*g)xD -> GxD.
template <typename S>
Var<S> group_mean_rows(Var<S> a, Index group_size) {
    if (group_size <= 0 || a.rows() % group_size != 0)
        throw ContractError("group_mean_rows: rows not divisible by group size");
    Tape<S>& t = *a.tape;
    const Index groups = a.rows() / group_size;
    Mat<S> v(groups, a.cols());
    for (Index k = 0; k < groups; ++k)
        v.row(k) = t.value(a.id).middleRows(k * group_size, group_size).colwise().mean();
    Var<S> out = t.push(std::move(v));
    t.set_backward(out.id, [out, a, group_size, groups](Tape<S>& tp) {
        const Mat<S>& g = tp.grad(out.id);
        Mat<S>& ga = tp.grad(a.id);
        const S inv = S(1) / static_cast<S>(group_size);
        for (Index k = 0; k < groups; ++k)
            ga.middleRows(k * group_size, group_size).rowwise() += (g.row(k) * inv).eval();
    });
    return out;
}

// ---- row-wise softmax / layer norm ---- //

template <typename S>
Var<S> softmax_rows(Var<S> a) {
    Tape<S>& t = *a.tape;
    Mat<S> y = t.value(a.id);
    for (Index r = 0; r < y.rows(); ++r) {
        const S m = y.row(r).maxCoeff();
        y.row(r) = (y.row(r).array() - m).exp();
        y.row(r) /= y.row(r).sum();
    }
    Var<S> out = t.push(std::move(y));
    t.set_backward(out.id, [out, a](Tape<S>& tp) {
        const Mat<S>& g = tp.grad(out.id);
        const Mat<S>& yv = tp.value(out.id);
        Mat<S>& ga = tp.grad(a.id);
        for (Index r = 0; r < yv.rows(); ++r) {
            const S dot = g.row(r).dot(yv.row(r));
            ga.row(r).array() += yv.row(r).array() * (g.row(r).array() - dot);
        }
    });
    return out;
}

// Row-wise layer norm with learnable 1xD gain/bias.
template <typename S>
Var<S> layernorm_rows(Var<S> x, Var<S> gamma, Var<S> beta, S eps = S(1e-5)) {
    if (gamma.rows() != 1 || beta.rows() != 1 || gamma.cols() != x.cols() || beta.cols() != x.cols())
        throw ContractError("layernorm_rows: gain/bias must be 1xD");
    Tape<S>& t = *x.tape;
    const Mat<S>& xv = t.value(x.id);
    const Index n = xv.rows(), d = xv.cols();
    Mat<S> xhat(n, d);
    Vec<S> inv_std(n);
    for (Index r = 0; r < n; ++r) {
        const S mu = xv.row(r).mean();
        const S var = (xv.row(r).array() - mu).square().sum() / static_cast<S>(d);
        inv_std(r) = S(1) / std::sqrt(var + eps);
        xhat.row(r) = (xv.row(r).array() - mu) * inv_std(r);
    }
    Mat<S> y = xhat;
    for (Index r = 0; r < n; ++r)
        y.row(r) = y.row(r).cwiseProduct(t.value(gamma.id).row(0)) + t.value(beta.id).row(0);
    Var<S> out = t.push(std::move(y));
    t.set_backward(out.id, [out, x, gamma, beta, xhat = std::move(xhat),
                            inv_std = std::move(inv_std)](Tape<S>& tp) {
        const Mat<S>& g = tp.grad(out.id);
        const Index n2 = g.rows(), d2 = g.cols();
        tp.grad(beta.id) += g.colwise().sum();
        tp.grad(gamma.id) += (g.cwiseProduct(xhat)).colwise().sum();
        Mat<S>& gx = tp.grad(x.id);
        const auto& gam = tp.value(gamma.id);
        for (Index r = 0; r < n2; ++r) {
            Vec<S> gxh = (g.row(r).cwiseProduct(gam.row(0))).transpose();
            const S mean_gxh = gxh.mean();
            const S mean_gxh_xhat = gxh.dot(xhat.row(r).transpose()) / static_cast<S>(d2);
            gx.row(r).array() +=
                inv_std(r) *
                (gxh.transpose().array() - mean_gxh - xhat.row(r).array() * mean_gxh_xhat);
        }
    });
    return out;
}

// ---- graph control ---- //

// Stop-gradient: same value, no backward edge.
template <typename S>
Var<S> detach(Var<S> a) {
    return a.tape->constant(a.value());
}

// Affine layer y = xW + b with b as 1xD row.
template <typename S>
Var<S> affine(Var<S> x, Var<S> w, Var<S> b) {
    return add_rowvec(matmul(x, w), b);
}

}  // namespace khwm
