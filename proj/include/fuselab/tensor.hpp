#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>

#include "fuselab/errors.hpp"

namespace fuselab {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

// Debug-mode finite checks on op outputs. Off by default; tests and the
// verify command switch it on.
inline bool& debug_checks() {
    static bool on = false;
    return on;
}

// Fault-injection hook for the verify command: when set to a known op name,
// that op's backward rule is deliberately perturbed so the gradient suite
// can demonstrate it catches broken rules.
inline std::string& fault_injection() {
    static std::string fault;
    return fault;
}

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // allocated lazily
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void(Node<T>&)> backward;  // scatter self.grad into parents

    std::int64_t numel() const { return static_cast<std::int64_t>(value.size()); }

    T* grad_data() {
        if (grad.empty()) grad.assign(value.size(), T(0));
        return grad.data();
    }
};

// Shared-node handle with value semantics on the handle itself. Values are
// immutable after creation except for grad buffers.
template <typename T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

    Tensor(Shape shape, std::vector<T> data, bool requires_grad = false) {
        if (numel(shape) != static_cast<std::int64_t>(data.size()))
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        node_ = std::make_shared<Node<T>>();
        node_->shape = std::move(shape);
        node_->value = std::move(data);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return Tensor(std::move(shape), std::vector<T>(numel(shape), T(0)), requires_grad);
    }
    static Tensor full(Shape shape, T v, bool requires_grad = false) {
        auto n = numel(shape);
        return Tensor(std::move(shape), std::vector<T>(n, v), requires_grad);
    }
    static Tensor scalar(T v, bool requires_grad = false) {
        return Tensor(Shape{1}, std::vector<T>{v}, requires_grad);
    }

    bool valid() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::int64_t dim(std::size_t i) const { return node_->shape[i]; }
    std::size_t rank() const { return node_->shape.size(); }
    std::int64_t size() const { return node_->numel(); }
    const std::vector<T>& data() const { return node_->value; }
    std::vector<T>& mutable_data() { return node_->value; }
    bool requires_grad() const { return node_->requires_grad; }
    const std::vector<T>& grad() const { return node_->grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    void zero_grad() { node_->grad.assign(node_->value.size(), T(0)); }
    void clear_grad() { node_->grad.clear(); }
    std::shared_ptr<Node<T>> node() const { return node_; }

    T item() const {
        if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
        return node_->value[0];
    }

    // Same buffer, graph edge severed.
    Tensor detach() const {
        auto n = std::make_shared<Node<T>>();
        n->shape = node_->shape;
        n->value = node_->value;
        n->requires_grad = false;
        return Tensor(n);
    }

private:
    std::shared_ptr<Node<T>> node_;
};

namespace detail {

template <typename T>
void check_finite_out(const Node<T>& n, const char* op) {
    if (!debug_checks()) return;
    for (T v : n.value)
        if (!std::isfinite(static_cast<double>(v)))
            throw NumericError(std::string(op) + ": non-finite value in output");
}

template <typename T>
std::shared_ptr<Node<T>> make_result(Shape shape, std::vector<Tensor<T>> parents) {
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value.assign(numel(n->shape), T(0));
    for (auto& p : parents)
        if (p.requires_grad()) n->requires_grad = true;
    if (n->requires_grad)
        for (auto& p : parents) n->parents.push_back(p.node());
    return n;
}

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<EMat<T>>;
template <typename T>
using CMapM = Eigen::Map<const EMat<T>>;

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

template <typename T, typename Fwd, typename Bwd>
Tensor<T> binary_elementwise(const Tensor<T>& a, const Tensor<T>& b, const char* op,
                             Fwd fwd, Bwd bwd) {
    check_same_shape(a, b, op);
    auto r = detail::make_result<T>(a.shape(), {a, b});
    const auto n = r->numel();
    for (std::int64_t i = 0; i < n; ++i) r->value[i] = fwd(a.data()[i], b.data()[i]);
    detail::check_finite_out(*r, op);
    if (r->requires_grad) {
        auto an = a.node(), bn = b.node();
        r->backward = [an, bn, bwd](Node<T>& self) {
            T* ga = an->requires_grad ? an->grad_data() : nullptr;
            T* gb = bn->requires_grad ? bn->grad_data() : nullptr;
            const auto n = self.numel();
            for (std::int64_t i = 0; i < n; ++i) {
                T da, db;
                bwd(an->value[i], bn->value[i], self.grad[i], da, db);
                if (ga) ga[i] += da;
                if (gb) gb[i] += db;
            }
        };
    }
    return Tensor<T>(r);
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_elementwise(a, b, "add",
        [](T x, T y) { return x + y; },
        [](T, T, T g, T& da, T& db) { da = g; db = g; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_elementwise(a, b, "sub",
        [](T x, T y) { return x - y; },
        [](T, T, T g, T& da, T& db) { da = g; db = -g; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_elementwise(a, b, "mul",
        [](T x, T y) { return x * y; },
        [](T x, T y, T g, T& da, T& db) { da = g * y; db = g * x; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    auto r = detail::make_result<T>(a.shape(), {a});
    const auto n = r->numel();
    for (std::int64_t i = 0; i < n; ++i) r->value[i] = a.data()[i] * s;
    if (r->requires_grad) {
        auto an = a.node();
        r->backward = [an, s](Node<T>& self) {
            T* ga = an->grad_data();
            const auto n = self.numel();
            for (std::int64_t i = 0; i < n; ++i) ga[i] += self.grad[i] * s;
        };
    }
    return Tensor<T>(r);
}

template <typename T>
Tensor<T> lrelu(const Tensor<T>& x, T slope) {
    if (!(slope > T(0) && slope < T(1)))
        throw ContractError("lrelu: slope must lie in (0,1)");
    auto r = detail::make_result<T>(x.shape(), {x});
    const auto n = r->numel();
    for (std::int64_t i = 0; i < n; ++i) {
        T v = x.data()[i];
        r->value[i] = v >= T(0) ? v : slope * v;
    }
    if (r->requires_grad) {
        auto xn = x.node();
        T bwd_slope = slope;
        if (fault_injection() == "lrelu") bwd_slope = slope + T(0.25);  // verify-mode fault
        r->backward = [xn, bwd_slope](Node<T>& self) {
            T* g = xn->grad_data();
            const auto n = self.numel();
            for (std::int64_t i = 0; i < n; ++i)
                g[i] += self.grad[i] * (xn->value[i] >= T(0) ? T(1) : bwd_slope);
        };
    }
    return Tensor<T>(r);
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
    auto r = detail::make_result<T>(x.shape(), {x});
    const auto n = r->numel();
    for (std::int64_t i = 0; i < n; ++i) r->value[i] = std::abs(x.data()[i]);
    if (r->requires_grad) {
        auto xn = x.node();
        r->backward = [xn](Node<T>& self) {
            T* g = xn->grad_data();
            const auto n = self.numel();
            // subgradient at 0 taken as 0
            for (std::int64_t i = 0; i < n; ++i) {
                T v = xn->value[i];
                g[i] += self.grad[i] * (v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)));
            }
        };
    }
    return Tensor<T>(r);
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    auto r = detail::make_result<T>(Shape{1}, {x});
    // pairwise-free sequential reduction; order is fixed for determinism
    T acc = T(0);
    for (T v : x.data()) acc += v;
    r->value[0] = acc;
    if (r->requires_grad) {
        auto xn = x.node();
        r->backward = [xn](Node<T>& self) {
            T* g = xn->grad_data();
            const T s = self.grad[0];
            const auto n = xn->numel();
            for (std::int64_t i = 0; i < n; ++i) g[i] += s;
        };
    }
    return Tensor<T>(r);
}

// Concatenation along the last axis; leading extents must agree.
template <typename T>
Tensor<T> concat_last(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != b.rank() || a.rank() < 1)
        throw ShapeError("concat_last: rank mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    for (std::size_t i = 0; i + 1 < a.rank(); ++i)
        if (a.shape()[i] != b.shape()[i])
            throw ShapeError("concat_last: leading extents differ, " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    const std::int64_t ca = a.dim(a.rank() - 1), cb = b.dim(b.rank() - 1);
    const std::int64_t rows = a.size() / ca;
    Shape out_shape(a.shape());
    out_shape.back() = ca + cb;
    auto r = detail::make_result<T>(out_shape, {a, b});
    for (std::int64_t i = 0; i < rows; ++i) {
        std::copy_n(a.data().data() + i * ca, ca, r->value.data() + i * (ca + cb));
        std::copy_n(b.data().data() + i * cb, cb, r->value.data() + i * (ca + cb) + ca);
    }
    if (r->requires_grad) {
        auto an = a.node(), bn = b.node();
        r->backward = [an, bn, rows, ca, cb](Node<T>& self) {
            T* ga = an->requires_grad ? an->grad_data() : nullptr;
            T* gb = bn->requires_grad ? bn->grad_data() : nullptr;
            for (std::int64_t i = 0; i < rows; ++i) {
                const T* g = self.grad.data() + i * (ca + cb);
                if (ga)
                    for (std::int64_t j = 0; j < ca; ++j) ga[i * ca + j] += g[j];
                if (gb)
                    for (std::int64_t j = 0; j < cb; ++j) gb[i * cb + j] += g[ca + j];
            }
        };
    }
    return Tensor<T>(r);
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
    if (numel(new_shape) != x.size())
        throw ShapeError("reshape: element count mismatch " + shape_str(x.shape()) +
                         " -> " + shape_str(new_shape));
    auto r = detail::make_result<T>(new_shape, {x});
    r->value = x.data();
    if (r->requires_grad) {
        auto xn = x.node();
        r->backward = [xn](Node<T>& self) {
            T* g = xn->grad_data();
            const auto n = self.numel();
            for (std::int64_t i = 0; i < n; ++i) g[i] += self.grad[i];
        };
    }
    return Tensor<T>(r);
}

namespace detail {

inline std::vector<std::int64_t> row_major_strides(const Shape& s) {
    std::vector<std::int64_t> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
    return st;
}

// dst[i0,i1,...] = src[i_{axes[0]}, ...]; returns flat index map dst->src.
inline void permute_index_map(const Shape& src_shape, const std::vector<int>& axes,
                              std::vector<std::int64_t>& map_out, Shape& dst_shape) {
    dst_shape.clear();
    for (int a : axes) dst_shape.push_back(src_shape[a]);
    const auto src_strides = row_major_strides(src_shape);
    const auto n = numel(src_shape);
    map_out.resize(n);
    std::vector<std::int64_t> idx(dst_shape.size(), 0);
    for (std::int64_t flat = 0; flat < n; ++flat) {
        std::int64_t src_flat = 0;
        for (std::size_t d = 0; d < axes.size(); ++d)
            src_flat += idx[d] * src_strides[axes[d]];
        map_out[flat] = src_flat;
        for (int d = static_cast<int>(dst_shape.size()) - 1; d >= 0; --d) {
            if (++idx[d] < dst_shape[d]) break;
            idx[d] = 0;
        }
    }
}

}  // namespace detail

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& axes) {
    if (axes.size() != x.rank())
        throw ShapeError("permute: axes rank mismatch for " + shape_str(x.shape()));
    std::vector<std::int64_t> map;
    Shape dst_shape;
    detail::permute_index_map(x.shape(), axes, map, dst_shape);
    auto r = detail::make_result<T>(dst_shape, {x});
    const auto n = r->numel();
    for (std::int64_t i = 0; i < n; ++i) r->value[i] = x.data()[map[i]];
    if (r->requires_grad) {
        auto xn = x.node();
        auto map_copy = std::make_shared<std::vector<std::int64_t>>(std::move(map));
        r->backward = [xn, map_copy](Node<T>& self) {
            T* g = xn->grad_data();
            const auto n = self.numel();
            for (std::int64_t i = 0; i < n; ++i) g[(*map_copy)[i]] += self.grad[i];
        };
    }
    return Tensor<T>(r);
}

// ---------------------------------------------------------------------------
// matmul / batched matmul
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    auto r = detail::make_result<T>(Shape{m, n}, {a, b});
    detail::CMapM<T> A(a.data().data(), m, k), B(b.data().data(), k, n);
    detail::MapM<T>(r->value.data(), m, n).noalias() = A * B;
    detail::check_finite_out(*r, "matmul");
    if (r->requires_grad) {
        auto an = a.node(), bn = b.node();
        r->backward = [an, bn, m, k, n](Node<T>& self) {
            detail::CMapM<T> A(an->value.data(), m, k), B(bn->value.data(), k, n);
            detail::CMapM<T> G(self.grad.data(), m, n);
            if (an->requires_grad)
                detail::MapM<T>(an->grad_data(), m, k).noalias() += G * B.transpose();
            if (bn->requires_grad)
                detail::MapM<T>(bn->grad_data(), k, n).noalias() += A.transpose() * G;
        };
    }
    return Tensor<T>(r);
}

// Batched matmul over the leading axis, with optional operand transposes:
// a: [g, m, k] (or [g, k, m] when trans_a), b: [g, k, n] (or [g, n, k]).
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool trans_a = false,
              bool trans_b = false) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0))
        throw ShapeError("bmm: operands must be 3-D with equal batch, got " +
                         shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const std::int64_t g = a.dim(0);
    const std::int64_t m = trans_a ? a.dim(2) : a.dim(1);
    const std::int64_t ka = trans_a ? a.dim(1) : a.dim(2);
    const std::int64_t kb = trans_b ? b.dim(2) : b.dim(1);
    const std::int64_t n = trans_b ? b.dim(1) : b.dim(2);
    if (ka != kb)
        throw ShapeError("bmm: inner extents differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    auto r = detail::make_result<T>(Shape{g, m, n}, {a, b});
    const std::int64_t sa = a.dim(1) * a.dim(2), sb = b.dim(1) * b.dim(2), sr = m * n;
    for (std::int64_t i = 0; i < g; ++i) {
        detail::CMapM<T> A(a.data().data() + i * sa, a.dim(1), a.dim(2));
        detail::CMapM<T> B(b.data().data() + i * sb, b.dim(1), b.dim(2));
        detail::MapM<T> R(r->value.data() + i * sr, m, n);
        if (!trans_a && !trans_b) R.noalias() = A * B;
        else if (trans_a && !trans_b) R.noalias() = A.transpose() * B;
        else if (!trans_a && trans_b) R.noalias() = A * B.transpose();
        else R.noalias() = A.transpose() * B.transpose();
    }
    detail::check_finite_out(*r, "bmm");
    if (r->requires_grad) {
        auto an = a.node(), bn = b.node();
        r->backward = [an, bn, g, m, n, sa, sb, sr, trans_a, trans_b](Node<T>& self) {
            for (std::int64_t i = 0; i < g; ++i) {
                detail::CMapM<T> A(an->value.data() + i * sa, an->shape[1], an->shape[2]);
                detail::CMapM<T> B(bn->value.data() + i * sb, bn->shape[1], bn->shape[2]);
                detail::CMapM<T> G(self.grad.data() + i * sr, m, n);
                if (an->requires_grad) {
                    detail::MapM<T> GA(an->grad_data() + i * sa, an->shape[1], an->shape[2]);
                    if (!trans_a && !trans_b) GA.noalias() += G * B.transpose();
                    else if (trans_a && !trans_b) GA.noalias() += B * G.transpose();
                    else if (!trans_a && trans_b) GA.noalias() += G * B;
                    else GA.noalias() += B.transpose() * G.transpose();
                }
                if (bn->requires_grad) {
                    detail::MapM<T> GB(bn->grad_data() + i * sb, bn->shape[1], bn->shape[2]);
                    if (!trans_a && !trans_b) GB.noalias() += A.transpose() * G;
                    else if (trans_a && !trans_b) GB.noalias() += A * G;
                    else if (!trans_a && trans_b) GB.noalias() += G.transpose() * A;
                    else GB.noalias() += G.transpose() * A.transpose();
                }
            }
        };
    }
    return Tensor<T>(r);
}

// ---------------------------------------------------------------------------
// softmax over the last axis
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
    if (x.rank() < 1) throw ShapeError("softmax_rows: rank-0 input");
    if (debug_checks())
        for (T v : x.data())
            if (!std::isfinite(static_cast<double>(v)))
                throw NumericError("softmax_rows: non-finite input");
    const std::int64_t c = x.dim(x.rank() - 1);
    const std::int64_t rows = x.size() / c;
    auto r = detail::make_result<T>(x.shape(), {x});
    using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
    for (std::int64_t i = 0; i < rows; ++i) {
        Eigen::Map<const Arr> in(x.data().data() + i * c, c);
        Eigen::Map<Arr> out(r->value.data() + i * c, c);
        // row-max subtraction keeps exp in range
        out = (in - in.maxCoeff()).exp();
        out /= out.sum();
    }
    if (r->requires_grad) {
        auto xn = x.node();
        r->backward = [xn, c, rows](Node<T>& self) {
            T* g = xn->grad_data();
            for (std::int64_t i = 0; i < rows; ++i) {
                const T* y = self.value.data() + i * c;
                const T* gy = self.grad.data() + i * c;
                T dot = T(0);
                for (std::int64_t j = 0; j < c; ++j) dot += gy[j] * y[j];
                T* gx = g + i * c;
                for (std::int64_t j = 0; j < c; ++j) gx[j] += y[j] * (gy[j] - dot);
            }
        };
    }
    return Tensor<T>(r);
}

// ---------------------------------------------------------------------------
// fully connected: affine map along the last axis
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> fully_connected(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    if (w.rank() != 2)
        throw ShapeError("fully_connected: weight must be 2-D, got " + shape_str(w.shape()));
    const std::int64_t din = w.dim(0), dout = w.dim(1);
    if (x.rank() < 1 || x.dim(x.rank() - 1) != din)
        throw ShapeError("fully_connected: input " + shape_str(x.shape()) +
                         " does not end in Din=" + std::to_string(din));
    if (b.rank() != 1 || b.dim(0) != dout)
        throw ShapeError("fully_connected: bias " + shape_str(b.shape()) +
                         " must be [" + std::to_string(dout) + "]");
    const std::int64_t rows = x.size() / din;
    Shape out_shape(x.shape());
    out_shape.back() = dout;
    auto r = detail::make_result<T>(out_shape, {x, w, b});
    detail::CMapM<T> X(x.data().data(), rows, din), W(w.data().data(), din, dout);
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> B(b.data().data(), dout);
    detail::MapM<T> Y(r->value.data(), rows, dout);
    Y.noalias() = X * W;
    Y.rowwise() += B;
    detail::check_finite_out(*r, "fully_connected");
    if (r->requires_grad) {
        auto xn = x.node(), wn = w.node(), bn = b.node();
        r->backward = [xn, wn, bn, rows, din, dout](Node<T>& self) {
            detail::CMapM<T> X(xn->value.data(), rows, din), W(wn->value.data(), din, dout);
            detail::CMapM<T> G(self.grad.data(), rows, dout);
            if (xn->requires_grad)
                detail::MapM<T>(xn->grad_data(), rows, din).noalias() += G * W.transpose();
            if (wn->requires_grad)
                detail::MapM<T>(wn->grad_data(), din, dout).noalias() += X.transpose() * G;
            if (bn->requires_grad) {
                Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> GB(bn->grad_data(), dout);
                GB += G.colwise().sum();
            }
        };
    }
    return Tensor<T>(r);
}

// ---------------------------------------------------------------------------
// backward pass
// ---------------------------------------------------------------------------

template <typename T>
void backward(const Tensor<T>& loss) {
    if (loss.size() != 1)
        throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    if (!loss.requires_grad()) return;

    // iterative post-order topological sort
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    struct Frame { Node<T>* n; std::size_t next; };
    std::vector<Frame> stack{{loss.node().get(), 0}};
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& f = stack.back();
        if (f.next < f.n->parents.size()) {
            Node<T>* p = f.n->parents[f.next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }

    // interior grads are zeroed per pass; leaves accumulate across calls
    for (Node<T>* n : order)
        if (!n->parents.empty()) n->grad.assign(n->value.size(), T(0));
    loss.node()->grad_data()[0] += T(1);

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward) n->backward(*n);
    }
}

// ---------------------------------------------------------------------------
// gradient verification harness
// ---------------------------------------------------------------------------

// Compares the analytic gradient of a scalar-valued f at x against central
// finite differences. Returns the max relative error with denominator
// max(|analytic|, |numeric|, 1e-8).
inline double finite_diff_check(
    const std::function<Tensor<double>(const Tensor<double>&)>& f,
    const Tensor<double>& x, double h = 1e-5) {
    Tensor<double> leaf(x.shape(), x.data(), /*requires_grad=*/true);
    Tensor<double> out = f(leaf);
    backward(out);
    std::vector<double> analytic = leaf.grad();
    if (analytic.empty()) analytic.assign(x.size(), 0.0);

    double max_rel = 0.0;
    std::vector<double> base = x.data();
    for (std::int64_t i = 0; i < x.size(); ++i) {
        auto probe = [&](double delta) {
            std::vector<double> v = base;
            v[i] += delta;
            return f(Tensor<double>(x.shape(), v)).item();
        };
        const double num = (probe(h) - probe(-h)) / (2.0 * h);
        const double diff = std::abs(analytic[i] - num);
        // absolute pass band: below the central-difference noise floor the
        // relative quotient is meaningless (near-zero gradients)
        if (diff <= 1e-9) continue;
        const double denom = std::max({std::abs(analytic[i]), std::abs(num), 1e-8});
        max_rel = std::max(max_rel, diff / denom);
    }
    return max_rel;
}

}  // namespace fuselab
