#pragma once

#include "tgpt/error.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

/// Dense double-precision arrays with reverse-mode differentiation on a tape.
namespace tgpt::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
    return s + "]";
}

/// Row-major n-dimensional array. Rank 0 is a scalar.
class Array {
public:
    Array() = default;
    explicit Array(Shape shape, double fill = 0.0) : shape_(std::move(shape)), data_(numel(shape_), fill) { check_dims(); }
    Array(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        check_dims();
        if (data_.size() != numel(shape_))
            throw ShapeError("array data has " + std::to_string(data_.size()) + " entries, shape " + shape_str(shape_) + " needs " +
                             std::to_string(numel(shape_)));
    }

    static Array scalar(double v) { return Array(Shape{}, std::vector<double>{v}); }

    [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
    [[nodiscard]] std::size_t rank() const noexcept { return shape_.size(); }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
    [[nodiscard]] std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

    [[nodiscard]] std::span<double> data() noexcept { return data_; }
    [[nodiscard]] std::span<const double> data() const noexcept { return data_; }
    [[nodiscard]] std::vector<double>& storage() noexcept { return data_; }
    [[nodiscard]] const std::vector<double>& storage() const noexcept { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    [[nodiscard]] double item() const {
        if (data_.size() != 1) throw ShapeError("item() on array of shape " + shape_str(shape_));
        return data_[0];
    }

    [[nodiscard]] bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    friend bool operator==(const Array&, const Array&) = default;

private:
    void check_dims() const {
        for (auto d : shape_)
            if (d == 0) throw ShapeError("zero-sized dimension in shape " + shape_str(shape_));
    }

    Shape shape_;
    std::vector<double> data_;
};

class Tape;

/// Handle to a value recorded on a tape.
class Tensor {
public:
    Tensor() = default;

    [[nodiscard]] const Array& value() const;
    [[nodiscard]] const Shape& shape() const { return value().shape(); }
    [[nodiscard]] bool requires_grad() const;
    [[nodiscard]] std::size_t node_id() const noexcept { return id_; }
    [[nodiscard]] Tape* tape() const noexcept { return tape_; }
    [[nodiscard]] bool valid() const noexcept { return tape_ != nullptr; }

private:
    friend class Tape;
    Tensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Gradients of a scalar with respect to each leaf that requires them, keyed by node id.
class Gradients {
public:
    [[nodiscard]] const Array* find(const Tensor& t) const {
        const auto it = grads_.find(t.node_id());
        return it == grads_.end() ? nullptr : &it->second;
    }
    [[nodiscard]] const Array& at(const Tensor& t) const {
        const auto* g = find(t);
        if (!g) throw Error("no gradient recorded for node " + std::to_string(t.node_id()));
        return *g;
    }
    [[nodiscard]] const std::map<std::size_t, Array>& map() const noexcept { return grads_; }

private:
    friend class Tape;
    std::map<std::size_t, Array> grads_;
};

/**
 * @brief Linear record of operations in execution order.
 *
 * Nodes are appended by the op functions below. backward() walks the record
 * once in reverse and consumes the tape; a second call is an error. The
 * tape is pinned in memory because tensors refer to it by address.
 */
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, const Array& out_grad)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Records an input value. Leaves with requires_grad receive gradients.
    Tensor leaf(Array value, bool requires_grad = false) {
        check_open();
        nodes_.push_back(Node{std::move(value), Array{}, requires_grad, true, nullptr});
        return Tensor(this, nodes_.size() - 1);
    }

    Tensor constant(Array value) { return leaf(std::move(value), false); }

    /// Appends an op result. @p backward is kept only when a parent requires grad.
    Tensor record(Array value, std::initializer_list<Tensor> parents, const char* op, BackwardFn backward) {
        check_open();
        if (!value.all_finite()) throw NumericError(std::string("non-finite result in ") + op);
        bool needs = false;
        for (const auto& p : parents) {
            if (p.tape_ != this) throw Error(std::string(op) + ": operand belongs to a different tape");
            needs = needs || nodes_[p.id_].requires_grad;
        }
        nodes_.push_back(Node{std::move(value), Array{}, needs, false, needs ? std::move(backward) : nullptr});
        return Tensor(this, nodes_.size() - 1);
    }

    Tensor record(Array value, const std::vector<Tensor>& parents, const char* op, BackwardFn backward) {
        check_open();
        if (!value.all_finite()) throw NumericError(std::string("non-finite result in ") + op);
        bool needs = false;
        for (const auto& p : parents) {
            if (p.tape_ != this) throw Error(std::string(op) + ": operand belongs to a different tape");
            needs = needs || nodes_[p.id_].requires_grad;
        }
        nodes_.push_back(Node{std::move(value), Array{}, needs, false, needs ? std::move(backward) : nullptr});
        return Tensor(this, nodes_.size() - 1);
    }

    [[nodiscard]] const Array& value(std::size_t id) const { return nodes_.at(id).value; }
    [[nodiscard]] bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

    /// Gradient accumulator of a node, or nullptr when the node needs no gradient.
    Array* grad_sink(const Tensor& t) {
        auto& node = nodes_[t.id_];
        if (!node.requires_grad) return nullptr;
        if (node.grad.size() == 0) node.grad = Array(node.value.shape(), 0.0);
        return &node.grad;
    }

    void accumulate(const Tensor& t, std::span<const double> g) {
        if (Array* sink = grad_sink(t)) {
            auto dst = sink->data();
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
        }
    }

    [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }
    [[nodiscard]] bool consumed() const noexcept { return consumed_; }

    /**
     * @brief Reverse pass from a scalar loss.
     *
     * Gradients sum over every use of a node. Only leaves created with
     * requires_grad appear in the result.
     */
    Gradients backward(const Tensor& loss) {
        if (consumed_) throw Error("backward called on a consumed tape");
        if (loss.tape_ != this) throw Error("loss belongs to a different tape");
        if (nodes_.empty()) throw Error("backward on an empty tape");
        if (loss.value().size() != 1) throw ShapeError("backward needs a scalar loss, got " + shape_str(loss.shape()));
        consumed_ = true;
        Gradients out;
        if (!nodes_[loss.id_].requires_grad) return out;
        nodes_[loss.id_].grad = Array(nodes_[loss.id_].value.shape(), 1.0);
        for (std::size_t i = loss.id_ + 1; i-- > 0;) {
            auto& node = nodes_[i];
            if (!node.requires_grad || node.grad.size() == 0) continue;
            if (node.backward) {
                auto fn = std::move(node.backward);
                const Array grad = std::move(node.grad);
                node.grad = Array{};
                fn(*this, grad);
            } else if (node.is_leaf) {
                out.grads_.emplace(i, std::move(node.grad));
                node.grad = Array{};
            }
        }
        return out;
    }

private:
    struct Node {
        Array value;
        Array grad;
        bool requires_grad;
        bool is_leaf;
        BackwardFn backward;
    };

    void check_open() const {
        if (consumed_) throw Error("tape already consumed by backward");
    }

    std::vector<Node> nodes_;
    bool consumed_ = false;
};

inline const Array& Tensor::value() const {
    if (!tape_) throw Error("use of an empty tensor handle");
    return tape_->value(id_);
}

inline bool Tensor::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

inline Tape& same_tape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.tape() || a.tape() != b.tape()) throw Error(std::string(op) + ": operands must share a tape");
    return *a.tape();
}

inline bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.begin(), small.end(), big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

/// Reduces a gradient of the broadcast shape back onto the smaller operand.
inline std::vector<double> reduce_leading(std::span<const double> g, std::size_t small) {
    std::vector<double> out(small, 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) out[i % small] += g[i];
    return out;
}

enum class BinaryOp { Add, Sub, Mul };

inline Tensor binary(const Tensor& a, const Tensor& b, BinaryOp op, const char* name) {
    Tape& tape = same_tape(a, b, name);
    const Array& av = a.value();
    const Array& bv = b.value();
    // b broadcasts over the leading axes of a, or the other way round.
    const bool b_small = av.shape() != bv.shape() && is_suffix(bv.shape(), av.shape());
    const bool a_small = av.shape() != bv.shape() && !b_small && is_suffix(av.shape(), bv.shape());
    if (av.shape() != bv.shape() && !a_small && !b_small)
        throw ShapeError(std::string(name) + ": cannot broadcast " + shape_str(av.shape()) + " with " + shape_str(bv.shape()));
    const Shape& out_shape = a_small ? bv.shape() : av.shape();
    Array out(out_shape);
    const std::size_t n = out.size(), na = av.size(), nb = bv.size();
    const double* pa = av.data().data();
    const double* pb = bv.data().data();
    double* po = out.data().data();
    switch (op) {
        case BinaryOp::Add: for (std::size_t i = 0; i < n; ++i) po[i] = pa[i % na] + pb[i % nb]; break;
        case BinaryOp::Sub: for (std::size_t i = 0; i < n; ++i) po[i] = pa[i % na] - pb[i % nb]; break;
        case BinaryOp::Mul: for (std::size_t i = 0; i < n; ++i) po[i] = pa[i % na] * pb[i % nb]; break;
    }
    return tape.record(std::move(out), {a, b}, name, [a, b, op, na, nb](Tape& t, const Array& g) {
        const auto gd = g.data();
        const std::size_t n = gd.size();
        if (Array* sa = t.grad_sink(a)) {
            std::vector<double> ga(n);
            if (op == BinaryOp::Mul) {
                const auto bd = b.value().data();
                for (std::size_t i = 0; i < n; ++i) ga[i] = gd[i] * bd[i % nb];
            } else {
                std::copy(gd.begin(), gd.end(), ga.begin());
            }
            const auto r = na == n ? ga : reduce_leading(ga, na);
            auto dst = sa->data();
            for (std::size_t i = 0; i < na; ++i) dst[i] += r[i];
        }
        if (Array* sb = t.grad_sink(b)) {
            std::vector<double> gb(n);
            if (op == BinaryOp::Mul) {
                const auto ad = a.value().data();
                for (std::size_t i = 0; i < n; ++i) gb[i] = gd[i] * ad[i % na];
            } else if (op == BinaryOp::Sub) {
                for (std::size_t i = 0; i < n; ++i) gb[i] = -gd[i];
            } else {
                std::copy(gd.begin(), gd.end(), gb.begin());
            }
            const auto r = nb == n ? gb : reduce_leading(gb, nb);
            auto dst = sb->data();
            for (std::size_t i = 0; i < nb; ++i) dst[i] += r[i];
        }
    });
}

/// Elementwise unary op given value and derivative-from-(input, output) functions.
template <class F, class D>
Tensor unary(const Tensor& x, const char* name, F f, D df) {
    Tape& tape = *x.tape();
    const Array& xv = x.value();
    Array out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
    const std::size_t out_id = tape.size();
    return tape.record(std::move(out), {x}, name, [x, df, out_id](Tape& t, const Array& g) {
        if (Array* sink = t.grad_sink(x)) {
            const auto& xv = x.value();
            const auto& yv = t.value(out_id);
            auto dst = sink->data();
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i] * df(xv[i], yv[i]);
        }
    });
}

inline std::size_t normalize_axis(long axis, std::size_t rank, const char* op) {
    const long r = static_cast<long>(rank);
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw ShapeError(std::string(op) + ": axis out of range");
    return static_cast<std::size_t>(axis);
}

/// (outer, axis length, inner) decomposition of a shape around @p axis.
inline std::tuple<std::size_t, std::size_t, std::size_t> split_at(const Shape& s, std::size_t axis) {
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    return {outer, s[axis], inner};
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinaryOp::Add, "add"); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinaryOp::Sub, "sub"); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinaryOp::Mul, "mul"); }

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

/// Multiplies every entry by a constant.
inline Tensor scale(const Tensor& x, double c) {
    return detail::unary(x, "scale", [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline Tensor exp(const Tensor& x) {
    return detail::unary(x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& x) {
    return detail::unary(x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Tensor sqrt(const Tensor& x) {
    return detail::unary(x, "sqrt", [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

/// Subgradient 0 at the origin.
inline Tensor abs(const Tensor& x) {
    return detail::unary(
        x, "abs", [](double v) { return std::abs(v); }, [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

// tanh approximation of GELU.
inline constexpr double kGeluK = 0.7978845608028654;  // sqrt(2 / pi)
inline constexpr double kGeluC = 0.044715;

inline double gelu_value(double x) {
    return 0.5 * x * (1.0 + std::tanh(kGeluK * (x + kGeluC * x * x * x)));
}

inline double gelu_derivative(double x) {
    const double t = std::tanh(kGeluK * (x + kGeluC * x * x * x));
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluK * (1.0 + 3.0 * kGeluC * x * x);
}

inline Tensor gelu(const Tensor& x) {
    return detail::unary(x, "gelu", gelu_value, [](double v, double) { return gelu_derivative(v); });
}

/**
 * @brief Matrix product over the last two axes.
 *
 * Either both operands have the same rank and leading (batch) dimensions, or
 * @p b is a rank-2 matrix applied to every leading slice of @p a.
 */
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    using detail::ConstMatMap;
    using detail::MatMap;
    Tape& tape = detail::same_tape(a, b, "matmul");
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() < 2 || sb.size() < 2) throw ShapeError("matmul needs rank >= 2 operands");
    const std::size_t m = sa[sa.size() - 2], k = sa.back(), n = sb.back();
    if (sb[sb.size() - 2] != k)
        throw ShapeError("matmul: inner dimensions differ in " + shape_str(sa) + " x " + shape_str(sb));
    const bool shared_rhs = sb.size() == 2;
    if (!shared_rhs && (sb.size() != sa.size() || !std::equal(sa.begin(), sa.end() - 2, sb.begin())))
        throw ShapeError("matmul: batch dimensions differ in " + shape_str(sa) + " x " + shape_str(sb));
    const std::size_t batch = numel(sa) / (m * k);
    Shape out_shape(sa.begin(), sa.end() - 1);
    out_shape.push_back(n);
    Array out(out_shape);
    const double* pa = a.value().data().data();
    const double* pb = b.value().data().data();
    double* po = out.data().data();
    if (shared_rhs) {
        MatMap(po, static_cast<Eigen::Index>(batch * m), static_cast<Eigen::Index>(n)).noalias() =
            ConstMatMap(pa, static_cast<Eigen::Index>(batch * m), static_cast<Eigen::Index>(k)) *
            ConstMatMap(pb, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
    } else {
        for (std::size_t i = 0; i < batch; ++i) {
            MatMap(po + i * m * n, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n)).noalias() =
                ConstMatMap(pa + i * m * k, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k)) *
                ConstMatMap(pb + i * k * n, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
        }
    }
    return tape.record(std::move(out), {a, b}, "matmul", [a, b, batch, m, k, n, shared_rhs](Tape& t, const Array& g) {
        const double* pg = g.data().data();
        const double* pa = a.value().data().data();
        const double* pb = b.value().data().data();
        const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k), N = static_cast<Eigen::Index>(n);
        if (Array* ga = t.grad_sink(a)) {
            double* pga = ga->data().data();
            if (shared_rhs) {
                const auto BM = static_cast<Eigen::Index>(batch * m);
                MatMap(pga, BM, K).noalias() += ConstMatMap(pg, BM, N) * ConstMatMap(pb, K, N).transpose();
            } else {
                for (std::size_t i = 0; i < batch; ++i)
                    MatMap(pga + i * m * k, M, K).noalias() +=
                        ConstMatMap(pg + i * m * n, M, N) * ConstMatMap(pb + i * k * n, K, N).transpose();
            }
        }
        if (Array* gb = t.grad_sink(b)) {
            double* pgb = gb->data().data();
            if (shared_rhs) {
                const auto BM = static_cast<Eigen::Index>(batch * m);
                MatMap(pgb, K, N).noalias() += ConstMatMap(pa, BM, K).transpose() * ConstMatMap(pg, BM, N);
            } else {
                for (std::size_t i = 0; i < batch; ++i)
                    MatMap(pgb + i * k * n, K, N).noalias() +=
                        ConstMatMap(pa + i * m * k, M, K).transpose() * ConstMatMap(pg + i * m * n, M, N);
            }
        }
    });
}

namespace detail {

inline Array transpose_last2(const Array& x) {
    const Shape& s = x.shape();
    const std::size_t r = s[s.size() - 2], c = s.back();
    const std::size_t batch = x.size() / (r * c);
    Shape os = s;
    std::swap(os[os.size() - 2], os[os.size() - 1]);
    Array out(os);
    for (std::size_t b = 0; b < batch; ++b) {
        const double* src = x.data().data() + b * r * c;
        double* dst = out.data().data() + b * r * c;
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) dst[j * r + i] = src[i * c + j];
    }
    return out;
}

}  // namespace detail

/// Swaps the last two axes.
inline Tensor transpose(const Tensor& x) {
    if (x.shape().size() < 2) throw ShapeError("transpose needs rank >= 2");
    return x.tape()->record(detail::transpose_last2(x.value()), {x}, "transpose", [x](Tape& t, const Array& g) {
        t.accumulate(x, detail::transpose_last2(g).data());
    });
}

inline Tensor reshape(const Tensor& x, Shape shape) {
    if (numel(shape) != x.value().size())
        throw ShapeError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape) + " changes the element count");
    Array out(std::move(shape), x.value().storage());
    return x.tape()->record(std::move(out), {x}, "reshape", [x](Tape& t, const Array& g) { t.accumulate(x, g.data()); });
}

/// Joins tensors along @p axis; all other dimensions must agree.
inline Tensor concat(const std::vector<Tensor>& parts, long axis_in) {
    if (parts.empty()) throw ShapeError("concat of no tensors");
    Tape& tape = *parts.front().tape();
    const Shape& s0 = parts.front().shape();
    const std::size_t axis = detail::normalize_axis(axis_in, s0.size(), "concat");
    Shape out_shape = s0;
    out_shape[axis] = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (p.tape() != &tape || s.size() != s0.size()) throw ShapeError("concat: rank or tape mismatch");
        for (std::size_t i = 0; i < s.size(); ++i)
            if (i != axis && s[i] != s0[i]) throw ShapeError("concat: shapes " + shape_str(s0) + " and " + shape_str(s) + " disagree");
        out_shape[axis] += s[axis];
    }
    const auto [outer, total, inner] = detail::split_at(out_shape, axis);
    Array out(out_shape);
    std::vector<std::size_t> offsets;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t len = p.shape()[axis];
        offsets.push_back(offset);
        const double* src = p.value().data().data();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy(src + o * len * inner, src + (o + 1) * len * inner, out.data().data() + (o * total + offset) * inner);
        offset += len;
    }
    return tape.record(std::move(out), parts, "concat", [parts, offsets, axis, outer = outer, total = total, inner = inner](Tape& t, const Array& g) {
        for (std::size_t pi = 0; pi < parts.size(); ++pi) {
            Array* sink = t.grad_sink(parts[pi]);
            if (!sink) continue;
            const std::size_t len = parts[pi].shape()[axis];
            for (std::size_t o = 0; o < outer; ++o) {
                const double* src = g.data().data() + (o * total + offsets[pi]) * inner;
                double* dst = sink->data().data() + o * len * inner;
                for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
            }
        }
    });
}

/// Entries [begin, end) along @p axis.
inline Tensor slice(const Tensor& x, long axis_in, std::size_t begin, std::size_t end) {
    const Shape& s = x.shape();
    const std::size_t axis = detail::normalize_axis(axis_in, s.size(), "slice");
    if (begin >= end || end > s[axis]) throw ShapeError("slice: range out of bounds for " + shape_str(s));
    const auto [outer, total, inner] = detail::split_at(s, axis);
    Shape os = s;
    os[axis] = end - begin;
    Array out(os);
    const std::size_t len = end - begin;
    const double* src = x.value().data().data();
    for (std::size_t o = 0; o < outer; ++o)
        std::copy(src + (o * total + begin) * inner, src + (o * total + end) * inner, out.data().data() + o * len * inner);
    return x.tape()->record(std::move(out), {x}, "slice", [x, outer = outer, total = total, inner = inner, begin, len](Tape& t, const Array& g) {
        if (Array* sink = t.grad_sink(x)) {
            for (std::size_t o = 0; o < outer; ++o) {
                const double* src = g.data().data() + o * len * inner;
                double* dst = sink->data().data() + (o * total + begin) * inner;
                for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
            }
        }
    });
}

/// Softmax over the last axis.
inline Tensor softmax(const Tensor& x) {
    const Array& xv = x.value();
    const std::size_t d = xv.shape().empty() ? 1 : xv.shape().back();
    const std::size_t rows = xv.size() / d;
    Array out(xv.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xv.data().data() + r * d;
        double* o = out.data().data() + r * d;
        const double mx = *std::max_element(in, in + d);
        double sum = 0.0;
        for (std::size_t j = 0; j < d; ++j) sum += (o[j] = std::exp(in[j] - mx));
        for (std::size_t j = 0; j < d; ++j) o[j] /= sum;
    }
    const std::size_t out_id = x.tape()->size();
    return x.tape()->record(std::move(out), {x}, "softmax", [x, out_id, d, rows](Tape& t, const Array& g) {
        Array* sink = t.grad_sink(x);
        if (!sink) return;
        const Array& y = t.value(out_id);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* yr = y.data().data() + r * d;
            const double* gr = g.data().data() + r * d;
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) dot += yr[j] * gr[j];
            double* dst = sink->data().data() + r * d;
            for (std::size_t j = 0; j < d; ++j) dst[j] += yr[j] * (gr[j] - dot);
        }
    });
}

/**
 * @brief Normalises the last axis to zero mean and unit variance, then applies
 * gain and bias (both shaped like the last axis).
 */
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
    if (!(eps > 0.0)) throw ShapeError("layer_norm: eps must be positive");
    const Array& xv = x.value();
    const std::size_t d = xv.shape().back();
    if (gain.shape() != Shape{d} || bias.shape() != Shape{d})
        throw ShapeError("layer_norm: gain/bias must have shape [" + std::to_string(d) + "]");
    const std::size_t rows = xv.size() / d;
    Array out(xv.shape());
    std::vector<double> xhat(xv.size());
    std::vector<double> inv_std(rows);
    const double* g = gain.value().data().data();
    const double* b = bias.value().data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xv.data().data() + r * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += in[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (in[j] - mean) * (in[j] - mean);
        var /= static_cast<double>(d);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (in[j] - mean) * inv_std[r];
            xhat[r * d + j] = h;
            out[r * d + j] = h * g[j] + b[j];
        }
    }
    Tape& tape = detail::same_tape(x, gain, "layer_norm");
    return tape.record(std::move(out), {x, gain, bias}, "layer_norm",
                       [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std), d, rows](Tape& t, const Array& grad) {
                           const double* gd = grad.data().data();
                           if (Array* sg = t.grad_sink(gain))
                               for (std::size_t i = 0; i < rows * d; ++i) (*sg)[i % d] += gd[i] * xhat[i];
                           if (Array* sb = t.grad_sink(bias))
                               for (std::size_t i = 0; i < rows * d; ++i) (*sb)[i % d] += gd[i];
                           Array* sx = t.grad_sink(x);
                           if (!sx) return;
                           const double* gv = gain.value().data().data();
                           std::vector<double> dh(d);
                           for (std::size_t r = 0; r < rows; ++r) {
                               double mean_dh = 0.0, mean_dh_h = 0.0;
                               for (std::size_t j = 0; j < d; ++j) {
                                   dh[j] = gd[r * d + j] * gv[j];
                                   mean_dh += dh[j];
                                   mean_dh_h += dh[j] * xhat[r * d + j];
                               }
                               mean_dh /= static_cast<double>(d);
                               mean_dh_h /= static_cast<double>(d);
                               for (std::size_t j = 0; j < d; ++j)
                                   (*sx)[r * d + j] += inv_std[r] * (dh[j] - mean_dh - xhat[r * d + j] * mean_dh_h);
                           }
                       });
}

/// Sums over @p axis, removing it.
inline Tensor reduce_sum(const Tensor& x, long axis_in) {
    const Shape& s = x.shape();
    const std::size_t axis = detail::normalize_axis(axis_in, s.size(), "reduce_sum");
    const auto [outer, len, inner] = detail::split_at(s, axis);
    Shape os = s;
    os.erase(os.begin() + static_cast<std::ptrdiff_t>(axis));
    Array out(os);
    const double* src = x.value().data().data();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t l = 0; l < len; ++l)
            for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += src[(o * len + l) * inner + i];
    return x.tape()->record(std::move(out), {x}, "reduce_sum", [x, outer = outer, len = len, inner = inner](Tape& t, const Array& g) {
        if (Array* sink = t.grad_sink(x)) {
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t l = 0; l < len; ++l)
                    for (std::size_t i = 0; i < inner; ++i) (*sink)[(o * len + l) * inner + i] += g[o * inner + i];
        }
    });
}

inline Tensor reduce_mean(const Tensor& x, long axis_in) {
    const std::size_t axis = detail::normalize_axis(axis_in, x.shape().size(), "reduce_mean");
    return scale(reduce_sum(x, static_cast<long>(axis)), 1.0 / static_cast<double>(x.shape()[axis]));
}

/// Sum of every entry as a scalar.
inline Tensor sum_all(const Tensor& x) {
    double s = 0.0;
    for (double v : x.value().data()) s += v;
    return x.tape()->record(Array::scalar(s), {x}, "sum_all", [x](Tape& t, const Array& g) {
        if (Array* sink = t.grad_sink(x)) {
            const double gv = g[0];
            for (double& v : sink->data()) v += gv;
        }
    });
}

inline Tensor mean_all(const Tensor& x) { return scale(sum_all(x), 1.0 / static_cast<double>(x.value().size())); }

/// Rows of @p table (indexed along axis 0) at @p indices.
inline Tensor gather(const Tensor& table, std::vector<std::size_t> indices) {
    const Shape& s = table.shape();
    if (s.empty() || indices.empty()) throw ShapeError("gather needs a rank >= 1 table and at least one index");
    const std::size_t row = table.value().size() / s[0];
    Shape os = s;
    os[0] = indices.size();
    Array out(os);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= s[0]) throw ShapeError("gather: index " + std::to_string(indices[i]) + " out of range");
        const double* src = table.value().data().data() + indices[i] * row;
        std::copy(src, src + row, out.data().data() + i * row);
    }
    return table.tape()->record(std::move(out), {table}, "gather", [table, indices = std::move(indices), row](Tape& t, const Array& g) {
        if (Array* sink = t.grad_sink(table)) {
            for (std::size_t i = 0; i < indices.size(); ++i)
                for (std::size_t j = 0; j < row; ++j) (*sink)[indices[i] * row + j] += g[i * row + j];
        }
    });
}

}  // namespace tgpt::ad
