#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "birdrone/common.hpp"

namespace brd {

// ---------------------------------------------------------------------------
// Tensor<T>: dense NCHW tensor with reverse-mode autodiff.
//
// Every op that runs while gradients are enabled records a node on its output:
// the list of input impls plus a backward rule. backward(loss) topologically
// sorts the recorded graph and calls each rule exactly once in reverse order.
// Gradient accumulation is additive, so fan-out sums naturally.
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // allocated on first use, same length as data
    bool requires_grad = false;

    // autograd node (empty for leaves)
    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void(TensorImpl&)> backward_fn;

    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), T(0));
    }
};

inline bool& grad_enabled_flag() {
    thread_local bool enabled = true;
    return enabled;
}

inline bool& strict_numerics_flag() {
    thread_local bool strict = false;
    return strict;
}

}  // namespace detail

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(detail::grad_enabled_flag()) {
        detail::grad_enabled_flag() = false;
    }
    ~NoGradGuard() { detail::grad_enabled_flag() = prev; }
};

// When strict numerics is on, every op rejects NaN/Inf inputs. Off by default
// so that a transient loss spike during training can recover.
struct StrictNumericsGuard {
    bool prev;
    explicit StrictNumericsGuard(bool on = true)
        : prev(detail::strict_numerics_flag()) {
        detail::strict_numerics_flag() = on;
    }
    ~StrictNumericsGuard() { detail::strict_numerics_flag() = prev; }
};

inline bool grad_enabled() { return detail::grad_enabled_flag(); }
inline bool strict_numerics() { return detail::strict_numerics_flag(); }

template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape s, T fill = T(0))
        : impl_(std::make_shared<detail::TensorImpl<T>>()) {
        require(s.n >= 1 && s.c >= 1 && s.h >= 1 && s.w >= 1,
                "tensor shape must be positive, got " + s.str());
        impl_->shape = s;
        impl_->data.assign(s.numel(), fill);
    }

    static Tensor zeros(Shape s) { return Tensor(s, T(0)); }

    static Tensor from_vector(Shape s, std::vector<T> v) {
        require(v.size() == s.numel(), "data length does not match shape " + s.str());
        Tensor t(s);
        t.impl_->data = std::move(v);
        return t;
    }

    static Tensor scalar(T v) {
        Tensor t(Shape{1, 1, 1, 1});
        t.impl_->data[0] = v;
        return t;
    }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::size_t numel() const { return impl_->data.size(); }

    T* data() { return impl_->data.data(); }
    const T* data() const { return impl_->data.data(); }
    std::vector<T>& vec() { return impl_->data; }
    const std::vector<T>& vec() const { return impl_->data; }

    std::size_t index(int n, int c, int h, int w) const {
        const Shape& s = impl_->shape;
        return ((static_cast<std::size_t>(n) * s.c + c) * s.h + h) * s.w + w;
    }
    T& at(int n, int c, int h, int w) { return impl_->data[index(n, c, h, w)]; }
    T at(int n, int c, int h, int w) const { return impl_->data[index(n, c, h, w)]; }

    T value() const {
        require(numel() == 1, "value() requires a scalar tensor, shape is " + shape().str());
        return impl_->data[0];
    }

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool rg) {
        impl_->requires_grad = rg;
        return *this;
    }

    bool has_grad() const { return !impl_->grad.empty(); }
    const std::vector<T>& grad() const { return impl_->grad; }
    T* grad_data() {
        impl_->ensure_grad();
        return impl_->grad.data();
    }
    void zero_grad() { impl_->grad.clear(); }

    // Fresh leaf with copied data; drops graph membership and grad.
    Tensor clone() const {
        Tensor t(impl_->shape);
        t.impl_->data = impl_->data;
        return t;
    }

    detail::TensorImpl<T>* impl() const { return impl_.get(); }
    const std::shared_ptr<detail::TensorImpl<T>>& impl_ptr() const { return impl_; }

private:
    std::shared_ptr<detail::TensorImpl<T>> impl_;
};

namespace detail {

template <typename T>
inline void check_finite(const Tensor<T>& t, const char* op) {
    if (!strict_numerics_flag()) return;
    for (const T& v : t.vec()) {
        if (!std::isfinite(static_cast<double>(v)))
            fail(std::string("non-finite input to ") + op);
    }
}

// Attach an autograd node to `out` when recording is active.
template <typename T, typename Fn>
inline void record(Tensor<T>& out, std::initializer_list<Tensor<T>> inputs, Fn&& backward) {
    if (!grad_enabled_flag()) return;
    bool any = false;
    for (const Tensor<T>& in : inputs) any = any || in.requires_grad();
    if (!any) return;
    out.set_requires_grad(true);
    auto* impl = out.impl();
    for (const Tensor<T>& in : inputs) impl->parents.push_back(in.impl_ptr());
    impl->backward_fn = std::forward<Fn>(backward);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

template <typename T>
void backward(const Tensor<T>& loss) {
    require(loss.numel() == 1, "backward() requires a scalar loss");
    require(loss.requires_grad(),
            "backward() on a detached graph: loss does not require grad");

    // iterative DFS post-order over input edges; reversed it is a valid
    // topological order with the loss first
    std::vector<detail::TensorImpl<T>*> order;
    std::unordered_set<detail::TensorImpl<T>*> visited;
    struct Frame {
        detail::TensorImpl<T>* node;
        std::size_t next_child;
    };
    std::vector<Frame> stack;
    stack.push_back({loss.impl(), 0});
    visited.insert(loss.impl());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_child < f.node->parents.size()) {
            detail::TensorImpl<T>* child = f.node->parents[f.next_child++].get();
            if (child->requires_grad && !visited.count(child)) {
                visited.insert(child);
                stack.push_back({child, 0});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    loss.impl()->ensure_grad();
    loss.impl()->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::TensorImpl<T>* node = *it;
        if (node->backward_fn) node->backward_fn(*node);
    }
}

// ---------------------------------------------------------------------------
// broadcasting elementwise binary ops
//
// b may have size-1 axes where a does not (used by attention modulation with
// (N,1,H,W) spatial maps and (N,C,1,1) channel vectors). a's shape is the
// output shape.
// ---------------------------------------------------------------------------

namespace detail {

inline bool broadcast_compatible(const Shape& a, const Shape& b) {
    return (b.n == a.n || b.n == 1) && (b.c == a.c || b.c == 1) &&
           (b.h == a.h || b.h == 1) && (b.w == a.w || b.w == 1);
}

template <typename T, typename FwdFn, typename BwdFn>
Tensor<T> binary_broadcast(const Tensor<T>& a, const Tensor<T>& b, const char* name,
                           FwdFn fwd, BwdFn bwd) {
    check_finite(a, name);
    check_finite(b, name);
    const Shape sa = a.shape();
    const Shape sb = b.shape();
    require(broadcast_compatible(sa, sb),
            std::string(name) + ": shape " + sb.str() + " does not broadcast to " + sa.str());
    Tensor<T> out(sa);
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    if (sa == sb) {
        const std::size_t n = a.numel();
        for (std::size_t i = 0; i < n; ++i) po[i] = fwd(pa[i], pb[i]);
    } else {
        for (int n = 0; n < sa.n; ++n)
            for (int c = 0; c < sa.c; ++c)
                for (int h = 0; h < sa.h; ++h)
                    for (int w = 0; w < sa.w; ++w) {
                        std::size_t ia = ((static_cast<std::size_t>(n) * sa.c + c) * sa.h + h) * sa.w + w;
                        std::size_t ib = ((static_cast<std::size_t>(sb.n == 1 ? 0 : n) * sb.c +
                                           (sb.c == 1 ? 0 : c)) * sb.h + (sb.h == 1 ? 0 : h)) * sb.w +
                                         (sb.w == 1 ? 0 : w);
                        po[ia] = fwd(pa[ia], pb[ib]);
                    }
    }
    record(out, {a, b}, [ai = a.impl(), bi = b.impl(), sa, sb, bwd](TensorImpl<T>& o) {
        const T* g = o.grad.data();
        const T* pa = ai->data.data();
        const T* pb = bi->data.data();
        T* ga = nullptr;
        T* gb = nullptr;
        if (ai->requires_grad) { ai->ensure_grad(); ga = ai->grad.data(); }
        if (bi->requires_grad) { bi->ensure_grad(); gb = bi->grad.data(); }
        if (sa == sb) {
            const std::size_t n = o.data.size();
            for (std::size_t i = 0; i < n; ++i) {
                T da, db;
                bwd(pa[i], pb[i], g[i], da, db);
                if (ga) ga[i] += da;
                if (gb) gb[i] += db;
            }
        } else {
            for (int n = 0; n < sa.n; ++n)
                for (int c = 0; c < sa.c; ++c)
                    for (int h = 0; h < sa.h; ++h)
                        for (int w = 0; w < sa.w; ++w) {
                            std::size_t ia = ((static_cast<std::size_t>(n) * sa.c + c) * sa.h + h) * sa.w + w;
                            std::size_t ib = ((static_cast<std::size_t>(sb.n == 1 ? 0 : n) * sb.c +
                                               (sb.c == 1 ? 0 : c)) * sb.h + (sb.h == 1 ? 0 : h)) * sb.w +
                                             (sb.w == 1 ? 0 : w);
                            T da, db;
                            bwd(pa[ia], pb[ib], g[ia], da, db);
                            if (ga) ga[ia] += da;
                            if (gb) gb[ib] += db;
                        }
        }
    });
    return out;
}

template <typename T, typename FwdFn, typename BwdFn>
Tensor<T> unary_op(const Tensor<T>& a, const char* name, FwdFn fwd, BwdFn bwd) {
    check_finite(a, name);
    Tensor<T> out(a.shape());
    const T* pa = a.data();
    T* po = out.data();
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) po[i] = fwd(pa[i]);
    record(out, {a}, [ai = a.impl(), bwd](TensorImpl<T>& o) {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        const T* g = o.grad.data();
        const T* x = ai->data.data();
        const T* y = o.data.data();
        T* ga = ai->grad.data();
        const std::size_t n = o.data.size();
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * bwd(x[i], y[i]);
    });
    return out;
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_broadcast(a, b, "add",
        [](T x, T y) { return x + y; },
        [](T, T, T g, T& da, T& db) { da = g; db = g; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_broadcast(a, b, "sub",
        [](T x, T y) { return x - y; },
        [](T, T, T g, T& da, T& db) { da = g; db = -g; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_broadcast(a, b, "mul",
        [](T x, T y) { return x * y; },
        [](T x, T y, T g, T& da, T& db) { da = g * y; db = g * x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_broadcast(a, b, "div",
        [](T x, T y) { return x / y; },
        [](T x, T y, T g, T& da, T& db) { da = g / y; db = -g * x / (y * y); });
}

// ties take the first argument (a consistent subgradient on a measure-zero set)
template <typename T>
Tensor<T> minimum(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_broadcast(a, b, "minimum",
        [](T x, T y) { return x <= y ? x : y; },
        [](T x, T y, T g, T& da, T& db) {
            da = x <= y ? g : T(0);
            db = x <= y ? T(0) : g;
        });
}

template <typename T>
Tensor<T> maximum(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_broadcast(a, b, "maximum",
        [](T x, T y) { return x >= y ? x : y; },
        [](T x, T y, T g, T& da, T& db) {
            da = x >= y ? g : T(0);
            db = x >= y ? T(0) : g;
        });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
    return detail::unary_op(a, "add_scalar",
        [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
    return detail::unary_op(a, "mul_scalar",
        [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> clamp_max(const Tensor<T>& a, T hi) {
    return detail::unary_op(a, "clamp_max",
        [hi](T x) { return x < hi ? x : hi; },
        [hi](T x, T) { return x < hi ? T(1) : T(0); });
}

template <typename T>
Tensor<T> clamp_min(const Tensor<T>& a, T lo) {
    return detail::unary_op(a, "clamp_min",
        [lo](T x) { return x > lo ? x : lo; },
        [lo](T x, T) { return x > lo ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    return detail::unary_op(a, "sigmoid",
        [](T x) { return T(1) / (T(1) + std::exp(-x)); },
        [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& a) {
    return detail::unary_op(a, "silu",
        [](T x) { return x / (T(1) + std::exp(-x)); },
        [](T x, T) {
            T s = T(1) / (T(1) + std::exp(-x));
            T d = s * (T(1) + x * (T(1) - s));
            if (detail::corrupt_backward_flag()) d *= T(1.01);
            return d;
        });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
    return detail::unary_op(a, "exp",
        [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> atan(const Tensor<T>& a) {
    return detail::unary_op(a, "atan",
        [](T x) { return std::atan(x); },
        [](T x, T) { return T(1) / (T(1) + x * x); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
    return detail::unary_op(a, "square",
        [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

// softmax along one axis of NCHW (1=c, 2=h, 3=w); stable, rows sum to 1
template <typename T>
Tensor<T> softmax_over(const Tensor<T>& a, int axis) {
    detail::check_finite(a, "softmax_over");
    require(axis >= 1 && axis <= 3, "softmax_over: axis must be 1 (c), 2 (h) or 3 (w)");
    const Shape s = a.shape();
    const int dims[4] = {s.n, s.c, s.h, s.w};
    const int axis_len = dims[axis];
    Tensor<T> out(s);
    const T* pa = a.data();
    T* po = out.data();
    // stride of the axis and count of independent slices
    std::size_t stride = 1;
    for (int d = axis + 1; d < 4; ++d) stride *= dims[d];
    const std::size_t block = stride * axis_len;
    const std::size_t nblocks = s.numel() / block;
    for (std::size_t b = 0; b < nblocks; ++b)
        for (std::size_t off = 0; off < stride; ++off) {
            const std::size_t base = b * block + off;
            T mx = pa[base];
            for (int k = 1; k < axis_len; ++k) mx = std::max(mx, pa[base + k * stride]);
            T sum = T(0);
            for (int k = 0; k < axis_len; ++k) {
                T e = std::exp(pa[base + k * stride] - mx);
                po[base + k * stride] = e;
                sum += e;
            }
            for (int k = 0; k < axis_len; ++k) po[base + k * stride] /= sum;
        }
    detail::record(out, {a}, [ai = a.impl(), axis_len, stride, nblocks, block](detail::TensorImpl<T>& o) {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        const T* g = o.grad.data();
        const T* y = o.data.data();
        T* ga = ai->grad.data();
        for (std::size_t b = 0; b < nblocks; ++b)
            for (std::size_t off = 0; off < stride; ++off) {
                const std::size_t base = b * block + off;
                T dot = T(0);
                for (int k = 0; k < axis_len; ++k)
                    dot += g[base + k * stride] * y[base + k * stride];
                for (int k = 0; k < axis_len; ++k) {
                    const std::size_t i = base + k * stride;
                    ga[i] += y[i] * (g[i] - dot);
                }
            }
    });
    return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    detail::check_finite(a, "sum");
    T acc = T(0);
    for (const T& v : a.vec()) acc += v;
    Tensor<T> out = Tensor<T>::scalar(acc);
    detail::record(out, {a}, [ai = a.impl()](detail::TensorImpl<T>& o) {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        const T g = o.grad[0];
        for (T& v : ai->grad) v += g;
    });
    return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
    return mul_scalar(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& a) {
    detail::check_finite(a, "global_avg_pool");
    const Shape s = a.shape();
    Tensor<T> out(Shape{s.n, s.c, 1, 1});
    const T* pa = a.data();
    T* po = out.data();
    const std::size_t hw = static_cast<std::size_t>(s.h) * s.w;
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const T* p = pa + (static_cast<std::size_t>(n) * s.c + c) * hw;
            T acc = T(0);
            for (std::size_t i = 0; i < hw; ++i) acc += p[i];
            po[n * s.c + c] = acc / static_cast<T>(hw);
        }
    detail::record(out, {a}, [ai = a.impl(), s, hw](detail::TensorImpl<T>& o) {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        const T* g = o.grad.data();
        T* ga = ai->grad.data();
        const T scale = T(1) / static_cast<T>(hw);
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c) {
                const T gv = g[n * s.c + c] * scale;
                T* p = ga + (static_cast<std::size_t>(n) * s.c + c) * hw;
                for (std::size_t i = 0; i < hw; ++i) p[i] += gv;
            }
    });
    return out;
}

// per-position mean over channels -> (N,1,H,W)
template <typename T>
Tensor<T> channel_mean(const Tensor<T>& a) {
    detail::check_finite(a, "channel_mean");
    const Shape s = a.shape();
    Tensor<T> out(Shape{s.n, 1, s.h, s.w});
    const T* pa = a.data();
    T* po = out.data();
    const std::size_t hw = static_cast<std::size_t>(s.h) * s.w;
    for (int n = 0; n < s.n; ++n)
        for (std::size_t i = 0; i < hw; ++i) {
            T acc = T(0);
            for (int c = 0; c < s.c; ++c) acc += pa[(static_cast<std::size_t>(n) * s.c + c) * hw + i];
            po[n * hw + i] = acc / static_cast<T>(s.c);
        }
    detail::record(out, {a}, [ai = a.impl(), s, hw](detail::TensorImpl<T>& o) {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        const T* g = o.grad.data();
        T* ga = ai->grad.data();
        const T scale = T(1) / static_cast<T>(s.c);
        for (int n = 0; n < s.n; ++n)
            for (std::size_t i = 0; i < hw; ++i) {
                const T gv = g[n * hw + i] * scale;
                for (int c = 0; c < s.c; ++c)
                    ga[(static_cast<std::size_t>(n) * s.c + c) * hw + i] += gv;
            }
    });
    return out;
}

// per-position max over channels -> (N,1,H,W); gradient to the first argmax
template <typename T>
Tensor<T> channel_max(const Tensor<T>& a) {
    detail::check_finite(a, "channel_max");
    const Shape s = a.shape();
    Tensor<T> out(Shape{s.n, 1, s.h, s.w});
    const T* pa = a.data();
    T* po = out.data();
    const std::size_t hw = static_cast<std::size_t>(s.h) * s.w;
    auto argmax = std::make_shared<std::vector<int>>(static_cast<std::size_t>(s.n) * hw);
    for (int n = 0; n < s.n; ++n)
        for (std::size_t i = 0; i < hw; ++i) {
            T best = pa[static_cast<std::size_t>(n) * s.c * hw + i];
            int bc = 0;
            for (int c = 1; c < s.c; ++c) {
                T v = pa[(static_cast<std::size_t>(n) * s.c + c) * hw + i];
                if (v > best) { best = v; bc = c; }
            }
            po[n * hw + i] = best;
            (*argmax)[n * hw + i] = bc;
        }
    detail::record(out, {a}, [ai = a.impl(), s, hw, argmax](detail::TensorImpl<T>& o) {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        const T* g = o.grad.data();
        T* ga = ai->grad.data();
        for (int n = 0; n < s.n; ++n)
            for (std::size_t i = 0; i < hw; ++i) {
                const int c = (*argmax)[n * hw + i];
                ga[(static_cast<std::size_t>(n) * s.c + c) * hw + i] += g[n * hw + i];
            }
    });
    return out;
}

// ---------------------------------------------------------------------------
// layout ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
    require(!parts.empty(), "concat_channels: no parts");
    const Shape s0 = parts[0].shape();
    int ctotal = 0;
    for (const Tensor<T>& p : parts) {
        detail::check_finite(p, "concat_channels");
        const Shape s = p.shape();
        require(s.n == s0.n && s.h == s0.h && s.w == s0.w,
                "concat_channels: spatial/batch mismatch " + s.str() + " vs " + s0.str());
        ctotal += s.c;
    }
    Tensor<T> out(Shape{s0.n, ctotal, s0.h, s0.w});
    const std::size_t hw = static_cast<std::size_t>(s0.h) * s0.w;
    T* po = out.data();
    for (int n = 0; n < s0.n; ++n) {
        std::size_t coff = 0;
        for (const Tensor<T>& p : parts) {
            const int pc = p.shape().c;
            const T* pp = p.data() + static_cast<std::size_t>(n) * pc * hw;
            std::copy(pp, pp + static_cast<std::size_t>(pc) * hw,
                      po + (static_cast<std::size_t>(n) * ctotal + coff) * hw);
            coff += pc;
        }
    }
    bool any = false;
    if (grad_enabled()) for (const Tensor<T>& p : parts) any = any || p.requires_grad();
    if (any) {
        out.set_requires_grad(true);
        auto* impl = out.impl();
        std::vector<detail::TensorImpl<T>*> raw;
        for (const Tensor<T>& p : parts) {
            impl->parents.push_back(p.impl_ptr());
            raw.push_back(p.impl());
        }
        impl->backward_fn = [raw, s0, ctotal, hw](detail::TensorImpl<T>& o) {
            const T* g = o.grad.data();
            for (int n = 0; n < s0.n; ++n) {
                std::size_t coff = 0;
                for (detail::TensorImpl<T>* pi : raw) {
                    const int pc = pi->shape.c;
                    if (pi->requires_grad) {
                        pi->ensure_grad();
                        T* gp = pi->grad.data() + static_cast<std::size_t>(n) * pc * hw;
                        const T* gs = g + (static_cast<std::size_t>(n) * ctotal + coff) * hw;
                        const std::size_t len = static_cast<std::size_t>(pc) * hw;
                        for (std::size_t i = 0; i < len; ++i) gp[i] += gs[i];
                    }
                    coff += pc;
                }
            }
        };
    }
    return out;
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& a, int start, int count) {
    detail::check_finite(a, "slice_channels");
    const Shape s = a.shape();
    require(start >= 0 && count >= 1 && start + count <= s.c,
            "slice_channels: invalid range [" + std::to_string(start) + "," +
                std::to_string(start + count) + ") for C=" + std::to_string(s.c));
    Tensor<T> out(Shape{s.n, count, s.h, s.w});
    const std::size_t hw = static_cast<std::size_t>(s.h) * s.w;
    const T* pa = a.data();
    T* po = out.data();
    for (int n = 0; n < s.n; ++n)
        std::copy(pa + (static_cast<std::size_t>(n) * s.c + start) * hw,
                  pa + (static_cast<std::size_t>(n) * s.c + start + count) * hw,
                  po + static_cast<std::size_t>(n) * count * hw);
    detail::record(out, {a}, [ai = a.impl(), s, start, count, hw](detail::TensorImpl<T>& o) {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        const T* g = o.grad.data();
        T* ga = ai->grad.data();
        for (int n = 0; n < s.n; ++n) {
            T* gp = ga + (static_cast<std::size_t>(n) * s.c + start) * hw;
            const T* gs = g + static_cast<std::size_t>(n) * count * hw;
            const std::size_t len = static_cast<std::size_t>(count) * hw;
            for (std::size_t i = 0; i < len; ++i) gp[i] += gs[i];
        }
    });
    return out;
}

// one element as a scalar node (used to assemble per-cell loss terms)
template <typename T>
Tensor<T> select(const Tensor<T>& a, int n, int c, int h, int w) {
    const std::size_t idx = a.index(n, c, h, w);
    Tensor<T> out = Tensor<T>::scalar(a.data()[idx]);
    detail::record(out, {a}, [ai = a.impl(), idx](detail::TensorImpl<T>& o) {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        ai->grad[idx] += o.grad[0];
    });
    return out;
}

// nearest-neighbour 2x upsample
template <typename T>
Tensor<T> upsample_nearest2(const Tensor<T>& a) {
    detail::check_finite(a, "upsample_nearest2");
    const Shape s = a.shape();
    Tensor<T> out(Shape{s.n, s.c, s.h * 2, s.w * 2});
    const T* pa = a.data();
    T* po = out.data();
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const T* src = pa + (static_cast<std::size_t>(n) * s.c + c) * s.h * s.w;
            T* dst = po + (static_cast<std::size_t>(n) * s.c + c) * s.h * s.w * 4;
            for (int h = 0; h < s.h * 2; ++h)
                for (int w = 0; w < s.w * 2; ++w)
                    dst[h * s.w * 2 + w] = src[(h / 2) * s.w + w / 2];
        }
    detail::record(out, {a}, [ai = a.impl(), s](detail::TensorImpl<T>& o) {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        const T* g = o.grad.data();
        T* ga = ai->grad.data();
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c) {
                T* dst = ga + (static_cast<std::size_t>(n) * s.c + c) * s.h * s.w;
                const T* src = g + (static_cast<std::size_t>(n) * s.c + c) * s.h * s.w * 4;
                for (int h = 0; h < s.h * 2; ++h)
                    for (int w = 0; w < s.w * 2; ++w)
                        dst[(h / 2) * s.w + w / 2] += src[h * s.w * 2 + w];
            }
    });
    return out;
}

// ---------------------------------------------------------------------------
// binary cross-entropy with logits, summed; `weight` scales per element and
// may be empty (all ones). Targets and weights are constants.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> bce_with_logits_sum(const Tensor<T>& logits, const Tensor<T>& targets,
                              const Tensor<T>& weight = Tensor<T>()) {
    detail::check_finite(logits, "bce_with_logits_sum");
    require(targets.shape() == logits.shape(), "bce: target shape mismatch");
    const bool has_w = weight.defined();
    if (has_w) require(weight.shape() == logits.shape(), "bce: weight shape mismatch");
    const T* x = logits.data();
    const T* t = targets.data();
    const T* w = has_w ? weight.data() : nullptr;
    T acc = T(0);
    const std::size_t n = logits.numel();
    for (std::size_t i = 0; i < n; ++i) {
        // max(x,0) - x*t + log(1 + exp(-|x|))
        T v = std::max(x[i], T(0)) - x[i] * t[i] + std::log1p(std::exp(-std::abs(x[i])));
        acc += has_w ? w[i] * v : v;
    }
    Tensor<T> out = Tensor<T>::scalar(acc);
    detail::record(out, {logits}, [li = logits.impl(), ti = targets.impl_ptr(),
                                   wi = has_w ? weight.impl_ptr() : nullptr](detail::TensorImpl<T>& o) {
        if (!li->requires_grad) return;
        li->ensure_grad();
        const T g = o.grad[0];
        const T* x = li->data.data();
        const T* t = ti->data.data();
        const T* w = wi ? wi->data.data() : nullptr;
        T* gl = li->grad.data();
        const std::size_t n = li->data.size();
        for (std::size_t i = 0; i < n; ++i) {
            T s = T(1) / (T(1) + std::exp(-x[i]));
            T d = g * (s - t[i]);
            gl[i] += w ? w[i] * d : d;
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// random fills
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> tensor_uniform(Shape s, Rng& rng, double lo = 0.0, double hi = 1.0) {
    Tensor<T> t(s);
    for (T& v : t.vec()) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

template <typename T>
Tensor<T> tensor_normal(Shape s, Rng& rng, double stddev = 1.0) {
    Tensor<T> t(s);
    for (T& v : t.vec()) v = static_cast<T>(rng.normal() * stddev);
    return t;
}

}  // namespace brd
