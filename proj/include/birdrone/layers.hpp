#pragma once

#include <string>
#include <utility>
#include <vector>

#include "birdrone/conv.hpp"

namespace brd {

template <typename T>
using ParamList = std::vector<std::pair<std::string, Tensor<T>>>;

// Convolution layer. Weights use uniform init with a silu-specific gain
// (variance 2.81/fan_in, from 1/E[silu(z)^2] for unit normal z): there is no
// normalization anywhere in the network, so the init gain alone has to keep
// activation variance from collapsing through the silu stack.
template <typename T>
struct Conv2d {
    int stride = 1;
    int pad = 0;
    Tensor<T> w;  // (Cout, Cin, K, K)
    Tensor<T> b;  // (1, Cout, 1, 1), undefined when bias-free

    static Conv2d make(int cin, int cout, int k, int stride, int pad, Rng& rng,
                       bool bias = true) {
        Conv2d c;
        c.stride = stride;
        c.pad = pad;
        const double fan_in = static_cast<double>(cin) * k * k;
        const double s = std::sqrt(3.0 * 2.32 / fan_in);
        c.w = tensor_uniform<T>(Shape{cout, cin, k, k}, rng, -s, s);
        c.w.set_requires_grad(true);
        if (bias) {
            const double sb = 1.0 / std::sqrt(fan_in);
            c.b = tensor_uniform<T>(Shape{1, cout, 1, 1}, rng, -sb, sb);
            c.b.set_requires_grad(true);
        }
        return c;
    }

    Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, w, b, stride, pad); }

    void params(ParamList<T>& out, const std::string& prefix) const {
        out.emplace_back(prefix + ".w", w);
        if (b.defined()) out.emplace_back(prefix + ".b", b);
    }
};

// Deformable convolution layer: a standard kernel plus an offset branch, a
// 3x3 convolution emitting 2*K*K channels of (dy, dx) pairs. The branch is
// zero-initialized and consumes no RNG draws, so a model built with the same
// seed but plain convolutions has identical main-kernel weights.
template <typename T>
struct DeformConv2d {
    Conv2d<T> main;
    Conv2d<T> offb;

    static DeformConv2d make(int cin, int cout, int k, int stride, int pad, Rng& rng) {
        DeformConv2d d;
        d.main = Conv2d<T>::make(cin, cout, k, stride, pad, rng, true);
        d.offb.stride = stride;
        d.offb.pad = pad + (3 - k) / 2;  // branch kernel is always 3x3
        d.offb.w = Tensor<T>::zeros(Shape{2 * k * k, cin, 3, 3});
        d.offb.w.set_requires_grad(true);
        d.offb.b = Tensor<T>::zeros(Shape{1, 2 * k * k, 1, 1});
        d.offb.b.set_requires_grad(true);
        return d;
    }

    Tensor<T> offsets(const Tensor<T>& x) const { return offb.forward(x); }

    Tensor<T> forward(const Tensor<T>& x) const {
        return deform_conv2d(x, main.w, main.b, offsets(x), main.stride, main.pad);
    }

    void params(ParamList<T>& out, const std::string& prefix) const {
        main.params(out, prefix);
        offb.params(out, prefix + ".off");
    }
};

// Either a plain or a deformable conv behind one interface; which one is
// chosen at construction and never changes.
template <typename T>
struct MaybeDeformConv {
    bool deform = false;
    Conv2d<T> plain;
    DeformConv2d<T> dc;

    static MaybeDeformConv make(int cin, int cout, int k, int stride, int pad, Rng& rng,
                                bool deform) {
        MaybeDeformConv m;
        m.deform = deform;
        if (deform)
            m.dc = DeformConv2d<T>::make(cin, cout, k, stride, pad, rng);
        else
            m.plain = Conv2d<T>::make(cin, cout, k, stride, pad, rng);
        return m;
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        return deform ? dc.forward(x) : plain.forward(x);
    }

    void params(ParamList<T>& out, const std::string& prefix) const {
        if (deform)
            dc.params(out, prefix);
        else
            plain.params(out, prefix);
    }
};

template <typename T>
std::size_t param_count(const ParamList<T>& params) {
    std::size_t n = 0;
    for (const auto& [name, t] : params) n += t.numel();
    return n;
}

template <typename T>
void zero_all_grads(ParamList<T>& params) {
    for (auto& [name, t] : params) t.zero_grad();
}

}  // namespace brd
