#pragma once

#include <string>

#include "birdrone/layers.hpp"

namespace brd {

enum class AttentionKind { spatial, channel };

// Gate produced by an attention module; values are sigmoid outputs, so every
// entry lies strictly in (0,1).
template <typename T>
struct AttentionMap {
    Tensor<T> values;  // (N,1,H,W) for spatial, (N,C,1,1) for channel
    AttentionKind kind;
};

// ECA kernel rule: k = floor(log2(C)/2 + 1/2) rounded up to odd, minimum 3.
inline int eca_kernel_size(int channels) {
    require(channels >= 1, "eca_kernel_size: channels must be positive");
    int t = static_cast<int>(std::floor(std::log2(static_cast<double>(channels)) / 2.0 + 0.5));
    if (t % 2 == 0) t += 1;
    return std::max(3, t);
}

// "Where" gate: sigmoid of a kxk conv over the [channel-mean; channel-max]
// stack.
template <typename T>
struct SpatialAttention {
    Conv2d<T> conv;

    static SpatialAttention make(Rng& rng, int k = 7) {
        require(k % 2 == 1, "spatial attention kernel must be odd");
        SpatialAttention s;
        s.conv = Conv2d<T>::make(2, 1, k, 1, (k - 1) / 2, rng);
        return s;
    }

    AttentionMap<T> forward(const Tensor<T>& x) const {
        auto stack = concat_channels<T>({channel_mean(x), channel_max(x)});
        return {sigmoid(conv.forward(stack)), AttentionKind::spatial};
    }

    void params(ParamList<T>& out, const std::string& prefix) const {
        conv.params(out, prefix + ".conv");
    }
};

// "What" gate: global average pool, then a bias-free 1-D conv across the
// channel axis (zero padded), then sigmoid.
template <typename T>
struct ChannelAttention {
    Tensor<T> w;  // (1,1,1,k)

    static ChannelAttention make(int channels, Rng& rng) {
        ChannelAttention c;
        const int k = eca_kernel_size(channels);
        const double s = 1.0 / std::sqrt(static_cast<double>(k));
        c.w = tensor_uniform<T>(Shape{1, 1, 1, k}, rng, -s, s);
        c.w.set_requires_grad(true);
        return c;
    }

    AttentionMap<T> forward(const Tensor<T>& x) const {
        return {sigmoid(conv1d_channels(global_avg_pool(x), w)), AttentionKind::channel};
    }

    void params(ParamList<T>& out, const std::string& prefix) const {
        out.emplace_back(prefix + ".w", w);
    }
};

template <typename T>
Tensor<T> modulate(const Tensor<T>& x, const AttentionMap<T>& a) {
    return mul(x, a.values);
}

struct DualAttentionConfig {
    int channels = 0;       // input channels, divisible by 4
    int spatial_kernel = 7;
    bool reversed = false;  // false: SA on X1/X2, CA on X3/X4, spatial post-concat
                            // true: the opposite assignment, channel post-concat

    int branch_channels() const { return channels / 4; }

    void validate() const {
        require(channels >= 4 && channels % 4 == 0,
                "dual attention needs channels divisible by 4, got " + std::to_string(channels));
    }
};

// Four stride-1 branches with receptive fields 3/5/7/9. The inner convs are
// shared exactly as composed: X2 = f3b(X1), X3 = f5a(X1), X4 = f5b(X2), so
// four convolutions execute per call. SiLU after each.
template <typename T>
struct MultiScaleSplit {
    Conv2d<T> f3a;  // C   -> C/4, 3x3
    Conv2d<T> f3b;  // C/4 -> C/4, 3x3
    Conv2d<T> f5a;  // C/4 -> C/4, 5x5
    Conv2d<T> f5b;  // C/4 -> C/4, 5x5

    struct Bundle {
        Tensor<T> x1, x2, x3, x4;
    };

    static MultiScaleSplit make(int channels, Rng& rng) {
        const int bc = channels / 4;
        MultiScaleSplit m;
        m.f3a = Conv2d<T>::make(channels, bc, 3, 1, 1, rng);
        m.f3b = Conv2d<T>::make(bc, bc, 3, 1, 1, rng);
        m.f5a = Conv2d<T>::make(bc, bc, 5, 1, 2, rng);
        m.f5b = Conv2d<T>::make(bc, bc, 5, 1, 2, rng);
        return m;
    }

    Bundle forward(const Tensor<T>& x) const {
        require(x.shape().h >= 9 && x.shape().w >= 9,
                "multiscale split needs spatial dims >= 9, got " + x.shape().str());
        Bundle b;
        b.x1 = silu(f3a.forward(x));
        b.x2 = silu(f3b.forward(b.x1));
        b.x3 = silu(f5a.forward(b.x1));
        b.x4 = silu(f5b.forward(b.x2));
        return b;
    }

    void params(ParamList<T>& out, const std::string& prefix) const {
        f3a.params(out, prefix + ".f3a");
        f3b.params(out, prefix + ".f3b");
        f5a.params(out, prefix + ".f5a");
        f5b.params(out, prefix + ".f5b");
    }
};

// Multi-scale dual-attention block. Branches X1/X2 carry fine detail and
// X3/X4 wide context; each pair gets its own attention kind, chosen by
// config.reversed, every branch owning a separate gate. The concatenation is
// gated once more, projected back to the input width by a 1x1 conv, and added
// residually, so the block drops into any stream without shape changes.
template <typename T>
struct DualAttention {
    DualAttentionConfig cfg;
    MultiScaleSplit<T> split;
    SpatialAttention<T> sa1, sa2;   // gates for the pair that gets spatial
    ChannelAttention<T> ca1, ca2;   // gates for the pair that gets channel
    SpatialAttention<T> post_sa;    // used when !reversed
    ChannelAttention<T> post_ca;    // used when reversed
    Conv2d<T> proj;                 // 1x1, C -> C

    static DualAttention make(DualAttentionConfig cfg, Rng& rng) {
        cfg.validate();
        DualAttention d;
        d.cfg = cfg;
        const int bc = cfg.branch_channels();
        d.split = MultiScaleSplit<T>::make(cfg.channels, rng);
        d.sa1 = SpatialAttention<T>::make(rng, cfg.spatial_kernel);
        d.sa2 = SpatialAttention<T>::make(rng, cfg.spatial_kernel);
        d.ca1 = ChannelAttention<T>::make(bc, rng);
        d.ca2 = ChannelAttention<T>::make(bc, rng);
        if (cfg.reversed)
            d.post_ca = ChannelAttention<T>::make(cfg.channels, rng);
        else
            d.post_sa = SpatialAttention<T>::make(rng, cfg.spatial_kernel);
        d.proj = Conv2d<T>::make(cfg.channels, cfg.channels, 1, 1, 0, rng);
        return d;
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        require(x.shape().c == cfg.channels,
                "dual attention expects " + std::to_string(cfg.channels) + " channels, got " +
                    std::to_string(x.shape().c));
        auto b = split.forward(x);
        Tensor<T> m1, m2, m3, m4;
        if (!cfg.reversed) {
            m1 = modulate(b.x1, sa1.forward(b.x1));
            m2 = modulate(b.x2, sa2.forward(b.x2));
            m3 = modulate(b.x3, ca1.forward(b.x3));
            m4 = modulate(b.x4, ca2.forward(b.x4));
        } else {
            m1 = modulate(b.x1, ca1.forward(b.x1));
            m2 = modulate(b.x2, ca2.forward(b.x2));
            m3 = modulate(b.x3, sa1.forward(b.x3));
            m4 = modulate(b.x4, sa2.forward(b.x4));
        }
        auto cat = concat_channels<T>({m1, m2, m3, m4});
        auto gated = cfg.reversed ? modulate(cat, post_ca.forward(cat))
                                  : modulate(cat, post_sa.forward(cat));
        return add(x, proj.forward(gated));
    }

    void params(ParamList<T>& out, const std::string& prefix) const {
        split.params(out, prefix + ".split");
        sa1.params(out, prefix + ".sa1");
        sa2.params(out, prefix + ".sa2");
        ca1.params(out, prefix + ".ca1");
        ca2.params(out, prefix + ".ca2");
        if (cfg.reversed)
            post_ca.params(out, prefix + ".post_ca");
        else
            post_sa.params(out, prefix + ".post_sa");
        proj.params(out, prefix + ".proj");
    }
};

template <typename T>
DualAttention<T> make_mpda(int channels, Rng& rng, int spatial_kernel = 7) {
    return DualAttention<T>::make({channels, spatial_kernel, false}, rng);
}

template <typename T>
DualAttention<T> make_rmpda(int channels, Rng& rng, int spatial_kernel = 7) {
    return DualAttention<T>::make({channels, spatial_kernel, true}, rng);
}

}  // namespace brd
