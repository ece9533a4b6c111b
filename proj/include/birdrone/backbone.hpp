#pragma once

#include <string>
#include <vector>

#include "birdrone/attention.hpp"

namespace brd {

struct AelanConfig {
    int in = 0;
    int out = 0;
    int csp_depth = 2;
    bool use_deformable = false;

    int transition_in() const { return (csp_depth + 1) * (in / 2); }

    void validate() const {
        require(in >= 2 && in % 2 == 0,
                "block input channels must be even, got " + std::to_string(in));
        require(out >= 1, "block output channels must be positive");
        require(csp_depth >= 1, "csp_depth must be >= 1");
    }
};

// CSP sub-block: two 3x3 convs with SiLU and a residual. These are the convs
// that become deformable in the AELAN variant; 1x1 transitions never do.
template <typename T>
struct CspSub {
    MaybeDeformConv<T> c1, c2;

    static CspSub make(int ch, Rng& rng, bool deform) {
        CspSub s;
        s.c1 = MaybeDeformConv<T>::make(ch, ch, 3, 1, 1, rng, deform);
        s.c2 = MaybeDeformConv<T>::make(ch, ch, 3, 1, 1, rng, deform);
        return s;
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        auto h = silu(c1.forward(x));
        h = silu(c2.forward(h));
        return add(x, h);
    }

    void params(ParamList<T>& out, const std::string& prefix) const {
        c1.params(out, prefix + ".c1");
        c2.params(out, prefix + ".c2");
    }
};

// GELAN-style aggregation block; with use_deformable it is the AELAN variant.
// The input splits into two channel halves: the first passes through
// untouched, the second runs through csp_depth sequential CSP sub-blocks.
// The untouched half and every sub-block output are concatenated and fused by
// a 1x1 transition.
template <typename T>
struct GelanBlock {
    AelanConfig cfg;
    std::vector<CspSub<T>> subs;
    Conv2d<T> transition;

    static GelanBlock make(AelanConfig cfg, Rng& rng) {
        cfg.validate();
        GelanBlock b;
        b.cfg = cfg;
        const int half = cfg.in / 2;
        for (int i = 0; i < cfg.csp_depth; ++i)
            b.subs.push_back(CspSub<T>::make(half, rng, cfg.use_deformable));
        b.transition = Conv2d<T>::make(cfg.transition_in(), cfg.out, 1, 1, 0, rng);
        return b;
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        require(x.shape().c == cfg.in, "block expects " + std::to_string(cfg.in) +
                                           " channels, got " + std::to_string(x.shape().c));
        const int half = cfg.in / 2;
        std::vector<Tensor<T>> parts;
        parts.push_back(slice_channels(x, 0, half));
        Tensor<T> cur = slice_channels(x, half, half);
        for (const auto& s : subs) {
            cur = s.forward(cur);
            parts.push_back(cur);
        }
        return silu(transition.forward(concat_channels(parts)));
    }

    void params(ParamList<T>& out, const std::string& prefix) const {
        for (std::size_t i = 0; i < subs.size(); ++i)
            subs[i].params(out, prefix + ".csp" + std::to_string(i));
        transition.params(out, prefix + ".transition");
    }
};

struct ModelConfig {
    int image_size = 160;
    int in_channels = 1;
    int num_classes = 2;
    int stem_ch = 16;
    int p3_ch = 32;
    int p4_ch = 64;
    int p5_ch = 128;
    int csp_depth = 2;
    bool use_aelan = false;
    bool use_mpda = false;
    bool use_rmpda = false;
    int sa_kernel = 7;

    void validate() const {
        require(image_size >= 32 && image_size % 32 == 0,
                "image_size must be a positive multiple of 32, got " +
                    std::to_string(image_size));
        require(in_channels >= 1 && num_classes >= 1, "channels/classes must be positive");
        require(stem_ch >= 2 && p3_ch >= 4 && p4_ch >= 4 && p5_ch >= 4,
                "channel widths too small");
        require(p3_ch % 4 == 0 && p4_ch % 4 == 0 && p5_ch % 4 == 0,
                "pyramid widths must be divisible by 4");
        require(csp_depth >= 1, "csp_depth must be >= 1");
    }

    int level_size(int level) const { return image_size >> level; }  // level 3,4,5
    int level_stride(int level) const { return 1 << level; }
    int level_channels(int level) const {
        return level == 3 ? p3_ch : level == 4 ? p4_ch : p5_ch;
    }
};

// The dual-attention blocks need spatial extent >= 9 for their widest branch.
// Placement therefore adapts to the configured image size: the fine-detail
// block sits after the P3 stage when P3 qualifies, and the reversed block
// after the deepest stage that qualifies (P5 at 288 px and up, P4 at the
// 160 px desk scale). Returns 0 when no level qualifies.
inline int deepest_attention_level(const ModelConfig& cfg) {
    for (int level = 5; level >= 3; --level)
        if (cfg.level_size(level) >= 9) return level;
    return 0;
}

template <typename T>
struct Backbone {
    ModelConfig cfg;
    Conv2d<T> stem1, stem2;
    Conv2d<T> down3, down4, down5;
    GelanBlock<T> block3, block4, block5;
    bool has_mpda = false;
    int rmpda_level = 0;  // 0 = disabled
    DualAttention<T> mpda, rmpda;
    std::vector<std::string> notes;

    struct Pyramid {
        Tensor<T> p3, p4, p5;
    };

    static Backbone make(const ModelConfig& cfg, Rng& rng) {
        cfg.validate();
        Backbone b;
        b.cfg = cfg;
        b.stem1 = Conv2d<T>::make(cfg.in_channels, cfg.stem_ch, 3, 2, 1, rng);
        b.stem2 = Conv2d<T>::make(cfg.stem_ch, cfg.stem_ch, 3, 2, 1, rng);
        b.down3 = Conv2d<T>::make(cfg.stem_ch, cfg.p3_ch, 3, 2, 1, rng);
        b.block3 = GelanBlock<T>::make({cfg.p3_ch, cfg.p3_ch, cfg.csp_depth, cfg.use_aelan}, rng);
        if (cfg.use_mpda) {
            if (cfg.level_size(3) >= 9) {
                b.has_mpda = true;
                b.mpda = make_mpda<T>(cfg.p3_ch, rng, cfg.sa_kernel);
            } else {
                b.notes.push_back("mpda disabled: P3 is " + std::to_string(cfg.level_size(3)) +
                                  "px, needs >= 9");
            }
        }
        b.down4 = Conv2d<T>::make(cfg.p3_ch, cfg.p4_ch, 3, 2, 1, rng);
        b.block4 = GelanBlock<T>::make({cfg.p4_ch, cfg.p4_ch, cfg.csp_depth, cfg.use_aelan}, rng);
        b.down5 = Conv2d<T>::make(cfg.p4_ch, cfg.p5_ch, 3, 2, 1, rng);
        b.block5 = GelanBlock<T>::make({cfg.p5_ch, cfg.p5_ch, cfg.csp_depth, cfg.use_aelan}, rng);
        if (cfg.use_rmpda) {
            b.rmpda_level = deepest_attention_level(cfg);
            if (b.rmpda_level > 0) {
                b.rmpda = make_rmpda<T>(cfg.level_channels(b.rmpda_level), rng, cfg.sa_kernel);
                if (b.rmpda_level != 5)
                    b.notes.push_back("rmpda placed after P" + std::to_string(b.rmpda_level) +
                                      " (deeper levels are under 9px at image_size " +
                                      std::to_string(cfg.image_size) + ")");
            } else {
                b.notes.push_back("rmpda disabled: no pyramid level is >= 9px");
            }
        }
        return b;
    }

    Pyramid forward(const Tensor<T>& x) const {
        const Shape s = x.shape();
        require(s.c == cfg.in_channels && s.h == cfg.image_size && s.w == cfg.image_size,
                "backbone expects (N," + std::to_string(cfg.in_channels) + "," +
                    std::to_string(cfg.image_size) + "," + std::to_string(cfg.image_size) +
                    "), got " + s.str());
        auto t = silu(stem1.forward(x));
        t = silu(stem2.forward(t));
        auto p3 = block3.forward(silu(down3.forward(t)));
        if (has_mpda) p3 = mpda.forward(p3);
        if (rmpda_level == 3) p3 = rmpda.forward(p3);
        auto p4 = block4.forward(silu(down4.forward(p3)));
        if (rmpda_level == 4) p4 = rmpda.forward(p4);
        auto p5 = block5.forward(silu(down5.forward(p4)));
        if (rmpda_level == 5) p5 = rmpda.forward(p5);
        return {p3, p4, p5};
    }

    void params(ParamList<T>& out, const std::string& prefix) const {
        stem1.params(out, prefix + ".stem1");
        stem2.params(out, prefix + ".stem2");
        down3.params(out, prefix + ".down3");
        block3.params(out, prefix + ".block3");
        if (has_mpda) mpda.params(out, prefix + ".mpda_p3");
        down4.params(out, prefix + ".down4");
        block4.params(out, prefix + ".block4");
        down5.params(out, prefix + ".down5");
        block5.params(out, prefix + ".block5");
        if (rmpda_level > 0)
            rmpda.params(out, prefix + ".rmpda_p" + std::to_string(rmpda_level));
    }
};

}  // namespace brd
