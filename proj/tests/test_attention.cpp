#include <cmath>
#include <vector>

#include "birdrone/attention.hpp"
#include "catch_amalgamated.hpp"
#include "test_util.hpp"

using namespace brd;
using Catch::Approx;

namespace {

// Side length of the bounding square of nonzero responses to a centered
// impulse. Requires all biases zeroed so zero input stays exactly zero.
template <typename T>
int impulse_support(const Tensor<T>& response, int cy, int cx) {
    const Shape s = response.shape();
    int reach = -1;
    for (int c = 0; c < s.c; ++c)
        for (int y = 0; y < s.h; ++y)
            for (int x = 0; x < s.w; ++x)
                if (response.at(0, c, y, x) != T(0))
                    reach = std::max({reach, std::abs(y - cy), std::abs(x - cx)});
    return reach < 0 ? 0 : 2 * reach + 1;
}

template <typename T>
void zero_biases(MultiScaleSplit<T>& m) {
    for (Conv2d<T>* c : {&m.f3a, &m.f3b, &m.f5a, &m.f5b})
        for (std::size_t i = 0; i < c->b.numel(); ++i) c->b.data()[i] = T(0);
}

}  // namespace

TEST_CASE("eca kernel size rule") {
    // k = floor(log2(C)/2 + 1/2), bumped to odd, floor 3
    REQUIRE(eca_kernel_size(1) == 3);
    REQUIRE(eca_kernel_size(8) == 3);
    REQUIRE(eca_kernel_size(16) == 3);
    REQUIRE(eca_kernel_size(32) == 3);
    REQUIRE(eca_kernel_size(64) == 3);
    REQUIRE(eca_kernel_size(128) == 5);
    REQUIRE(eca_kernel_size(256) == 5);
    REQUIRE(eca_kernel_size(1024) == 5);
    REQUIRE(eca_kernel_size(4096) == 7);
}

TEST_CASE("spatial attention emits one (0,1) map per pixel") {
    Rng rng(41);
    auto sa = SpatialAttention<double>::make(rng, 7);
    auto x = tensor_uniform<double>(Shape{2, 8, 9, 9}, rng, -3, 3);
    auto m = sa.forward(x);
    REQUIRE(m.kind == AttentionKind::spatial);
    REQUIRE(m.values.shape() == Shape{2, 1, 9, 9});
    for (std::size_t i = 0; i < m.values.numel(); ++i) {
        REQUIRE(m.values.data()[i] > 0.0);
        REQUIRE(m.values.data()[i] < 1.0);
    }
}

TEST_CASE("channel attention emits one (0,1) weight per channel") {
    Rng rng(42);
    auto ca = ChannelAttention<double>::make(16, rng);
    REQUIRE(ca.w.shape() == Shape{1, 1, 1, 3});
    auto x = tensor_uniform<double>(Shape{2, 16, 5, 5}, rng, -3, 3);
    auto m = ca.forward(x);
    REQUIRE(m.kind == AttentionKind::channel);
    REQUIRE(m.values.shape() == Shape{2, 16, 1, 1});
    for (std::size_t i = 0; i < m.values.numel(); ++i) {
        REQUIRE(m.values.data()[i] > 0.0);
        REQUIRE(m.values.data()[i] < 1.0);
    }
}

TEST_CASE("channel attention is invariant to spatial shuffling") {
    // the gate sees only the global average, so pixel order cannot matter
    Rng rng(43);
    auto ca = ChannelAttention<double>::make(8, rng);
    auto x = tensor_uniform<double>(Shape{1, 8, 4, 4}, rng, -1, 1);
    Tensor<double> shuffled = x.clone();
    for (int c = 0; c < 8; ++c) {
        std::vector<double> vals;
        for (int y = 0; y < 4; ++y)
            for (int xx = 0; xx < 4; ++xx) vals.push_back(x.at(0, c, y, xx));
        std::reverse(vals.begin(), vals.end());
        int k = 0;
        for (int y = 0; y < 4; ++y)
            for (int xx = 0; xx < 4; ++xx) shuffled.at(0, c, y, xx) = vals[k++];
    }
    auto m1 = ca.forward(x);
    auto m2 = ca.forward(shuffled);
    for (std::size_t i = 0; i < m1.values.numel(); ++i)
        REQUIRE(m1.values.data()[i] == Approx(m2.values.data()[i]).epsilon(1e-12));
}

TEST_CASE("multiscale branches have receptive fields exactly 3, 5, 7, 9") {
    Rng rng(44);
    auto split = MultiScaleSplit<double>::make(8, rng);
    zero_biases(split);

    const int S = 21, mid = 10;
    Tensor<double> x(Shape{1, 8, S, S}, 0.0);
    for (int c = 0; c < 8; ++c) x.at(0, c, mid, mid) = 1.0;
    auto b = split.forward(x);

    REQUIRE(impulse_support(b.x1, mid, mid) == 3);
    REQUIRE(impulse_support(b.x2, mid, mid) == 5);
    REQUIRE(impulse_support(b.x3, mid, mid) == 7);
    REQUIRE(impulse_support(b.x4, mid, mid) == 9);
}

TEST_CASE("multiscale split composes shared convolutions") {
    // X2 = f3b(X1), X3 = f5a(X1), X4 = f5b(X2): recomputing from the bundle's
    // own upstream outputs must reproduce the downstream outputs exactly.
    Rng rng(45);
    auto split = MultiScaleSplit<double>::make(8, rng);
    auto x = tensor_uniform<double>(Shape{1, 8, 11, 11}, rng, -1, 1);
    auto b = split.forward(x);

    auto x2 = silu(split.f3b.forward(b.x1));
    auto x3 = silu(split.f5a.forward(b.x1));
    auto x4 = silu(split.f5b.forward(b.x2));
    for (std::size_t i = 0; i < b.x2.numel(); ++i) REQUIRE(b.x2.data()[i] == x2.data()[i]);
    for (std::size_t i = 0; i < b.x3.numel(); ++i) REQUIRE(b.x3.data()[i] == x3.data()[i]);
    for (std::size_t i = 0; i < b.x4.numel(); ++i) REQUIRE(b.x4.data()[i] == x4.data()[i]);
}

TEST_CASE("multiscale split rejects inputs smaller than its widest branch") {
    Rng rng(46);
    auto split = MultiScaleSplit<double>::make(8, rng);
    Tensor<double> small(Shape{1, 8, 8, 8}, 0.5);
    REQUIRE_THROWS(split.forward(small));
    Tensor<double> ok(Shape{1, 8, 9, 9}, 0.5);
    REQUIRE_NOTHROW(split.forward(ok));
}

TEST_CASE("dual attention preserves shape and the two variants disagree") {
    Rng rng(47);
    DualAttentionConfig cf;
    cf.channels = 8;
    cf.spatial_kernel = 7;

    cf.reversed = false;
    Rng ra(100);
    auto mpda = DualAttention<double>::make(cf, ra);
    cf.reversed = true;
    Rng rb(100);
    auto rmpda = DualAttention<double>::make(cf, rb);

    auto x = tensor_uniform<double>(Shape{2, 8, 12, 12}, rng, -1, 1);
    auto y1 = mpda.forward(x);
    auto y2 = rmpda.forward(x);
    REQUIRE(y1.shape() == x.shape());
    REQUIRE(y2.shape() == x.shape());

    double maxdiff = 0.0;
    for (std::size_t i = 0; i < y1.numel(); ++i)
        maxdiff = std::max(maxdiff, std::abs(y1.data()[i] - y2.data()[i]));
    REQUIRE(maxdiff > 1e-6);
}

TEST_CASE("dual attention degenerates to identity when the projection is zero") {
    Rng rng(48);
    DualAttentionConfig cf;
    cf.channels = 8;
    auto block = DualAttention<double>::make(cf, rng);
    for (std::size_t i = 0; i < block.proj.w.numel(); ++i) block.proj.w.data()[i] = 0.0;
    for (std::size_t i = 0; i < block.proj.b.numel(); ++i) block.proj.b.data()[i] = 0.0;
    auto x = tensor_uniform<double>(Shape{1, 8, 10, 10}, rng, -1, 1);
    auto y = block.forward(x);
    for (std::size_t i = 0; i < x.numel(); ++i) REQUIRE(y.data()[i] == x.data()[i]);
}

TEST_CASE("dual attention config validation") {
    DualAttentionConfig cf;
    cf.channels = 6;  // not divisible by 4
    REQUIRE_THROWS(cf.validate());
    cf.channels = 8;
    REQUIRE_NOTHROW(cf.validate());
}

TEST_CASE("attention gradients against finite differences") {
    Rng rng(49);
    auto sa = SpatialAttention<double>::make(rng, 3);
    auto ca = ChannelAttention<double>::make(8, rng);
    auto x = tensor_uniform<double>(Shape{1, 8, 6, 6}, rng, -1, 1);

    REQUIRE(gradcheck_fn(x, [&](Tensor<double>& t) {
        return sum(square(modulate(t, sa.forward(t))));
    }, 1e-5, 150) < 1e-6);
    REQUIRE(gradcheck_fn(x, [&](Tensor<double>& t) {
        return sum(square(modulate(t, ca.forward(t))));
    }, 1e-5, 150) < 1e-6);
    REQUIRE(gradcheck_fn(ca.w, [&](Tensor<double>&) {
        return sum(square(modulate(x, ca.forward(x))));
    }) < 1e-7);

    DualAttentionConfig cf;
    cf.channels = 8;
    for (bool rev : {false, true}) {
        cf.reversed = rev;
        Rng r2(50);
        auto block = DualAttention<double>::make(cf, r2);
        auto xb = tensor_uniform<double>(Shape{1, 8, 10, 10}, r2, -1, 1);
        REQUIRE(gradcheck_fn(xb, [&](Tensor<double>& t) {
            return sum(square(block.forward(t)));
        }, 1e-5, 120) < 1e-6);
    }
}
