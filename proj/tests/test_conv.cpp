#include <cmath>
#include <vector>

#include "birdrone/conv.hpp"
#include "birdrone/layers.hpp"
#include "catch_amalgamated.hpp"
#include "test_util.hpp"

using namespace brd;
using Catch::Approx;

namespace {

// Independent convolution oracle: plain nested loops, no im2col.
template <typename T>
Tensor<T> conv_oracle(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride,
                      int pad) {
    const Shape xs = x.shape(), ws = w.shape();
    const int K = ws.h;
    const int Hout = (xs.h + 2 * pad - K) / stride + 1;
    const int Wout = (xs.w + 2 * pad - K) / stride + 1;
    Tensor<T> y(Shape{xs.n, ws.n, Hout, Wout}, T(0));
    for (int n = 0; n < xs.n; ++n)
        for (int co = 0; co < ws.n; ++co)
            for (int oy = 0; oy < Hout; ++oy)
                for (int ox = 0; ox < Wout; ++ox) {
                    double acc = b.defined() ? static_cast<double>(b.at(0, co, 0, 0)) : 0.0;
                    for (int ci = 0; ci < xs.c; ++ci)
                        for (int ky = 0; ky < K; ++ky)
                            for (int kx = 0; kx < K; ++kx) {
                                const int iy = oy * stride - pad + ky;
                                const int ix = ox * stride - pad + kx;
                                if (iy < 0 || iy >= xs.h || ix < 0 || ix >= xs.w) continue;
                                acc += static_cast<double>(x.at(n, ci, iy, ix)) *
                                       static_cast<double>(w.at(co, ci, ky, kx));
                            }
                    y.at(n, co, oy, ox) = static_cast<T>(acc);
                }
    return y;
}

// Independent bilinear lookup with the same out-of-bounds convention: any
// sample more than one pixel outside the grid reads zero, corners off the
// grid contribute zero.
double bilinear_oracle(const std::vector<double>& plane, int H, int W, double y, double x) {
    if (y <= -1.0 || y >= H || x <= -1.0 || x >= W) return 0.0;
    const int y0 = static_cast<int>(std::floor(y));
    const int x0 = static_cast<int>(std::floor(x));
    auto at = [&](int yy, int xx) {
        if (yy < 0 || yy >= H || xx < 0 || xx >= W) return 0.0;
        return plane[static_cast<std::size_t>(yy) * W + xx];
    };
    const double ly = y - y0, lx = x - x0;
    return (1 - ly) * (1 - lx) * at(y0, x0) + (1 - ly) * lx * at(y0, x0 + 1) +
           ly * (1 - lx) * at(y0 + 1, x0) + ly * lx * at(y0 + 1, x0 + 1);
}

// Deformable convolution oracle driven by bilinear_oracle.
template <typename T>
Tensor<T> deform_oracle(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                        const Tensor<T>& off, int stride, int pad) {
    const Shape xs = x.shape(), ws = w.shape(), os = off.shape();
    const int K = ws.h;
    const int Hout = os.h, Wout = os.w;
    Tensor<T> y(Shape{xs.n, ws.n, Hout, Wout}, T(0));
    for (int n = 0; n < xs.n; ++n)
        for (int co = 0; co < ws.n; ++co)
            for (int oy = 0; oy < Hout; ++oy)
                for (int ox = 0; ox < Wout; ++ox) {
                    double acc = b.defined() ? static_cast<double>(b.at(0, co, 0, 0)) : 0.0;
                    for (int ci = 0; ci < xs.c; ++ci) {
                        std::vector<double> plane(static_cast<std::size_t>(xs.h) * xs.w);
                        for (int yy = 0; yy < xs.h; ++yy)
                            for (int xx = 0; xx < xs.w; ++xx)
                                plane[static_cast<std::size_t>(yy) * xs.w + xx] =
                                    static_cast<double>(x.at(n, ci, yy, xx));
                        for (int ky = 0; ky < K; ++ky)
                            for (int kx = 0; kx < K; ++kx) {
                                const int tap = ky * K + kx;
                                const double dy =
                                    static_cast<double>(off.at(n, 2 * tap, oy, ox));
                                const double dx =
                                    static_cast<double>(off.at(n, 2 * tap + 1, oy, ox));
                                const double sy = oy * stride - pad + ky + dy;
                                const double sx = ox * stride - pad + kx + dx;
                                acc += static_cast<double>(w.at(co, ci, ky, kx)) *
                                       bilinear_oracle(plane, xs.h, xs.w, sy, sx);
                            }
                    }
                    y.at(n, co, oy, ox) = static_cast<T>(acc);
                }
    return y;
}

}  // namespace

TEST_CASE("gemm variants match naive matrix products") {
    Rng rng(21);
    const int M = 7, N = 5, K = 9;
    std::vector<double> A(M * K), B(K * N), Bt(N * K), At(K * M);
    for (auto& v : A) v = rng.uniform(-1, 1);
    for (auto& v : B) v = rng.uniform(-1, 1);
    for (int k = 0; k < K; ++k)
        for (int n = 0; n < N; ++n) Bt[n * K + k] = B[k * N + n];
    for (int m = 0; m < M; ++m)
        for (int k = 0; k < K; ++k) At[k * M + m] = A[m * K + k];

    std::vector<double> want(M * N, 0.0);
    for (int m = 0; m < M; ++m)
        for (int n = 0; n < N; ++n)
            for (int k = 0; k < K; ++k) want[m * N + n] += A[m * K + k] * B[k * N + n];

    std::vector<double> c1(M * N, 0.0), c2(M * N, 0.0), c3(M * N, 0.0);
    gemm_nn(M, N, K, A.data(), B.data(), c1.data());
    gemm_nt(M, N, K, A.data(), Bt.data(), c2.data());
    gemm_tn(M, N, K, At.data(), B.data(), c3.data());
    for (int i = 0; i < M * N; ++i) {
        REQUIRE(c1[i] == Approx(want[i]).epsilon(1e-12));
        REQUIRE(c2[i] == Approx(want[i]).epsilon(1e-12));
        REQUIRE(c3[i] == Approx(want[i]).epsilon(1e-12));
    }

    // all three accumulate into C rather than overwrite
    gemm_nn(M, N, K, A.data(), B.data(), c1.data());
    for (int i = 0; i < M * N; ++i) REQUIRE(c1[i] == Approx(2 * want[i]).epsilon(1e-12));
}

TEST_CASE("conv2d matches the nested-loop oracle") {
    Rng rng(22);
    struct Case {
        int n, c, h, w, cout, k, stride, pad;
    };
    const Case cases[] = {
        {1, 1, 5, 5, 1, 3, 1, 1}, {2, 3, 8, 6, 4, 3, 1, 1}, {1, 2, 9, 9, 3, 3, 2, 1},
        {2, 4, 7, 7, 2, 1, 1, 0}, {1, 3, 10, 8, 5, 5, 2, 2}, {1, 2, 6, 6, 3, 3, 1, 0},
    };
    for (const auto& cs : cases) {
        auto x = tensor_uniform<double>(Shape{cs.n, cs.c, cs.h, cs.w}, rng, -1, 1);
        auto w = tensor_uniform<double>(Shape{cs.cout, cs.c, cs.k, cs.k}, rng, -1, 1);
        auto b = tensor_uniform<double>(Shape{1, cs.cout, 1, 1}, rng, -1, 1);
        auto got = conv2d(x, w, b, cs.stride, cs.pad);
        auto want = conv_oracle(x, w, b, cs.stride, cs.pad);
        REQUIRE(got.shape() == want.shape());
        for (std::size_t i = 0; i < got.numel(); ++i)
            REQUIRE(got.data()[i] == Approx(want.data()[i]).margin(1e-12));
    }
}

TEST_CASE("deform_conv2d matches the scalar bilinear oracle") {
    Rng rng(23);
    for (int trial = 0; trial < 4; ++trial) {
        const int K = trial % 2 == 0 ? 3 : 1;
        const int stride = trial < 2 ? 1 : 2;
        const int pad = K / 2;
        auto x = tensor_uniform<double>(Shape{2, 3, 8, 7}, rng, -1, 1);
        auto w = tensor_uniform<double>(Shape{2, 3, K, K}, rng, -1, 1);
        auto b = tensor_uniform<double>(Shape{1, 2, 1, 1}, rng, -1, 1);
        const int hout = (8 + 2 * pad - K) / stride + 1;
        const int wout = (7 + 2 * pad - K) / stride + 1;
        auto off =
            tensor_uniform<double>(Shape{2, 2 * K * K, hout, wout}, rng, -2.5, 2.5);
        auto got = deform_conv2d(x, w, b, off, stride, pad);
        auto want = deform_oracle(x, w, b, off, stride, pad);
        REQUIRE(got.shape() == want.shape());
        for (std::size_t i = 0; i < got.numel(); ++i)
            REQUIRE(got.data()[i] == Approx(want.data()[i]).margin(1e-12));
    }
}

TEST_CASE("zero offsets reduce deformable conv to standard conv") {
    Rng rng(24);
    for (int trial = 0; trial < 8; ++trial) {
        auto x = tensor_uniform<double>(Shape{1, 3, 9, 9}, rng, -1, 1);
        auto w = tensor_uniform<double>(Shape{4, 3, 3, 3}, rng, -1, 1);
        auto b = tensor_uniform<double>(Shape{1, 4, 1, 1}, rng, -1, 1);
        Tensor<double> off(Shape{1, 18, 9, 9}, 0.0);
        auto d = deform_conv2d(x, w, b, off, 1, 1);
        auto c = conv2d(x, w, b, 1, 1);
        for (std::size_t i = 0; i < d.numel(); ++i)
            REQUIRE(std::abs(d.data()[i] - c.data()[i]) < 1e-9);
    }
}

TEST_CASE("integer offsets translate the sampling grid exactly") {
    Rng rng(25);
    auto x = tensor_uniform<double>(Shape{1, 2, 10, 10}, rng, -1, 1);
    // zero the first column so the conv oracle's left padding matches what the
    // shifted taps read there
    for (int c = 0; c < 2; ++c)
        for (int y = 0; y < 10; ++y) x.at(0, c, y, 0) = 0.0;
    auto w = tensor_uniform<double>(Shape{3, 2, 3, 3}, rng, -1, 1);
    Tensor<double> b;

    // every tap shifted one pixel right equals conv over the shifted image
    Tensor<double> off(Shape{1, 18, 10, 10}, 0.0);
    for (int tap = 0; tap < 9; ++tap)
        for (int p = 0; p < 100; ++p) off.data()[(2 * tap + 1) * 100 + p] = 1.0;

    Tensor<double> shifted(Shape{1, 2, 10, 10}, 0.0);
    for (int c = 0; c < 2; ++c)
        for (int y = 0; y < 10; ++y)
            for (int xx = 0; xx < 9; ++xx) shifted.at(0, c, y, xx) = x.at(0, c, y, xx + 1);

    auto got = deform_conv2d(x, w, b, off, 1, 1);
    auto want = conv2d(shifted, w, b, 1, 1);
    for (std::size_t i = 0; i < got.numel(); ++i)
        REQUIRE(got.data()[i] == Approx(want.data()[i]).margin(1e-12));
}

TEST_CASE("samples beyond the one-pixel border read zero") {
    Tensor<double> x(Shape{1, 1, 4, 4}, 1.0);
    auto w = Tensor<double>::from_vector(Shape{1, 1, 1, 1}, {1.0});
    Tensor<double> b;
    Tensor<double> off(Shape{1, 2, 4, 4}, 0.0);
    // push every sample far out of the grid
    for (std::size_t i = 0; i < off.numel(); ++i) off.data()[i] = 100.0;
    auto y = deform_conv2d(x, w, b, off, 1, 0);
    for (std::size_t i = 0; i < y.numel(); ++i) REQUIRE(y.data()[i] == 0.0);

    // exactly -1 or H is outside too; -0.5 is not
    std::vector<double> plane = {2.0};
    REQUIRE(bilinear_oracle(plane, 1, 1, -1.0, 0.0) == 0.0);
    REQUIRE(bilinear_oracle(plane, 1, 1, 1.0, 0.0) == 0.0);
    REQUIRE(bilinear_oracle(plane, 1, 1, -0.5, 0.0) == Approx(1.0));
}

TEST_CASE("col2im_acc is the adjoint of im2col") {
    // <im2col(x), col> must equal <x, col2im_acc(col)> for random pairs
    Rng rng(26);
    const int C = 3, H = 6, W = 5, K = 3, stride = 1, pad = 1;
    const int hout = H, wout = W;
    const std::size_t colsz = static_cast<std::size_t>(C) * K * K * hout * wout;
    std::vector<double> x(static_cast<std::size_t>(C) * H * W), col(colsz), colr(colsz),
        xback(x.size(), 0.0);
    for (auto& v : x) v = rng.uniform(-1, 1);
    for (auto& v : colr) v = rng.uniform(-1, 1);
    im2col(x.data(), C, H, W, K, stride, pad, hout, wout, col.data());
    col2im_acc(colr.data(), C, H, W, K, stride, pad, hout, wout, xback.data());
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < colsz; ++i) lhs += col[i] * colr[i];
    for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * xback[i];
    REQUIRE(lhs == Approx(rhs).epsilon(1e-12));
}

TEST_CASE("conv2d gradients against finite differences") {
    Rng rng(27);
    auto x = tensor_uniform<double>(Shape{1, 2, 6, 6}, rng, -1, 1);
    auto w = tensor_uniform<double>(Shape{3, 2, 3, 3}, rng, -1, 1);
    auto b = tensor_uniform<double>(Shape{1, 3, 1, 1}, rng, -1, 1);
    w.set_requires_grad(true);
    b.set_requires_grad(true);

    REQUIRE(gradcheck_fn(x, [&](Tensor<double>& t) {
        return sum(square(conv2d(t, w, b, 2, 1)));
    }) < 1e-7);
    REQUIRE(gradcheck_fn(w, [&](Tensor<double>&) {
        return sum(square(conv2d(x, w, b, 2, 1)));
    }) < 1e-7);
    REQUIRE(gradcheck_fn(b, [&](Tensor<double>&) {
        return sum(square(conv2d(x, w, b, 2, 1)));
    }) < 1e-7);
}

TEST_CASE("deform_conv2d gradients against finite differences") {
    Rng rng(28);
    auto x = tensor_uniform<double>(Shape{1, 2, 6, 6}, rng, -1, 1);
    auto w = tensor_uniform<double>(Shape{2, 2, 3, 3}, rng, -1, 1);
    auto b = tensor_uniform<double>(Shape{1, 2, 1, 1}, rng, -1, 1);
    // offsets away from integers so bilinear interpolation is differentiable
    auto off = tensor_uniform<double>(Shape{1, 18, 6, 6}, rng, 0.05, 0.45);
    w.set_requires_grad(true);
    b.set_requires_grad(true);
    off.set_requires_grad(true);

    REQUIRE(gradcheck_fn(x, [&](Tensor<double>& t) {
        return sum(square(deform_conv2d(t, w, b, off, 1, 1)));
    }) < 1e-6);
    REQUIRE(gradcheck_fn(w, [&](Tensor<double>&) {
        return sum(square(deform_conv2d(x, w, b, off, 1, 1)));
    }) < 1e-6);
    REQUIRE(gradcheck_fn(off, [&](Tensor<double>&) {
        return sum(square(deform_conv2d(x, w, b, off, 1, 1)));
    }, 1e-5, 120) < 1e-6);
}

TEST_CASE("DeformConv2d layer offsets start at zero and consume no RNG draws") {
    Rng r1(30), r2(30);
    auto plain = Conv2d<double>::make(3, 4, 3, 1, 1, r1);
    auto deform = DeformConv2d<double>::make(3, 4, 3, 1, 1, r2);
    for (std::size_t i = 0; i < plain.w.numel(); ++i)
        REQUIRE(plain.w.data()[i] == deform.main.w.data()[i]);
    for (std::size_t i = 0; i < deform.offb.w.numel(); ++i)
        REQUIRE(deform.offb.w.data()[i] == 0.0);
    // same downstream draw after construction
    REQUIRE(r1.uniform(0, 1) == r2.uniform(0, 1));

    Rng rx(31);
    auto x = tensor_uniform<double>(Shape{1, 3, 7, 7}, rx, -1, 1);
    auto yd = deform.forward(x);
    auto yp = plain.forward(x);
    for (std::size_t i = 0; i < yd.numel(); ++i)
        REQUIRE(std::abs(yd.data()[i] - yp.data()[i]) < 1e-12);
}
