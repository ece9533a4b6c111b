#pragma once

#include <cmath>
#include <vector>

#include "birdrone/tensor.hpp"

namespace brd {

// ---------------------------------------------------------------------------
// GEMM kernels, row-major, accumulate into C. The i-k-j order keeps the inner
// loop a contiguous saxpy so the compiler vectorizes it.
// ---------------------------------------------------------------------------

template <typename T>
void gemm_nn(int M, int N, int K, const T* A, const T* B, T* C) {
    for (int i = 0; i < M; ++i)
        for (int k = 0; k < K; ++k) {
            const T a = A[static_cast<std::size_t>(i) * K + k];
            if (a == T(0)) continue;
            const T* brow = B + static_cast<std::size_t>(k) * N;
            T* crow = C + static_cast<std::size_t>(i) * N;
            for (int j = 0; j < N; ++j) crow[j] += a * brow[j];
        }
}

// C[M,N] += A[M,K] @ B[N,K]^T. Eight explicit accumulators keep the reduction
// vectorizable without reassociation flags.
template <typename T>
void gemm_nt(int M, int N, int K, const T* A, const T* B, T* C) {
    for (int i = 0; i < M; ++i) {
        const T* arow = A + static_cast<std::size_t>(i) * K;
        for (int j = 0; j < N; ++j) {
            const T* brow = B + static_cast<std::size_t>(j) * K;
            T a0 = T(0), a1 = T(0), a2 = T(0), a3 = T(0);
            T a4 = T(0), a5 = T(0), a6 = T(0), a7 = T(0);
            int k = 0;
            for (; k + 8 <= K; k += 8) {
                a0 += arow[k] * brow[k];
                a1 += arow[k + 1] * brow[k + 1];
                a2 += arow[k + 2] * brow[k + 2];
                a3 += arow[k + 3] * brow[k + 3];
                a4 += arow[k + 4] * brow[k + 4];
                a5 += arow[k + 5] * brow[k + 5];
                a6 += arow[k + 6] * brow[k + 6];
                a7 += arow[k + 7] * brow[k + 7];
            }
            T acc = ((a0 + a1) + (a2 + a3)) + ((a4 + a5) + (a6 + a7));
            for (; k < K; ++k) acc += arow[k] * brow[k];
            C[static_cast<std::size_t>(i) * N + j] += acc;
        }
    }
}

// C[M,N] += A[K,M]^T @ B[K,N]
template <typename T>
void gemm_tn(int M, int N, int K, const T* A, const T* B, T* C) {
    for (int k = 0; k < K; ++k) {
        const T* arow = A + static_cast<std::size_t>(k) * M;
        const T* brow = B + static_cast<std::size_t>(k) * N;
        for (int i = 0; i < M; ++i) {
            const T a = arow[i];
            if (a == T(0)) continue;
            T* crow = C + static_cast<std::size_t>(i) * N;
            for (int j = 0; j < N; ++j) crow[j] += a * brow[j];
        }
    }
}

// ---------------------------------------------------------------------------
// im2col / col2im for one image. col has CKK = C*K*K rows and Hout*Wout
// columns; row (c*K+ki)*K+kj holds tap (ki,kj) of channel c. Zero padding.
// ---------------------------------------------------------------------------

inline int conv_out_dim(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

template <typename T>
void im2col(const T* x, int C, int H, int W, int K, int stride, int pad,
            int Hout, int Wout, T* col) {
    const std::size_t hw_out = static_cast<std::size_t>(Hout) * Wout;
    for (int c = 0; c < C; ++c)
        for (int ki = 0; ki < K; ++ki)
            for (int kj = 0; kj < K; ++kj) {
                T* row = col + (static_cast<std::size_t>(c) * K * K + ki * K + kj) * hw_out;
                const T* plane = x + static_cast<std::size_t>(c) * H * W;
                for (int ho = 0; ho < Hout; ++ho) {
                    const int hi = ho * stride - pad + ki;
                    if (hi < 0 || hi >= H) {
                        std::fill(row + static_cast<std::size_t>(ho) * Wout,
                                  row + static_cast<std::size_t>(ho + 1) * Wout, T(0));
                        continue;
                    }
                    for (int wo = 0; wo < Wout; ++wo) {
                        const int wi = wo * stride - pad + kj;
                        row[static_cast<std::size_t>(ho) * Wout + wo] =
                            (wi >= 0 && wi < W) ? plane[static_cast<std::size_t>(hi) * W + wi] : T(0);
                    }
                }
            }
}

template <typename T>
void col2im_acc(const T* col, int C, int H, int W, int K, int stride, int pad,
                int Hout, int Wout, T* dx) {
    const std::size_t hw_out = static_cast<std::size_t>(Hout) * Wout;
    for (int c = 0; c < C; ++c)
        for (int ki = 0; ki < K; ++ki)
            for (int kj = 0; kj < K; ++kj) {
                const T* row = col + (static_cast<std::size_t>(c) * K * K + ki * K + kj) * hw_out;
                T* plane = dx + static_cast<std::size_t>(c) * H * W;
                for (int ho = 0; ho < Hout; ++ho) {
                    const int hi = ho * stride - pad + ki;
                    if (hi < 0 || hi >= H) continue;
                    for (int wo = 0; wo < Wout; ++wo) {
                        const int wi = wo * stride - pad + kj;
                        if (wi >= 0 && wi < W)
                            plane[static_cast<std::size_t>(hi) * W + wi] +=
                                row[static_cast<std::size_t>(ho) * Wout + wo];
                    }
                }
            }
}

// ---------------------------------------------------------------------------
// conv2d: im2col + GEMM. weight (Cout,Cin,K,K), optional bias (1,Cout,1,1).
// Backward recomputes the col buffer instead of storing one per layer.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 int stride, int pad) {
    detail::check_finite(x, "conv2d");
    detail::check_finite(w, "conv2d");
    const Shape sx = x.shape();
    const Shape sw = w.shape();
    require(sw.c == sx.c, "conv2d: weight expects " + std::to_string(sw.c) +
                              " input channels, got " + std::to_string(sx.c));
    require(sw.h == sw.w, "conv2d: only square kernels");
    const int K = sw.h;
    const int Hout = conv_out_dim(sx.h, K, stride, pad);
    const int Wout = conv_out_dim(sx.w, K, stride, pad);
    require(Hout >= 1 && Wout >= 1, "conv2d: output would be empty for input " + sx.str());
    const bool has_b = b.defined();
    if (has_b)
        require(b.shape() == Shape{1, sw.n, 1, 1}, "conv2d: bias must be (1,Cout,1,1)");

    const int Cout = sw.n;
    const int CKK = sx.c * K * K;
    const std::size_t hw_out = static_cast<std::size_t>(Hout) * Wout;
    Tensor<T> out(Shape{sx.n, Cout, Hout, Wout});
    std::vector<T> col(static_cast<std::size_t>(CKK) * hw_out);
    for (int n = 0; n < sx.n; ++n) {
        im2col(x.data() + static_cast<std::size_t>(n) * sx.c * sx.h * sx.w,
               sx.c, sx.h, sx.w, K, stride, pad, Hout, Wout, col.data());
        T* y = out.data() + static_cast<std::size_t>(n) * Cout * hw_out;
        if (has_b) {
            for (int co = 0; co < Cout; ++co)
                std::fill(y + co * hw_out, y + (co + 1) * hw_out, b.data()[co]);
        }
        gemm_nn(Cout, static_cast<int>(hw_out), CKK, w.data(), col.data(), y);
    }

    auto bw = [xi = x.impl(), wi = w.impl(), bi = has_b ? b.impl() : nullptr,
               sx, sw, K, stride, pad, Hout, Wout, Cout, CKK, hw_out](detail::TensorImpl<T>& o) {
        std::vector<T> col(static_cast<std::size_t>(CKK) * hw_out);
        std::vector<T> dcol;
        if (xi->requires_grad) {
            xi->ensure_grad();
            dcol.assign(col.size(), T(0));
        }
        if (wi->requires_grad) wi->ensure_grad();
        if (bi && bi->requires_grad) bi->ensure_grad();
        for (int n = 0; n < sx.n; ++n) {
            const T* dy = o.grad.data() + static_cast<std::size_t>(n) * Cout * hw_out;
            if (bi && bi->requires_grad) {
                for (int co = 0; co < Cout; ++co) {
                    T acc = T(0);
                    for (std::size_t i = 0; i < hw_out; ++i) acc += dy[co * hw_out + i];
                    bi->grad[co] += acc;
                }
            }
            if (wi->requires_grad) {
                im2col(xi->data.data() + static_cast<std::size_t>(n) * sx.c * sx.h * sx.w,
                       sx.c, sx.h, sx.w, K, stride, pad, Hout, Wout, col.data());
                gemm_nt(Cout, CKK, static_cast<int>(hw_out), dy, col.data(), wi->grad.data());
            }
            if (xi->requires_grad) {
                std::fill(dcol.begin(), dcol.end(), T(0));
                gemm_tn(CKK, static_cast<int>(hw_out), Cout, wi->data.data(), dy, dcol.data());
                col2im_acc(dcol.data(), sx.c, sx.h, sx.w, K, stride, pad, Hout, Wout,
                           xi->grad.data() + static_cast<std::size_t>(n) * sx.c * sx.h * sx.w);
            }
        }
    };
    if (has_b)
        detail::record(out, {x, w, b}, bw);
    else
        detail::record(out, {x, w}, bw);
    return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int stride, int pad) {
    return conv2d(x, w, Tensor<T>(), stride, pad);
}

// ---------------------------------------------------------------------------
// bilinear sampling on one channel plane with zero padding outside. A sample
// point more than one pixel outside the border reads exact zero; within the
// last fringe the in-bounds corners contribute their bilinear share, which
// makes the sampler agree with zero-padded direct convolution at integer
// positions.
// ---------------------------------------------------------------------------

template <typename T>
T bilinear_sample(const T* plane, int H, int W, T y, T x) {
    if (y <= T(-1) || y >= T(H) || x <= T(-1) || x >= T(W)) return T(0);
    const int h0 = static_cast<int>(std::floor(y));
    const int w0 = static_cast<int>(std::floor(x));
    const int h1 = h0 + 1;
    const int w1 = w0 + 1;
    const T ly = y - static_cast<T>(h0);
    const T lx = x - static_cast<T>(w0);
    const T hy = T(1) - ly;
    const T hx = T(1) - lx;
    const T v00 = (h0 >= 0 && w0 >= 0) ? plane[static_cast<std::size_t>(h0) * W + w0] : T(0);
    const T v01 = (h0 >= 0 && w1 < W) ? plane[static_cast<std::size_t>(h0) * W + w1] : T(0);
    const T v10 = (h1 < H && w0 >= 0) ? plane[static_cast<std::size_t>(h1) * W + w0] : T(0);
    const T v11 = (h1 < H && w1 < W) ? plane[static_cast<std::size_t>(h1) * W + w1] : T(0);
    return hy * hx * v00 + hy * lx * v01 + ly * hx * v10 + ly * lx * v11;
}

namespace detail {

// scatter g into the four corners around (y,x)
template <typename T>
void bilinear_scatter(T* plane, int H, int W, T y, T x, T g) {
    if (y <= T(-1) || y >= T(H) || x <= T(-1) || x >= T(W)) return;
    const int h0 = static_cast<int>(std::floor(y));
    const int w0 = static_cast<int>(std::floor(x));
    const int h1 = h0 + 1;
    const int w1 = w0 + 1;
    const T ly = y - static_cast<T>(h0);
    const T lx = x - static_cast<T>(w0);
    const T hy = T(1) - ly;
    const T hx = T(1) - lx;
    if (h0 >= 0 && w0 >= 0) plane[static_cast<std::size_t>(h0) * W + w0] += hy * hx * g;
    if (h0 >= 0 && w1 < W) plane[static_cast<std::size_t>(h0) * W + w1] += hy * lx * g;
    if (h1 < H && w0 >= 0) plane[static_cast<std::size_t>(h1) * W + w0] += ly * hx * g;
    if (h1 < H && w1 < W) plane[static_cast<std::size_t>(h1) * W + w1] += ly * lx * g;
}

// d(sample)/dy and d(sample)/dx at (y,x)
template <typename T>
void bilinear_coord_grad(const T* plane, int H, int W, T y, T x, T& dy, T& dx) {
    dy = T(0);
    dx = T(0);
    if (y <= T(-1) || y >= T(H) || x <= T(-1) || x >= T(W)) return;
    const int h0 = static_cast<int>(std::floor(y));
    const int w0 = static_cast<int>(std::floor(x));
    const int h1 = h0 + 1;
    const int w1 = w0 + 1;
    const T ly = y - static_cast<T>(h0);
    const T lx = x - static_cast<T>(w0);
    const T hy = T(1) - ly;
    const T hx = T(1) - lx;
    const T v00 = (h0 >= 0 && w0 >= 0) ? plane[static_cast<std::size_t>(h0) * W + w0] : T(0);
    const T v01 = (h0 >= 0 && w1 < W) ? plane[static_cast<std::size_t>(h0) * W + w1] : T(0);
    const T v10 = (h1 < H && w0 >= 0) ? plane[static_cast<std::size_t>(h1) * W + w0] : T(0);
    const T v11 = (h1 < H && w1 < W) ? plane[static_cast<std::size_t>(h1) * W + w1] : T(0);
    dy = -hx * v00 - lx * v01 + hx * v10 + lx * v11;
    dx = -hy * v00 + hy * v01 - ly * v10 + ly * v11;
}

// Bilinear geometry of every (tap, sample point) pair for one image. The
// sampling location depends only on the tap and position, not the channel, so
// corner indices and fractions are computed once and reused across channels.
// Corner index -1 means that corner is outside the plane (contributes zero);
// valid 0 means the whole sample point is outside the padded border.
template <typename T>
struct DeformGeometry {
    std::vector<std::uint8_t> valid;
    std::vector<int> i00, i01, i10, i11;
    std::vector<T> ly, lx;

    void build(const T* off, int H, int W, int K, int stride, int pad, int Hout,
               int Wout) {
        const std::size_t hw_out = static_cast<std::size_t>(Hout) * Wout;
        const std::size_t total = static_cast<std::size_t>(K) * K * hw_out;
        valid.resize(total);
        i00.resize(total);
        i01.resize(total);
        i10.resize(total);
        i11.resize(total);
        ly.resize(total);
        lx.resize(total);
        for (int ki = 0; ki < K; ++ki)
            for (int kj = 0; kj < K; ++kj) {
                const int k = ki * K + kj;
                const T* oy = off + static_cast<std::size_t>(2 * k) * hw_out;
                const T* ox = off + static_cast<std::size_t>(2 * k + 1) * hw_out;
                std::size_t e = static_cast<std::size_t>(k) * hw_out;
                for (int ho = 0; ho < Hout; ++ho)
                    for (int wo = 0; wo < Wout; ++wo, ++e) {
                        const std::size_t p = static_cast<std::size_t>(ho) * Wout + wo;
                        const T y = static_cast<T>(ho * stride - pad + ki) + oy[p];
                        const T x = static_cast<T>(wo * stride - pad + kj) + ox[p];
                        if (y <= T(-1) || y >= T(H) || x <= T(-1) || x >= T(W)) {
                            valid[e] = 0;
                            continue;
                        }
                        valid[e] = 1;
                        const int h0 = static_cast<int>(std::floor(y));
                        const int w0 = static_cast<int>(std::floor(x));
                        const int h1 = h0 + 1;
                        const int w1 = w0 + 1;
                        ly[e] = y - static_cast<T>(h0);
                        lx[e] = x - static_cast<T>(w0);
                        i00[e] = (h0 >= 0 && w0 >= 0) ? h0 * W + w0 : -1;
                        i01[e] = (h0 >= 0 && w1 < W) ? h0 * W + w1 : -1;
                        i10[e] = (h1 < H && w0 >= 0) ? h1 * W + w0 : -1;
                        i11[e] = (h1 < H && w1 < W) ? h1 * W + w1 : -1;
                    }
            }
    }
};

// deformable im2col for one image via prebuilt geometry; offsets laid out as
// (2*K*K, Hout, Wout) with channel 2k = dy and 2k+1 = dx of tap k
template <typename T>
void deform_im2col(const T* x, const DeformGeometry<T>& geo, int C, int H, int W,
                   int KK, std::size_t hw_out, T* col) {
    const std::size_t per_chan = static_cast<std::size_t>(KK) * hw_out;
    for (int c = 0; c < C; ++c) {
        const T* plane = x + static_cast<std::size_t>(c) * H * W;
        T* crow = col + static_cast<std::size_t>(c) * per_chan;
        for (std::size_t e = 0; e < per_chan; ++e) {
            if (!geo.valid[e]) {
                crow[e] = T(0);
                continue;
            }
            const T lye = geo.ly[e], lxe = geo.lx[e];
            const T hy = T(1) - lye, hx = T(1) - lxe;
            const T v00 = geo.i00[e] >= 0 ? plane[geo.i00[e]] : T(0);
            const T v01 = geo.i01[e] >= 0 ? plane[geo.i01[e]] : T(0);
            const T v10 = geo.i10[e] >= 0 ? plane[geo.i10[e]] : T(0);
            const T v11 = geo.i11[e] >= 0 ? plane[geo.i11[e]] : T(0);
            crow[e] = hy * hx * v00 + hy * lxe * v01 + lye * hx * v10 + lye * lxe * v11;
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// deformable conv2d: each kernel tap reads at its nominal grid position plus
// a learned fractional offset, via bilinear sampling. With all offsets zero it
// reproduces conv2d exactly. offsets: (N, 2*K*K, Hout, Wout).
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> deform_conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                        const Tensor<T>& offsets, int stride, int pad) {
    detail::check_finite(x, "deform_conv2d");
    detail::check_finite(w, "deform_conv2d");
    detail::check_finite(offsets, "deform_conv2d");
    const Shape sx = x.shape();
    const Shape sw = w.shape();
    require(sw.c == sx.c, "deform_conv2d: weight/input channel mismatch");
    require(sw.h == sw.w, "deform_conv2d: only square kernels");
    const int K = sw.h;
    const int Hout = conv_out_dim(sx.h, K, stride, pad);
    const int Wout = conv_out_dim(sx.w, K, stride, pad);
    require(Hout >= 1 && Wout >= 1, "deform_conv2d: output would be empty");
    require(offsets.shape() == Shape{sx.n, 2 * K * K, Hout, Wout},
            "deform_conv2d: offsets must be (N," + std::to_string(2 * K * K) + "," +
                std::to_string(Hout) + "," + std::to_string(Wout) + "), got " +
                offsets.shape().str());
    const bool has_b = b.defined();
    if (has_b)
        require(b.shape() == Shape{1, sw.n, 1, 1}, "deform_conv2d: bias must be (1,Cout,1,1)");

    const int Cout = sw.n;
    const int CKK = sx.c * K * K;
    const std::size_t hw_out = static_cast<std::size_t>(Hout) * Wout;
    const std::size_t off_stride = static_cast<std::size_t>(2 * K * K) * hw_out;
    Tensor<T> out(Shape{sx.n, Cout, Hout, Wout});
    std::vector<T> col(static_cast<std::size_t>(CKK) * hw_out);
    detail::DeformGeometry<T> geo;
    for (int n = 0; n < sx.n; ++n) {
        geo.build(offsets.data() + static_cast<std::size_t>(n) * off_stride, sx.h, sx.w, K,
                  stride, pad, Hout, Wout);
        detail::deform_im2col(x.data() + static_cast<std::size_t>(n) * sx.c * sx.h * sx.w,
                              geo, sx.c, sx.h, sx.w, K * K, hw_out, col.data());
        T* y = out.data() + static_cast<std::size_t>(n) * Cout * hw_out;
        if (has_b) {
            for (int co = 0; co < Cout; ++co)
                std::fill(y + co * hw_out, y + (co + 1) * hw_out, b.data()[co]);
        }
        gemm_nn(Cout, static_cast<int>(hw_out), CKK, w.data(), col.data(), y);
    }

    auto bw = [xi = x.impl(), wi = w.impl(), bi = has_b ? b.impl() : nullptr,
               oi = offsets.impl(), sx, sw, K, stride, pad, Hout, Wout, Cout, CKK,
               hw_out, off_stride](detail::TensorImpl<T>& o) {
        std::vector<T> col(static_cast<std::size_t>(CKK) * hw_out);
        std::vector<T> dcol(col.size());
        detail::DeformGeometry<T> geo;
        if (xi->requires_grad) xi->ensure_grad();
        if (wi->requires_grad) wi->ensure_grad();
        if (bi && bi->requires_grad) bi->ensure_grad();
        if (oi->requires_grad) oi->ensure_grad();
        const std::size_t per_chan = static_cast<std::size_t>(K) * K * hw_out;
        for (int n = 0; n < sx.n; ++n) {
            const T* xim = xi->data.data() + static_cast<std::size_t>(n) * sx.c * sx.h * sx.w;
            const T* off = oi->data.data() + static_cast<std::size_t>(n) * off_stride;
            const T* dy = o.grad.data() + static_cast<std::size_t>(n) * Cout * hw_out;
            if (bi && bi->requires_grad) {
                for (int co = 0; co < Cout; ++co) {
                    T acc = T(0);
                    for (std::size_t i = 0; i < hw_out; ++i) acc += dy[co * hw_out + i];
                    bi->grad[co] += acc;
                }
            }
            geo.build(off, sx.h, sx.w, K, stride, pad, Hout, Wout);
            if (wi->requires_grad) {
                detail::deform_im2col(xim, geo, sx.c, sx.h, sx.w, K * K, hw_out, col.data());
                gemm_nt(Cout, CKK, static_cast<int>(hw_out), dy, col.data(), wi->grad.data());
            }
            const bool need_x = xi->requires_grad;
            const bool need_off = oi->requires_grad;
            if (!need_x && !need_off) continue;
            std::fill(dcol.begin(), dcol.end(), T(0));
            gemm_tn(CKK, static_cast<int>(hw_out), Cout, wi->data.data(), dy, dcol.data());
            T* gx = need_x ? xi->grad.data() + static_cast<std::size_t>(n) * sx.c * sx.h * sx.w
                           : nullptr;
            T* goff = need_off ? oi->grad.data() + static_cast<std::size_t>(n) * off_stride
                               : nullptr;
            for (int c = 0; c < sx.c; ++c) {
                const T* plane = xim + static_cast<std::size_t>(c) * sx.h * sx.w;
                T* gplane = need_x ? gx + static_cast<std::size_t>(c) * sx.h * sx.w : nullptr;
                const T* drow = dcol.data() + static_cast<std::size_t>(c) * per_chan;
                for (std::size_t e = 0; e < per_chan; ++e) {
                    const T g = drow[e];
                    if (g == T(0) || !geo.valid[e]) continue;
                    const T lye = geo.ly[e], lxe = geo.lx[e];
                    const T hy = T(1) - lye, hx = T(1) - lxe;
                    if (need_x) {
                        if (geo.i00[e] >= 0) gplane[geo.i00[e]] += hy * hx * g;
                        if (geo.i01[e] >= 0) gplane[geo.i01[e]] += hy * lxe * g;
                        if (geo.i10[e] >= 0) gplane[geo.i10[e]] += lye * hx * g;
                        if (geo.i11[e] >= 0) gplane[geo.i11[e]] += lye * lxe * g;
                    }
                    if (need_off) {
                        const T v00 = geo.i00[e] >= 0 ? plane[geo.i00[e]] : T(0);
                        const T v01 = geo.i01[e] >= 0 ? plane[geo.i01[e]] : T(0);
                        const T v10 = geo.i10[e] >= 0 ? plane[geo.i10[e]] : T(0);
                        const T v11 = geo.i11[e] >= 0 ? plane[geo.i11[e]] : T(0);
                        const T gy = -hx * v00 - lxe * v01 + hx * v10 + lxe * v11;
                        const T gxx = -hy * v00 + hy * v01 - lye * v10 + lye * v11;
                        const std::size_t k = e / hw_out, p = e - k * hw_out;
                        goff[2 * k * hw_out + p] += g * gy;
                        goff[(2 * k + 1) * hw_out + p] += g * gxx;
                    }
                }
            }
        }
    };
    if (has_b)
        detail::record(out, {x, w, b, offsets}, bw);
    else
        detail::record(out, {x, w, offsets}, bw);
    return out;
}

// ---------------------------------------------------------------------------
// 1-D conv across the channel axis of a (N,C,1,1) tensor, zero padded so the
// length is preserved. weight (1,1,1,k), no bias. Used by channel attention.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv1d_channels(const Tensor<T>& x, const Tensor<T>& w) {
    detail::check_finite(x, "conv1d_channels");
    detail::check_finite(w, "conv1d_channels");
    const Shape sx = x.shape();
    const Shape sw = w.shape();
    require(sx.h == 1 && sx.w == 1, "conv1d_channels: input must be (N,C,1,1)");
    require(sw.n == 1 && sw.c == 1 && sw.h == 1, "conv1d_channels: weight must be (1,1,1,k)");
    const int k = sw.w;
    require(k % 2 == 1, "conv1d_channels: kernel must be odd");
    const int pad = (k - 1) / 2;
    Tensor<T> out(sx);
    const T* px = x.data();
    const T* pw = w.data();
    T* po = out.data();
    for (int n = 0; n < sx.n; ++n)
        for (int c = 0; c < sx.c; ++c) {
            T acc = T(0);
            for (int j = 0; j < k; ++j) {
                const int ci = c + j - pad;
                if (ci >= 0 && ci < sx.c) acc += pw[j] * px[n * sx.c + ci];
            }
            po[n * sx.c + c] = acc;
        }
    detail::record(out, {x, w}, [xi = x.impl(), wi = w.impl(), sx, k, pad](detail::TensorImpl<T>& o) {
        const T* g = o.grad.data();
        const T* px = xi->data.data();
        const T* pw = wi->data.data();
        if (xi->requires_grad) xi->ensure_grad();
        if (wi->requires_grad) wi->ensure_grad();
        for (int n = 0; n < sx.n; ++n)
            for (int c = 0; c < sx.c; ++c) {
                const T gv = g[n * sx.c + c];
                for (int j = 0; j < k; ++j) {
                    const int ci = c + j - pad;
                    if (ci < 0 || ci >= sx.c) continue;
                    if (xi->requires_grad) xi->grad[n * sx.c + ci] += gv * pw[j];
                    if (wi->requires_grad) wi->grad[j] += gv * px[n * sx.c + ci];
                }
            }
    });
    return out;
}

}  // namespace brd
