#pragma once

#include <cstdint>
#include <vector>

namespace advsyn::detail {

// C(M,N) += A(M,K) * B(K,N), all row-major. The i-k-j order keeps the inner
// loop a contiguous streaming multiply-add over B and C, which GCC/Clang
// vectorize without any reassociation of the k-sum, so results are
// bit-identical to the textbook triple loop.
inline void matmul_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* ai = a + static_cast<int64_t>(i) * k;
        double* ci = c + static_cast<int64_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + static_cast<int64_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// dst(N,M) = src(M,N)^T
inline void transpose_copy(const double* src, double* dst, int m, int n) {
    for (int i = 0; i < m; ++i) {
        const double* s = src + static_cast<int64_t>(i) * n;
        for (int j = 0; j < n; ++j) dst[static_cast<int64_t>(j) * m + i] = s[j];
    }
}

struct ConvGeom {
    int c_in, h, w;       // input feature map
    int kh, kw;           // kernel
    int stride, pad;
    int out_h, out_w;     // derived

    int64_t rows() const { return static_cast<int64_t>(c_in) * kh * kw; }
    int64_t cols() const { return static_cast<int64_t>(out_h) * out_w; }
};

// patches(rows, cols): column (oh,ow) holds the receptive field of that
// output position; out-of-bounds (padding) samples are zero.
inline void im2col(const double* x, const ConvGeom& g, double* patches) {
    const int64_t cols = g.cols();
    for (int c = 0; c < g.c_in; ++c) {
        const double* xc = x + static_cast<int64_t>(c) * g.h * g.w;
        for (int dh = 0; dh < g.kh; ++dh) {
            for (int dw = 0; dw < g.kw; ++dw) {
                double* row = patches + ((static_cast<int64_t>(c) * g.kh + dh) * g.kw + dw) * cols;
                for (int oh = 0; oh < g.out_h; ++oh) {
                    const int ih = oh * g.stride - g.pad + dh;
                    double* r = row + static_cast<int64_t>(oh) * g.out_w;
                    if (ih < 0 || ih >= g.h) {
                        for (int ow = 0; ow < g.out_w; ++ow) r[ow] = 0.0;
                        continue;
                    }
                    const double* xr = xc + static_cast<int64_t>(ih) * g.w;
                    for (int ow = 0; ow < g.out_w; ++ow) {
                        const int iw = ow * g.stride - g.pad + dw;
                        r[ow] = (iw >= 0 && iw < g.w) ? xr[iw] : 0.0;
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatter-adds patch columns back into the feature map.
inline void col2im_acc(const double* patches, const ConvGeom& g, double* x) {
    const int64_t cols = g.cols();
    for (int c = 0; c < g.c_in; ++c) {
        double* xc = x + static_cast<int64_t>(c) * g.h * g.w;
        for (int dh = 0; dh < g.kh; ++dh) {
            for (int dw = 0; dw < g.kw; ++dw) {
                const double* row = patches + ((static_cast<int64_t>(c) * g.kh + dh) * g.kw + dw) * cols;
                for (int oh = 0; oh < g.out_h; ++oh) {
                    const int ih = oh * g.stride - g.pad + dh;
                    if (ih < 0 || ih >= g.h) continue;
                    const double* r = row + static_cast<int64_t>(oh) * g.out_w;
                    double* xr = xc + static_cast<int64_t>(ih) * g.w;
                    for (int ow = 0; ow < g.out_w; ++ow) {
                        const int iw = ow * g.stride - g.pad + dw;
                        if (iw >= 0 && iw < g.w) xr[iw] += r[ow];
                    }
                }
            }
        }
    }
}

}  // namespace advsyn::detail
