#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "advsyn/errors.hpp"
#include "advsyn/linalg.hpp"
#include "advsyn/rng.hpp"
#include "advsyn/tape.hpp"
#include "advsyn/tensor.hpp"

namespace advsyn {

enum class Mode { train, infer };

enum class ActKind { relu, leaky_relu, tanh, sigmoid };

namespace detail {

inline void require_rank(const Tensor& t, int rank, const char* op, const char* role) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(op) + ": " + role + " must have rank " + std::to_string(rank) +
                         ", got " + t.shape_string());
    }
}

}  // namespace detail

// --- conv2d ----------------------------------------------------------------
//
// Cross-correlation (no kernel flip), the deep-learning convention.
// input [N,C_in,H,W], kernel [C_out,C_in,kh,kw], bias [C_out].
// H' = floor((H + 2*pad - kh)/stride) + 1, analogously W'.
// Forward and backward run through im2col + matmul; the naive nested-loop
// reference these must match lives with the tests.
inline Tape::Id conv2d(Tape& t, Tape::Id x_id, Tape::Id w_id, Tape::Id b_id, int stride,
                       int padding) {
    const Tensor& x = t.value(x_id);
    const Tensor& w = t.value(w_id);
    const Tensor& b = t.value(b_id);
    detail::require_rank(x, 4, "conv2d", "input");
    detail::require_rank(w, 4, "conv2d", "kernel");
    detail::require_rank(b, 1, "conv2d", "bias");
    if (stride < 1) throw ShapeError("conv2d: stride must be >= 1, got " + std::to_string(stride));
    if (padding < 0) throw ShapeError("conv2d: padding must be >= 0, got " + std::to_string(padding));
    const int n = x.dim(0), c_in = x.dim(1), h = x.dim(2), w_in = x.dim(3);
    const int c_out = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != c_in) {
        throw ShapeError("conv2d: kernel input-channel dim is " + std::to_string(w.dim(1)) +
                         " but input has " + std::to_string(c_in) + " channels");
    }
    if (b.dim(0) != c_out) {
        throw ShapeError("conv2d: bias dim is " + std::to_string(b.dim(0)) + " but kernel has " +
                         std::to_string(c_out) + " output channels");
    }
    if (h + 2 * padding < kh || w_in + 2 * padding < kw) {
        throw ShapeError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                         " exceeds padded input " + std::to_string(h + 2 * padding) + "x" +
                         std::to_string(w_in + 2 * padding));
    }

    detail::ConvGeom g{c_in, h, w_in, kh, kw, stride, padding, 0, 0};
    g.out_h = (h + 2 * padding - kh) / stride + 1;
    g.out_w = (w_in + 2 * padding - kw) / stride + 1;
    const int rows = static_cast<int>(g.rows());  // C_in*kh*kw
    const int cols = static_cast<int>(g.cols());  // H'*W'

    Tensor y({n, c_out, g.out_h, g.out_w});
    {
        std::vector<double> patches(static_cast<size_t>(rows) * cols);
        for (int i = 0; i < n; ++i) {
            const double* xi = x.data() + static_cast<int64_t>(i) * c_in * h * w_in;
            double* yi = y.data() + static_cast<int64_t>(i) * c_out * cols;
            detail::im2col(xi, g, patches.data());
            for (int co = 0; co < c_out; ++co) {
                std::fill(yi + static_cast<int64_t>(co) * cols, yi + static_cast<int64_t>(co + 1) * cols,
                          b[co]);
            }
            detail::matmul_acc(w.data(), patches.data(), yi, c_out, rows, cols);
        }
    }

    auto backward = [x_id, w_id, b_id, g, rows, cols, n, c_in, h, w_in, c_out](Tape& tp,
                                                                               Tape::Id out) {
        const Tensor& x_v = tp.value(x_id);
        const Tensor& w_v = tp.value(w_id);
        const Tensor& dy = tp.grad(out);
        const bool need_x = tp.requires_grad(x_id);
        const bool need_w = tp.requires_grad(w_id);
        const bool need_b = tp.requires_grad(b_id);

        if (need_b) {
            Tensor db({c_out});
            for (int i = 0; i < n; ++i) {
                const double* dyi = dy.data() + static_cast<int64_t>(i) * c_out * cols;
                for (int co = 0; co < c_out; ++co) {
                    double s = 0.0;
                    const double* row = dyi + static_cast<int64_t>(co) * cols;
                    for (int j = 0; j < cols; ++j) s += row[j];
                    db[co] += s;
                }
            }
            tp.add_grad(b_id, db);
        }

        if (!need_x && !need_w) return;
        std::vector<double> patches(static_cast<size_t>(rows) * cols);
        std::vector<double> patches_t;   // cols x rows, for dW
        std::vector<double> w_t;         // rows x c_out, for dX
        std::vector<double> dpatches;    // rows x cols, for dX
        Tensor dw, dx;
        if (need_w) {
            patches_t.resize(static_cast<size_t>(rows) * cols);
            dw = Tensor::zeros(w_v.shape());
        }
        if (need_x) {
            w_t.resize(static_cast<size_t>(rows) * c_out);
            detail::transpose_copy(w_v.data(), w_t.data(), c_out, rows);
            dpatches.resize(static_cast<size_t>(rows) * cols);
            dx = Tensor::zeros(x_v.shape());
        }
        for (int i = 0; i < n; ++i) {
            const double* dyi = dy.data() + static_cast<int64_t>(i) * c_out * cols;
            if (need_w) {
                const double* xi = x_v.data() + static_cast<int64_t>(i) * c_in * h * w_in;
                detail::im2col(xi, g, patches.data());
                detail::transpose_copy(patches.data(), patches_t.data(), rows, cols);
                detail::matmul_acc(dyi, patches_t.data(), dw.data(), c_out, cols, rows);
            }
            if (need_x) {
                std::fill(dpatches.begin(), dpatches.end(), 0.0);
                detail::matmul_acc(w_t.data(), dyi, dpatches.data(), rows, c_out, cols);
                double* dxi = dx.data() + static_cast<int64_t>(i) * c_in * h * w_in;
                detail::col2im_acc(dpatches.data(), g, dxi);
            }
        }
        if (need_w) tp.add_grad(w_id, dw);
        if (need_x) tp.add_grad(x_id, dx);
    };
    return t.push(std::move(y), {x_id, w_id, b_id}, backward);
}

// --- conv2d_transpose ------------------------------------------------------
//
// Adjoint of conv2d (scatter-add upsampling).
// input [N,C_in,H,W], kernel [C_in,C_out,kh,kw], bias [C_out].
// H' = (H-1)*stride - 2*pad + kh, analogously W'.
inline Tape::Id conv2d_transpose(Tape& t, Tape::Id x_id, Tape::Id w_id, Tape::Id b_id, int stride,
                                 int padding) {
    const Tensor& x = t.value(x_id);
    const Tensor& w = t.value(w_id);
    const Tensor& b = t.value(b_id);
    detail::require_rank(x, 4, "conv2d_transpose", "input");
    detail::require_rank(w, 4, "conv2d_transpose", "kernel");
    detail::require_rank(b, 1, "conv2d_transpose", "bias");
    if (stride < 1) {
        throw ShapeError("conv2d_transpose: stride must be >= 1, got " + std::to_string(stride));
    }
    if (padding < 0) {
        throw ShapeError("conv2d_transpose: padding must be >= 0, got " + std::to_string(padding));
    }
    const int n = x.dim(0), c_in = x.dim(1), h = x.dim(2), w_in = x.dim(3);
    const int c_out = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(0) != c_in) {
        throw ShapeError("conv2d_transpose: kernel input-channel dim is " + std::to_string(w.dim(0)) +
                         " but input has " + std::to_string(c_in) + " channels");
    }
    if (b.dim(0) != c_out) {
        throw ShapeError("conv2d_transpose: bias dim is " + std::to_string(b.dim(0)) +
                         " but kernel has " + std::to_string(c_out) + " output channels");
    }
    if (kh < stride || kw < stride) {
        throw ShapeError("conv2d_transpose: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                         " must cover stride " + std::to_string(stride));
    }
    const int out_h = (h - 1) * stride - 2 * padding + kh;
    const int out_w = (w_in - 1) * stride - 2 * padding + kw;
    if (out_h < 1 || out_w < 1) {
        throw ShapeError("conv2d_transpose: computed output size " + std::to_string(out_h) + "x" +
                         std::to_string(out_w) + " is not positive");
    }

    // The output plays the role of a conv2d input with this geometry; the
    // tconv input spatial size equals that conv's output size exactly.
    detail::ConvGeom g{c_out, out_h, out_w, kh, kw, stride, padding, h, w_in};
    const int rows = static_cast<int>(g.rows());  // C_out*kh*kw
    const int cols = static_cast<int>(g.cols());  // H*W

    Tensor y({n, c_out, out_h, out_w});
    {
        std::vector<double> w_t(static_cast<size_t>(rows) * c_in);  // (C_out*kh*kw) x C_in
        detail::transpose_copy(w.data(), w_t.data(), c_in, rows);
        std::vector<double> colbuf(static_cast<size_t>(rows) * cols);
        for (int i = 0; i < n; ++i) {
            const double* xi = x.data() + static_cast<int64_t>(i) * c_in * h * w_in;
            double* yi = y.data() + static_cast<int64_t>(i) * c_out * out_h * out_w;
            for (int co = 0; co < c_out; ++co) {
                std::fill(yi + static_cast<int64_t>(co) * out_h * out_w,
                          yi + static_cast<int64_t>(co + 1) * out_h * out_w, b[co]);
            }
            std::fill(colbuf.begin(), colbuf.end(), 0.0);
            detail::matmul_acc(w_t.data(), xi, colbuf.data(), rows, c_in, cols);
            detail::col2im_acc(colbuf.data(), g, yi);
        }
    }

    auto backward = [x_id, w_id, b_id, g, rows, cols, n, c_in, h, w_in, c_out, out_h,
                     out_w](Tape& tp, Tape::Id out) {
        const Tensor& x_v = tp.value(x_id);
        const Tensor& w_v = tp.value(w_id);
        const Tensor& dy = tp.grad(out);
        const bool need_x = tp.requires_grad(x_id);
        const bool need_w = tp.requires_grad(w_id);
        const bool need_b = tp.requires_grad(b_id);

        if (need_b) {
            Tensor db({c_out});
            const int64_t hw = static_cast<int64_t>(out_h) * out_w;
            for (int i = 0; i < n; ++i) {
                const double* dyi = dy.data() + static_cast<int64_t>(i) * c_out * hw;
                for (int co = 0; co < c_out; ++co) {
                    double s = 0.0;
                    const double* row = dyi + co * hw;
                    for (int64_t j = 0; j < hw; ++j) s += row[j];
                    db[co] += s;
                }
            }
            tp.add_grad(b_id, db);
        }

        if (!need_x && !need_w) return;
        std::vector<double> dcols(static_cast<size_t>(rows) * cols);
        std::vector<double> dcols_t;
        Tensor dw, dx;
        if (need_w) {
            dcols_t.resize(static_cast<size_t>(rows) * cols);
            dw = Tensor::zeros(w_v.shape());
        }
        if (need_x) dx = Tensor::zeros(x_v.shape());
        for (int i = 0; i < n; ++i) {
            const double* dyi = dy.data() + static_cast<int64_t>(i) * c_out * out_h * out_w;
            detail::im2col(dyi, g, dcols.data());
            if (need_x) {
                double* dxi = dx.data() + static_cast<int64_t>(i) * c_in * h * w_in;
                detail::matmul_acc(w_v.data(), dcols.data(), dxi, c_in, rows, cols);
            }
            if (need_w) {
                const double* xi = x_v.data() + static_cast<int64_t>(i) * c_in * h * w_in;
                detail::transpose_copy(dcols.data(), dcols_t.data(), rows, cols);
                detail::matmul_acc(xi, dcols_t.data(), dw.data(), c_in, cols, rows);
            }
        }
        if (need_w) tp.add_grad(w_id, dw);
        if (need_x) tp.add_grad(x_id, dx);
    };
    return t.push(std::move(y), {x_id, w_id, b_id}, backward);
}

// --- dense -----------------------------------------------------------------
//
// y[N,G] = x[N,F] @ w[F,G] + b[G]
inline Tape::Id dense(Tape& t, Tape::Id x_id, Tape::Id w_id, Tape::Id b_id) {
    const Tensor& x = t.value(x_id);
    const Tensor& w = t.value(w_id);
    const Tensor& b = t.value(b_id);
    detail::require_rank(x, 2, "dense", "input");
    detail::require_rank(w, 2, "dense", "weights");
    detail::require_rank(b, 1, "dense", "bias");
    const int n = x.dim(0), f = x.dim(1), g = w.dim(1);
    if (w.dim(0) != f) {
        throw ShapeError("dense: weights expect " + std::to_string(w.dim(0)) +
                         " input features, input has " + std::to_string(f));
    }
    if (b.dim(0) != g) {
        throw ShapeError("dense: bias dim " + std::to_string(b.dim(0)) + " != output dim " +
                         std::to_string(g));
    }

    Tensor y({n, g});
    for (int i = 0; i < n; ++i) {
        std::copy(b.data(), b.data() + g, y.data() + static_cast<int64_t>(i) * g);
    }
    detail::matmul_acc(x.data(), w.data(), y.data(), n, f, g);

    auto backward = [x_id, w_id, b_id, n, f, g](Tape& tp, Tape::Id out) {
        const Tensor& x_v = tp.value(x_id);
        const Tensor& w_v = tp.value(w_id);
        const Tensor& dy = tp.grad(out);
        if (tp.requires_grad(b_id)) {
            Tensor db({g});
            for (int i = 0; i < n; ++i) {
                const double* row = dy.data() + static_cast<int64_t>(i) * g;
                for (int j = 0; j < g; ++j) db[j] += row[j];
            }
            tp.add_grad(b_id, db);
        }
        if (tp.requires_grad(x_id)) {
            Tensor dx({n, f});
            std::vector<double> w_t(static_cast<size_t>(f) * g);
            detail::transpose_copy(w_v.data(), w_t.data(), f, g);
            detail::matmul_acc(dy.data(), w_t.data(), dx.data(), n, g, f);
            tp.add_grad(x_id, dx);
        }
        if (tp.requires_grad(w_id)) {
            Tensor dw({f, g});
            std::vector<double> x_t(static_cast<size_t>(n) * f);
            detail::transpose_copy(x_v.data(), x_t.data(), n, f);
            detail::matmul_acc(x_t.data(), dy.data(), dw.data(), f, n, g);
            tp.add_grad(w_id, dw);
        }
    };
    return t.push(std::move(y), {x_id, w_id, b_id}, backward);
}

// --- activations -----------------------------------------------------------
//
// Elementwise, total functions. Subgradient at the ReLU kink: 0 for relu,
// alpha for leaky_relu.
inline Tape::Id activation(Tape& t, Tape::Id x_id, ActKind kind, double alpha = 0.0) {
    if (kind == ActKind::leaky_relu && !(alpha > 0.0 && alpha < 1.0)) {
        throw ConfigError("activation: leaky_relu alpha must be in (0,1), got " +
                          std::to_string(alpha));
    }
    const Tensor& x = t.value(x_id);
    Tensor y(x.shape());
    const int64_t n = x.size();
    const double* xs = x.data();
    double* ys = y.data();
    switch (kind) {
        case ActKind::relu:
            for (int64_t i = 0; i < n; ++i) ys[i] = xs[i] > 0.0 ? xs[i] : 0.0;
            break;
        case ActKind::leaky_relu:
            for (int64_t i = 0; i < n; ++i) ys[i] = xs[i] > 0.0 ? xs[i] : alpha * xs[i];
            break;
        case ActKind::tanh:
            for (int64_t i = 0; i < n; ++i) ys[i] = std::tanh(xs[i]);
            break;
        case ActKind::sigmoid:
            for (int64_t i = 0; i < n; ++i) ys[i] = 1.0 / (1.0 + std::exp(-xs[i]));
            break;
    }

    auto backward = [x_id, kind, alpha, n](Tape& tp, Tape::Id out) {
        if (!tp.requires_grad(x_id)) return;
        const Tensor& dy = tp.grad(out);
        const Tensor& x_v = tp.value(x_id);
        const Tensor& y_v = tp.value(out);
        Tensor dx(x_v.shape());
        const double* dys = dy.data();
        const double* xs = x_v.data();
        const double* ys = y_v.data();
        double* dxs = dx.data();
        switch (kind) {
            case ActKind::relu:
                for (int64_t i = 0; i < n; ++i) dxs[i] = xs[i] > 0.0 ? dys[i] : 0.0;
                break;
            case ActKind::leaky_relu:
                for (int64_t i = 0; i < n; ++i) dxs[i] = xs[i] > 0.0 ? dys[i] : alpha * dys[i];
                break;
            case ActKind::tanh:
                for (int64_t i = 0; i < n; ++i) dxs[i] = dys[i] * (1.0 - ys[i] * ys[i]);
                break;
            case ActKind::sigmoid:
                for (int64_t i = 0; i < n; ++i) dxs[i] = dys[i] * ys[i] * (1.0 - ys[i]);
                break;
        }
        tp.add_grad(x_id, dx);
    };
    return t.push(std::move(y), {x_id}, backward);
}

inline Tape::Id relu(Tape& t, Tape::Id x) { return activation(t, x, ActKind::relu); }
inline Tape::Id leaky_relu(Tape& t, Tape::Id x, double alpha) {
    return activation(t, x, ActKind::leaky_relu, alpha);
}
inline Tape::Id tanh_op(Tape& t, Tape::Id x) { return activation(t, x, ActKind::tanh); }
inline Tape::Id sigmoid_op(Tape& t, Tape::Id x) { return activation(t, x, ActKind::sigmoid); }

// --- maxpool2d -------------------------------------------------------------
//
// Trailing rows/cols that do not fill a window are truncated. Gradient goes
// to the first maximal element in scan order.
inline Tape::Id maxpool2d(Tape& t, Tape::Id x_id, int window, int stride) {
    const Tensor& x = t.value(x_id);
    detail::require_rank(x, 4, "maxpool2d", "input");
    if (window < 1 || stride < 1) {
        throw ShapeError("maxpool2d: window and stride must be >= 1");
    }
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (window > h || window > w) {
        throw ShapeError("maxpool2d: window " + std::to_string(window) + " larger than input " +
                         std::to_string(h) + "x" + std::to_string(w));
    }
    const int out_h = (h - window) / stride + 1;
    const int out_w = (w - window) / stride + 1;

    Tensor y({n, c, out_h, out_w});
    auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(y.size()));
    int64_t oi = 0;
    for (int i = 0; i < n; ++i) {
        for (int ch = 0; ch < c; ++ch) {
            const double* plane = x.data() + (static_cast<int64_t>(i) * c + ch) * h * w;
            const int64_t plane_off = (static_cast<int64_t>(i) * c + ch) * h * w;
            for (int oh = 0; oh < out_h; ++oh) {
                for (int ow = 0; ow < out_w; ++ow, ++oi) {
                    const int h0 = oh * stride, w0 = ow * stride;
                    double best = plane[static_cast<int64_t>(h0) * w + w0];
                    int64_t best_at = static_cast<int64_t>(h0) * w + w0;
                    for (int dh = 0; dh < window; ++dh) {
                        for (int dw = 0; dw < window; ++dw) {
                            const int64_t idx = static_cast<int64_t>(h0 + dh) * w + (w0 + dw);
                            if (plane[idx] > best) {
                                best = plane[idx];
                                best_at = idx;
                            }
                        }
                    }
                    y[oi] = best;
                    (*argmax)[static_cast<size_t>(oi)] = plane_off + best_at;
                }
            }
        }
    }

    auto backward = [x_id, argmax](Tape& tp, Tape::Id out) {
        if (!tp.requires_grad(x_id)) return;
        const Tensor& dy = tp.grad(out);
        Tensor dx(tp.value(x_id).shape());
        for (int64_t i = 0; i < dy.size(); ++i) {
            dx[(*argmax)[static_cast<size_t>(i)]] += dy[i];
        }
        tp.add_grad(x_id, dx);
    };
    return t.push(std::move(y), {x_id}, backward);
}

// --- global_avg_pool -------------------------------------------------------
inline Tape::Id global_avg_pool(Tape& t, Tape::Id x_id) {
    const Tensor& x = t.value(x_id);
    detail::require_rank(x, 4, "global_avg_pool", "input");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int64_t hw = static_cast<int64_t>(h) * w;

    Tensor y({n, c});
    for (int i = 0; i < n; ++i) {
        for (int ch = 0; ch < c; ++ch) {
            const double* plane = x.data() + (static_cast<int64_t>(i) * c + ch) * hw;
            double s = 0.0;
            for (int64_t j = 0; j < hw; ++j) s += plane[j];
            y.at2(i, ch) = s / static_cast<double>(hw);
        }
    }

    auto backward = [x_id, n, c, hw](Tape& tp, Tape::Id out) {
        if (!tp.requires_grad(x_id)) return;
        const Tensor& dy = tp.grad(out);
        Tensor dx(tp.value(x_id).shape());
        for (int i = 0; i < n; ++i) {
            for (int ch = 0; ch < c; ++ch) {
                const double g = dy.at2(i, ch) / static_cast<double>(hw);
                double* plane = dx.data() + (static_cast<int64_t>(i) * c + ch) * hw;
                for (int64_t j = 0; j < hw; ++j) plane[j] = g;
            }
        }
        tp.add_grad(x_id, dx);
    };
    return t.push(std::move(y), {x_id}, backward);
}

// --- batchnorm -------------------------------------------------------------

struct BatchNormState {
    Tensor running_mean;  // [C], starts at 0
    Tensor running_var;   // [C], starts at 1

    static BatchNormState init(int channels) {
        return BatchNormState{Tensor::zeros({channels}), Tensor::full({channels}, 1.0)};
    }
};

// Per-channel normalization over N*H*W elements. Train mode uses batch
// statistics (population variance) and updates the running stats as
//   running = momentum * running + (1 - momentum) * batch.
// Infer mode normalizes by the running stats and leaves them untouched.
inline Tape::Id batchnorm(Tape& t, Tape::Id x_id, Tape::Id gamma_id, Tape::Id beta_id,
                          BatchNormState& state, Mode mode, double momentum = 0.9,
                          double epsilon = 1e-5) {
    const Tensor& x = t.value(x_id);
    const Tensor& gamma = t.value(gamma_id);
    const Tensor& beta = t.value(beta_id);
    detail::require_rank(x, 4, "batchnorm", "input");
    detail::require_rank(gamma, 1, "batchnorm", "gamma");
    detail::require_rank(beta, 1, "batchnorm", "beta");
    if (!(epsilon > 0.0)) throw ConfigError("batchnorm: epsilon must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) {
        throw ConfigError("batchnorm: momentum must be in [0,1)");
    }
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (gamma.dim(0) != c || beta.dim(0) != c || state.running_mean.dim(0) != c) {
        throw ShapeError("batchnorm: parameter dims must match " + std::to_string(c) + " channels");
    }
    const int64_t hw = static_cast<int64_t>(h) * w;
    const double m = static_cast<double>(n) * static_cast<double>(hw);

    auto mean_v = std::make_shared<std::vector<double>>(static_cast<size_t>(c));
    auto inv_std_v = std::make_shared<std::vector<double>>(static_cast<size_t>(c));
    if (mode == Mode::train) {
        for (int ch = 0; ch < c; ++ch) {
            double s = 0.0;
            for (int i = 0; i < n; ++i) {
                const double* plane = x.data() + (static_cast<int64_t>(i) * c + ch) * hw;
                for (int64_t j = 0; j < hw; ++j) s += plane[j];
            }
            const double mu = s / m;
            double sq = 0.0;
            for (int i = 0; i < n; ++i) {
                const double* plane = x.data() + (static_cast<int64_t>(i) * c + ch) * hw;
                for (int64_t j = 0; j < hw; ++j) {
                    const double d = plane[j] - mu;
                    sq += d * d;
                }
            }
            const double var = sq / m;
            (*mean_v)[static_cast<size_t>(ch)] = mu;
            (*inv_std_v)[static_cast<size_t>(ch)] = 1.0 / std::sqrt(var + epsilon);
            state.running_mean[ch] = momentum * state.running_mean[ch] + (1.0 - momentum) * mu;
            state.running_var[ch] = momentum * state.running_var[ch] + (1.0 - momentum) * var;
        }
    } else {
        for (int ch = 0; ch < c; ++ch) {
            (*mean_v)[static_cast<size_t>(ch)] = state.running_mean[ch];
            (*inv_std_v)[static_cast<size_t>(ch)] = 1.0 / std::sqrt(state.running_var[ch] + epsilon);
        }
    }

    Tensor y(x.shape());
    for (int i = 0; i < n; ++i) {
        for (int ch = 0; ch < c; ++ch) {
            const double mu = (*mean_v)[static_cast<size_t>(ch)];
            const double is = (*inv_std_v)[static_cast<size_t>(ch)];
            const double ga = gamma[ch], be = beta[ch];
            const double* xp = x.data() + (static_cast<int64_t>(i) * c + ch) * hw;
            double* yp = y.data() + (static_cast<int64_t>(i) * c + ch) * hw;
            for (int64_t j = 0; j < hw; ++j) yp[j] = ga * ((xp[j] - mu) * is) + be;
        }
    }

    auto backward = [x_id, gamma_id, beta_id, mean_v, inv_std_v, mode, n, c, hw, m](Tape& tp,
                                                                                    Tape::Id out) {
        const Tensor& dy = tp.grad(out);
        const Tensor& x_v = tp.value(x_id);
        const Tensor& gamma_v = tp.value(gamma_id);
        const bool need_x = tp.requires_grad(x_id);
        const bool need_g = tp.requires_grad(gamma_id);
        const bool need_b = tp.requires_grad(beta_id);
        if (!need_x && !need_g && !need_b) return;

        Tensor dgamma({c}), dbeta({c});
        Tensor dx;
        if (need_x) dx = Tensor::zeros(x_v.shape());
        for (int ch = 0; ch < c; ++ch) {
            const double mu = (*mean_v)[static_cast<size_t>(ch)];
            const double is = (*inv_std_v)[static_cast<size_t>(ch)];
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (int i = 0; i < n; ++i) {
                const double* xp = x_v.data() + (static_cast<int64_t>(i) * c + ch) * hw;
                const double* dyp = dy.data() + (static_cast<int64_t>(i) * c + ch) * hw;
                for (int64_t j = 0; j < hw; ++j) {
                    sum_dy += dyp[j];
                    sum_dy_xhat += dyp[j] * ((xp[j] - mu) * is);
                }
            }
            dgamma[ch] = sum_dy_xhat;
            dbeta[ch] = sum_dy;
            if (!need_x) continue;
            const double ga = gamma_v[ch];
            if (mode == Mode::train) {
                const double mean_dy = sum_dy / m;
                const double mean_dy_xhat = sum_dy_xhat / m;
                for (int i = 0; i < n; ++i) {
                    const double* xp = x_v.data() + (static_cast<int64_t>(i) * c + ch) * hw;
                    const double* dyp = dy.data() + (static_cast<int64_t>(i) * c + ch) * hw;
                    double* dxp = dx.data() + (static_cast<int64_t>(i) * c + ch) * hw;
                    for (int64_t j = 0; j < hw; ++j) {
                        const double xhat = (xp[j] - mu) * is;
                        dxp[j] = ga * is * (dyp[j] - mean_dy - xhat * mean_dy_xhat);
                    }
                }
            } else {
                for (int i = 0; i < n; ++i) {
                    const double* dyp = dy.data() + (static_cast<int64_t>(i) * c + ch) * hw;
                    double* dxp = dx.data() + (static_cast<int64_t>(i) * c + ch) * hw;
                    for (int64_t j = 0; j < hw; ++j) dxp[j] = ga * is * dyp[j];
                }
            }
        }
        if (need_g) tp.add_grad(gamma_id, dgamma);
        if (need_b) tp.add_grad(beta_id, dbeta);
        if (need_x) tp.add_grad(x_id, dx);
    };
    return t.push(std::move(y), {x_id, gamma_id, beta_id}, backward);
}

// --- dropout ---------------------------------------------------------------
//
// Inverted dropout: each element is zeroed with probability rate and
// survivors are scaled by 1/(1-rate), so inference is the identity. One
// uniform draw per element in row-major order.
inline Tape::Id dropout(Tape& t, Tape::Id x_id, double rate, Rng& rng, Mode mode) {
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw ConfigError("dropout: rate must be in [0,1), got " + std::to_string(rate));
    }
    if (mode == Mode::infer || rate == 0.0) return x_id;

    const Tensor& x = t.value(x_id);
    const double scale = 1.0 / (1.0 - rate);
    auto mask = std::make_shared<std::vector<double>>(static_cast<size_t>(x.size()));
    Tensor y(x.shape());
    for (int64_t i = 0; i < x.size(); ++i) {
        const double keep = rng.uniform() >= rate ? scale : 0.0;
        (*mask)[static_cast<size_t>(i)] = keep;
        y[i] = x[i] * keep;
    }

    auto backward = [x_id, mask](Tape& tp, Tape::Id out) {
        if (!tp.requires_grad(x_id)) return;
        const Tensor& dy = tp.grad(out);
        Tensor dx(tp.value(x_id).shape());
        for (int64_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * (*mask)[static_cast<size_t>(i)];
        tp.add_grad(x_id, dx);
    };
    return t.push(std::move(y), {x_id}, backward);
}

// --- shape ops -------------------------------------------------------------

inline Tape::Id reshape(Tape& t, Tape::Id x_id, std::vector<int> new_shape) {
    const Tensor& x = t.value(x_id);
    Tensor y = x.reshaped(std::move(new_shape));
    auto backward = [x_id](Tape& tp, Tape::Id out) {
        if (!tp.requires_grad(x_id)) return;
        tp.add_grad(x_id, tp.grad(out).reshaped(tp.value(x_id).shape()));
    };
    return t.push(std::move(y), {x_id}, backward);
}

inline Tape::Id flatten(Tape& t, Tape::Id x_id) {
    const Tensor& x = t.value(x_id);
    const int n = x.dim(0);
    return reshape(t, x_id, {n, static_cast<int>(x.size() / n)});
}

inline Tape::Id add(Tape& t, Tape::Id a_id, Tape::Id b_id) {
    const Tensor& a = t.value(a_id);
    const Tensor& b = t.value(b_id);
    if (!a.same_shape(b)) {
        throw ShapeError("add: shapes differ, " + a.shape_string() + " vs " + b.shape_string());
    }
    Tensor y(a.shape());
    for (int64_t i = 0; i < a.size(); ++i) y[i] = a[i] + b[i];
    auto backward = [a_id, b_id](Tape& tp, Tape::Id out) {
        const Tensor& dy = tp.grad(out);
        if (tp.requires_grad(a_id)) tp.add_grad(a_id, dy);
        if (tp.requires_grad(b_id)) tp.add_grad(b_id, dy);
    };
    return t.push(std::move(y), {a_id, b_id}, backward);
}

}  // namespace advsyn
