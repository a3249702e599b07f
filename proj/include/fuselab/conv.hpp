#pragma once

// 2-D convolution kernels over (batch, height, width, channel) row-major
// layout. Three modes: standard (im2col + GEMM), depthwise, and transposed
// 2x2/stride-2. Kernels are stored (kh, kw, cin, cout); depthwise kernels
// (kh, kw, c, mult).

#include "fuselab/tensor.hpp"

namespace fuselab {

namespace detail {

// column matrix of shape (B*OH*OW, kh*kw*Cin); zero padding
template <typename T>
void im2col(const T* x, std::int64_t bsz, std::int64_t h, std::int64_t w, std::int64_t c,
            std::int64_t kh, std::int64_t kw, std::int64_t stride, std::int64_t pad,
            std::int64_t oh, std::int64_t ow, T* col) {
    const std::int64_t patch = kh * kw * c;
    for (std::int64_t b = 0; b < bsz; ++b)
        for (std::int64_t oy = 0; oy < oh; ++oy)
            for (std::int64_t ox = 0; ox < ow; ++ox) {
                T* dst = col + ((b * oh + oy) * ow + ox) * patch;
                for (std::int64_t ky = 0; ky < kh; ++ky) {
                    const std::int64_t iy = oy * stride + ky - pad;
                    for (std::int64_t kx = 0; kx < kw; ++kx) {
                        const std::int64_t ix = ox * stride + kx - pad;
                        T* d = dst + (ky * kw + kx) * c;
                        if (iy < 0 || iy >= h || ix < 0 || ix >= w) {
                            std::fill(d, d + c, T(0));
                        } else {
                            const T* s = x + ((b * h + iy) * w + ix) * c;
                            std::copy(s, s + c, d);
                        }
                    }
                }
            }
}

template <typename T>
void col2im_add(const T* col, std::int64_t bsz, std::int64_t h, std::int64_t w,
                std::int64_t c, std::int64_t kh, std::int64_t kw, std::int64_t stride,
                std::int64_t pad, std::int64_t oh, std::int64_t ow, T* x) {
    const std::int64_t patch = kh * kw * c;
    for (std::int64_t b = 0; b < bsz; ++b)
        for (std::int64_t oy = 0; oy < oh; ++oy)
            for (std::int64_t ox = 0; ox < ow; ++ox) {
                const T* src = col + ((b * oh + oy) * ow + ox) * patch;
                for (std::int64_t ky = 0; ky < kh; ++ky) {
                    const std::int64_t iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= h) continue;
                    for (std::int64_t kx = 0; kx < kw; ++kx) {
                        const std::int64_t ix = ox * stride + kx - pad;
                        if (ix < 0 || ix >= w) continue;
                        const T* s = src + (ky * kw + kx) * c;
                        T* d = x + ((b * h + iy) * w + ix) * c;
                        for (std::int64_t i = 0; i < c; ++i) d[i] += s[i];
                    }
                }
            }
}

}  // namespace detail

// Standard convolution; pad chosen by caller (3x3 uses pad 1 to preserve
// extents, 2x2 stride-2 uses pad 0 to halve them).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& bias,
                 std::int64_t stride, std::int64_t pad) {
    if (x.rank() != 4) throw ShapeError("conv2d: input must be BxHxWxC, got " + shape_str(x.shape()));
    if (k.rank() != 4) throw ShapeError("conv2d: kernel must be kh x kw x cin x cout");
    const std::int64_t bsz = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    const std::int64_t kh = k.dim(0), kw = k.dim(1), cin = k.dim(2), cout = k.dim(3);
    if (cin != c)
        throw ShapeError("conv2d: channel mismatch, input has " + std::to_string(c) +
                         ", kernel expects " + std::to_string(cin));
    if (kh > h + 2 * pad || kw > w + 2 * pad)
        throw ShapeError("conv2d: kernel exceeds padded input extents");
    if (stride == 2 && ((h % 2) != 0 || (w % 2) != 0))
        throw ShapeError("conv2d: stride-2 requires even extents, got " + shape_str(x.shape()));
    const std::int64_t oh = (h + 2 * pad - kh) / stride + 1;
    const std::int64_t ow = (w + 2 * pad - kw) / stride + 1;
    const std::int64_t rows = bsz * oh * ow, patch = kh * kw * c;

    auto r = detail::make_result<T>(Shape{bsz, oh, ow, cout}, {x, k, bias});
    std::vector<T> col(rows * patch);
    detail::im2col(x.data().data(), bsz, h, w, c, kh, kw, stride, pad, oh, ow, col.data());
    detail::CMapM<T> Col(col.data(), rows, patch), K(k.data().data(), patch, cout);
    detail::MapM<T> Y(r->value.data(), rows, cout);
    Y.noalias() = Col * K;
    Y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.data().data(), cout);
    detail::check_finite_out(*r, "conv2d");

    if (r->requires_grad) {
        auto xn = x.node(), kn = k.node(), bn = bias.node();
        r->backward = [xn, kn, bn, bsz, h, w, c, kh, kw, stride, pad, oh, ow, rows,
                       patch](Node<T>& self) {
            const std::int64_t cout = kn->shape[3];
            detail::CMapM<T> G(self.grad.data(), rows, cout);
            // recomputed instead of cached; trades time for graph memory
            std::vector<T> col(rows * patch);
            detail::im2col(xn->value.data(), bsz, h, w, c, kh, kw, stride, pad, oh, ow,
                           col.data());
            if (kn->requires_grad) {
                detail::CMapM<T> Col(col.data(), rows, patch);
                detail::MapM<T>(kn->grad_data(), patch, cout).noalias() += Col.transpose() * G;
            }
            if (bn->requires_grad) {
                Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> GB(bn->grad_data(), cout);
                GB += G.colwise().sum();
            }
            if (xn->requires_grad) {
                detail::CMapM<T> K(kn->value.data(), patch, cout);
                std::vector<T> gcol(rows * patch);
                detail::MapM<T>(gcol.data(), rows, patch).noalias() = G * K.transpose();
                xn->grad_data();
                detail::col2im_add(gcol.data(), bsz, h, w, c, kh, kw, stride, pad, oh, ow,
                                   xn->grad.data());
            }
        };
    }
    return Tensor<T>(r);
}

// Depthwise convolution, stride 1, extent-preserving padding. Kernel
// (kh, kw, c, mult) widens c to c*mult; output channel co = ci*mult + m.
template <typename T>
Tensor<T> conv2d_depthwise(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& bias) {
    if (x.rank() != 4 || k.rank() != 4)
        throw ShapeError("conv2d_depthwise: need BxHxWxC input and kh x kw x c x mult kernel");
    const std::int64_t bsz = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    const std::int64_t kh = k.dim(0), kw = k.dim(1), mult = k.dim(3);
    if (k.dim(2) != c)
        throw ShapeError("conv2d_depthwise: channel mismatch, input " + std::to_string(c) +
                         " vs kernel " + std::to_string(k.dim(2)));
    if (kh % 2 == 0 || kw % 2 == 0)
        throw ShapeError("conv2d_depthwise: kernel extents must be odd");
    const std::int64_t pad_y = kh / 2, pad_x = kw / 2, cout = c * mult;
    auto r = detail::make_result<T>(Shape{bsz, h, w, cout}, {x, k, bias});
    const T* xp = x.data().data();
    const T* kp = k.data().data();
    for (std::int64_t b = 0; b < bsz; ++b)
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t xcol = 0; xcol < w; ++xcol) {
                T* out = r->value.data() + ((b * h + y) * w + xcol) * cout;
                for (std::int64_t ci = 0; ci < c; ++ci)
                    for (std::int64_t m = 0; m < mult; ++m) {
                        T acc = bias.data()[ci * mult + m];
                        for (std::int64_t ky = 0; ky < kh; ++ky) {
                            const std::int64_t iy = y + ky - pad_y;
                            if (iy < 0 || iy >= h) continue;
                            for (std::int64_t kx = 0; kx < kw; ++kx) {
                                const std::int64_t ix = xcol + kx - pad_x;
                                if (ix < 0 || ix >= w) continue;
                                acc += xp[((b * h + iy) * w + ix) * c + ci] *
                                       kp[((ky * kw + kx) * c + ci) * mult + m];
                            }
                        }
                        out[ci * mult + m] = acc;
                    }
            }
    detail::check_finite_out(*r, "conv2d_depthwise");
    if (r->requires_grad) {
        auto xn = x.node(), kn = k.node(), bn = bias.node();
        r->backward = [xn, kn, bn, bsz, h, w, c, kh, kw, mult, pad_y, pad_x,
                       cout](Node<T>& self) {
            T* gx = xn->requires_grad ? xn->grad_data() : nullptr;
            T* gk = kn->requires_grad ? kn->grad_data() : nullptr;
            T* gb = bn->requires_grad ? bn->grad_data() : nullptr;
            const T* xp = xn->value.data();
            const T* kp = kn->value.data();
            for (std::int64_t b = 0; b < bsz; ++b)
                for (std::int64_t y = 0; y < h; ++y)
                    for (std::int64_t xcol = 0; xcol < w; ++xcol) {
                        const T* g = self.grad.data() + ((b * h + y) * w + xcol) * cout;
                        for (std::int64_t ci = 0; ci < c; ++ci)
                            for (std::int64_t m = 0; m < mult; ++m) {
                                const T go = g[ci * mult + m];
                                if (gb) gb[ci * mult + m] += go;
                                for (std::int64_t ky = 0; ky < kh; ++ky) {
                                    const std::int64_t iy = y + ky - pad_y;
                                    if (iy < 0 || iy >= h) continue;
                                    for (std::int64_t kx = 0; kx < kw; ++kx) {
                                        const std::int64_t ix = xcol + kx - pad_x;
                                        if (ix < 0 || ix >= w) continue;
                                        const std::int64_t xi = ((b * h + iy) * w + ix) * c + ci;
                                        const std::int64_t kidx =
                                            ((ky * kw + kx) * c + ci) * mult + m;
                                        if (gx) gx[xi] += go * kp[kidx];
                                        if (gk) gk[kidx] += go * xp[xi];
                                    }
                                }
                            }
                    }
        };
    }
    return Tensor<T>(r);
}

// Transposed convolution, 2x2 kernel, stride 2: exact doubling of spatial
// extents. Non-overlapping windows, so each output cell has one source pixel.
template <typename T>
Tensor<T> conv2d_transposed(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& bias) {
    if (x.rank() != 4 || k.rank() != 4 || k.dim(0) != 2 || k.dim(1) != 2)
        throw ShapeError("conv2d_transposed: need BxHxWxC input and 2x2 x cin x cout kernel");
    const std::int64_t bsz = x.dim(0), h = x.dim(1), w = x.dim(2), cin = x.dim(3);
    const std::int64_t cout = k.dim(3);
    if (k.dim(2) != cin)
        throw ShapeError("conv2d_transposed: channel mismatch, input " + std::to_string(cin) +
                         " vs kernel " + std::to_string(k.dim(2)));
    auto r = detail::make_result<T>(Shape{bsz, 2 * h, 2 * w, cout}, {x, k, bias});
    const T* xp = x.data().data();
    const T* kp = k.data().data();
    for (std::int64_t b = 0; b < bsz; ++b)
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t xcol = 0; xcol < w; ++xcol) {
                const T* in = xp + ((b * h + y) * w + xcol) * cin;
                for (std::int64_t ky = 0; ky < 2; ++ky)
                    for (std::int64_t kx = 0; kx < 2; ++kx) {
                        T* out = r->value.data() +
                                 ((b * 2 * h + 2 * y + ky) * 2 * w + 2 * xcol + kx) * cout;
                        const T* kk = kp + (ky * 2 + kx) * cin * cout;
                        for (std::int64_t co = 0; co < cout; ++co) {
                            T acc = bias.data()[co];
                            for (std::int64_t ci = 0; ci < cin; ++ci)
                                acc += in[ci] * kk[ci * cout + co];
                            out[co] = acc;
                        }
                    }
            }
    detail::check_finite_out(*r, "conv2d_transposed");
    if (r->requires_grad) {
        auto xn = x.node(), kn = k.node(), bn = bias.node();
        r->backward = [xn, kn, bn, bsz, h, w, cin, cout](Node<T>& self) {
            T* gx = xn->requires_grad ? xn->grad_data() : nullptr;
            T* gk = kn->requires_grad ? kn->grad_data() : nullptr;
            T* gb = bn->requires_grad ? bn->grad_data() : nullptr;
            const T* xp = xn->value.data();
            const T* kp = kn->value.data();
            for (std::int64_t b = 0; b < bsz; ++b)
                for (std::int64_t y = 0; y < h; ++y)
                    for (std::int64_t xcol = 0; xcol < w; ++xcol) {
                        const T* in = xp + ((b * h + y) * w + xcol) * cin;
                        T* gin = gx ? gx + ((b * h + y) * w + xcol) * cin : nullptr;
                        for (std::int64_t ky = 0; ky < 2; ++ky)
                            for (std::int64_t kx = 0; kx < 2; ++kx) {
                                const T* g = self.grad.data() +
                                             ((b * 2 * h + 2 * y + ky) * 2 * w + 2 * xcol + kx) *
                                                 cout;
                                const std::int64_t koff = (ky * 2 + kx) * cin * cout;
                                for (std::int64_t co = 0; co < cout; ++co) {
                                    if (gb) gb[co] += g[co];
                                    for (std::int64_t ci = 0; ci < cin; ++ci) {
                                        if (gin) gin[ci] += g[co] * kp[koff + ci * cout + co];
                                        if (gk) gk[koff + ci * cout + co] += in[ci] * g[co];
                                    }
                                }
                            }
                    }
        };
    }
    return Tensor<T>(r);
}

}  // namespace fuselab
