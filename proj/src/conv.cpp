// SPDX-License-Identifier: Apache-2.0

#include <limits>

#include "conv_ops.hpp"
#include "fedpara/model.hpp"

namespace fedpara {

namespace {

struct ConvGeometry {
    std::size_t batch, in_ch, h, w, out_ch, k1, k2, pad, out_h, out_w;
};

ConvGeometry geometry(const Tensor& kernel, const Tensor& input, std::size_t padding) {
    if (kernel.rank() != 4 || input.rank() != 4) {
        throw ShapeError("conv2d: expected kernel O x I x K1 x K2 and input B x I x H x W, got " +
                         to_string(kernel.shape()) + " and " + to_string(input.shape()));
    }
    ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), kernel.dim(0),
                   kernel.dim(2), kernel.dim(3), padding, 0, 0};
    if (kernel.dim(1) != g.in_ch) {
        throw ShapeError("conv2d: kernel expects " + std::to_string(kernel.dim(1)) + " input channels, got " +
                         std::to_string(g.in_ch));
    }
    if (g.h + 2 * padding < g.k1 || g.w + 2 * padding < g.k2) {
        throw ShapeError("conv2d: spatial size " + to_string(input.shape()) + " smaller than kernel " +
                         to_string(kernel.shape()) + " with padding " + std::to_string(padding));
    }
    g.out_h = g.h + 2 * padding - g.k1 + 1;
    g.out_w = g.w + 2 * padding - g.k2 + 1;
    return g;
}

/// (I K1 K2) x (out_h out_w) patch matrix for sample b.
Tensor im2col(const Tensor& input, const ConvGeometry& g, std::size_t b) {
    Tensor col({g.in_ch * g.k1 * g.k2, g.out_h * g.out_w});
    auto src = input.data();
    auto dst = col.data();
    const std::size_t cols = g.out_h * g.out_w;
    for (std::size_t c = 0; c < g.in_ch; ++c)
        for (std::size_t ki = 0; ki < g.k1; ++ki)
            for (std::size_t kj = 0; kj < g.k2; ++kj) {
                const std::size_t row = (c * g.k1 + ki) * g.k2 + kj;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const std::ptrdiff_t iy = std::ptrdiff_t(oy + ki) - std::ptrdiff_t(g.pad);
                    if (iy < 0 || iy >= std::ptrdiff_t(g.h)) continue;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const std::ptrdiff_t ix = std::ptrdiff_t(ox + kj) - std::ptrdiff_t(g.pad);
                        if (ix < 0 || ix >= std::ptrdiff_t(g.w)) continue;
                        dst[row * cols + oy * g.out_w + ox] =
                            src[((b * g.in_ch + c) * g.h + std::size_t(iy)) * g.w + std::size_t(ix)];
                    }
                }
            }
    return col;
}

void col2im_add(const Tensor& col, const ConvGeometry& g, std::size_t b, Tensor& grad_input) {
    auto src = col.data();
    auto dst = grad_input.data();
    const std::size_t cols = g.out_h * g.out_w;
    for (std::size_t c = 0; c < g.in_ch; ++c)
        for (std::size_t ki = 0; ki < g.k1; ++ki)
            for (std::size_t kj = 0; kj < g.k2; ++kj) {
                const std::size_t row = (c * g.k1 + ki) * g.k2 + kj;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const std::ptrdiff_t iy = std::ptrdiff_t(oy + ki) - std::ptrdiff_t(g.pad);
                    if (iy < 0 || iy >= std::ptrdiff_t(g.h)) continue;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const std::ptrdiff_t ix = std::ptrdiff_t(ox + kj) - std::ptrdiff_t(g.pad);
                        if (ix < 0 || ix >= std::ptrdiff_t(g.w)) continue;
                        dst[((b * g.in_ch + c) * g.h + std::size_t(iy)) * g.w + std::size_t(ix)] +=
                            src[row * cols + oy * g.out_w + ox];
                    }
                }
            }
}

}  // namespace

Tensor conv2d_forward(const Tensor& kernel, const Tensor& input, std::size_t padding) {
    const auto g = geometry(kernel, input, padding);
    const Tensor wmat = kernel.reshaped({g.out_ch, g.in_ch * g.k1 * g.k2});
    Tensor out({g.batch, g.out_ch, g.out_h, g.out_w});
    const std::size_t plane = g.out_ch * g.out_h * g.out_w;
    for (std::size_t b = 0; b < g.batch; ++b) {
        const Tensor y = matmul(wmat, im2col(input, g, b));
        std::copy(y.data().begin(), y.data().end(), out.data().begin() + std::ptrdiff_t(b * plane));
    }
    return out;
}

namespace detail {

Conv2dGrads conv2d_backward(const Tensor& kernel, const Tensor& input, std::size_t padding, const Tensor& grad_out) {
    const auto g = geometry(kernel, input, padding);
    if (grad_out.shape() != Shape{g.batch, g.out_ch, g.out_h, g.out_w}) {
        throw ShapeError("conv2d_backward: gradient shape " + to_string(grad_out.shape()) + " mismatched");
    }
    const std::size_t patch = g.in_ch * g.k1 * g.k2;
    const std::size_t plane = g.out_ch * g.out_h * g.out_w;
    const Tensor wmat = kernel.reshaped({g.out_ch, patch});
    Tensor grad_w({g.out_ch, patch});
    Tensor grad_in(input.shape());
    for (std::size_t b = 0; b < g.batch; ++b) {
        std::vector<double> slice(grad_out.data().begin() + std::ptrdiff_t(b * plane),
                                  grad_out.data().begin() + std::ptrdiff_t((b + 1) * plane));
        const Tensor gy({g.out_ch, g.out_h * g.out_w}, std::move(slice));
        const Tensor col = im2col(input, g, b);
        grad_w += matmul_nt(gy, col);
        col2im_add(matmul_tn(wmat, gy), g, b, grad_in);
    }
    return {grad_w.reshaped(kernel.shape()), std::move(grad_in)};
}

Tensor maxpool_forward(const Tensor& input, std::size_t window, std::vector<std::size_t>& argmax) {
    if (input.rank() != 4) throw ShapeError("maxpool: expected B x C x H x W, got " + to_string(input.shape()));
    const std::size_t bsz = input.dim(0), ch = input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::size_t oh = h / window, ow = w / window;
    if (oh == 0 || ow == 0) throw ShapeError("maxpool: window larger than input " + to_string(input.shape()));
    Tensor out({bsz, ch, oh, ow});
    argmax.assign(out.size(), 0);
    auto src = input.data();
    std::size_t o = 0;
    for (std::size_t b = 0; b < bsz; ++b)
        for (std::size_t c = 0; c < ch; ++c)
            for (std::size_t y = 0; y < oh; ++y)
                for (std::size_t x = 0; x < ow; ++x, ++o) {
                    double best = -std::numeric_limits<double>::infinity();
                    std::size_t best_idx = 0;
                    for (std::size_t dy = 0; dy < window; ++dy)
                        for (std::size_t dx = 0; dx < window; ++dx) {
                            const std::size_t idx = ((b * ch + c) * h + y * window + dy) * w + x * window + dx;
                            if (src[idx] > best) {
                                best = src[idx];
                                best_idx = idx;
                            }
                        }
                    out[o] = best;
                    argmax[o] = best_idx;
                }
    return out;
}

Tensor maxpool_backward(const Tensor& grad_out, const std::vector<std::size_t>& argmax, const Shape& input_shape) {
    Tensor grad_in(input_shape);
    for (std::size_t i = 0; i < grad_out.size(); ++i) grad_in[argmax[i]] += grad_out[i];
    return grad_in;
}

}  // namespace detail

}  // namespace fedpara
