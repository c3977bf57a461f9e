#pragma once

#include <stdexcept>
#include <vector>

#include "tensor.hpp"

namespace unept {

/// 2-D cross-correlation (no kernel flip) of x[Cin x H x W] with
/// kernel[Cout x Cin x k x k], zero padding. Runs as im2col + GEMM so forward
/// and backward both ride the matmul kernel.
inline Tensor conv2d(const Tensor& x, const Tensor& kernel, int stride = 1, int padding = 0) {
    if (x.rank() != 3) throw std::invalid_argument("conv2d: input must be Cin x H x W");
    if (kernel.rank() != 4) throw std::invalid_argument("conv2d: kernel must be Cout x Cin x k x k");
    int cin = x.dim(0), h = x.dim(1), w = x.dim(2);
    int cout = kernel.dim(0), k = kernel.dim(2);
    if (kernel.dim(1) != cin) throw std::invalid_argument("conv2d: channel mismatch");
    if (kernel.dim(3) != k || k % 2 == 0) throw std::invalid_argument("conv2d: kernel must be square and odd");
    if (stride < 1 || padding < 0) throw std::invalid_argument("conv2d: bad stride/padding");
    int ho = (h + 2 * padding - k) / stride + 1;
    int wo = (w + 2 * padding - k) / stride + 1;
    if (ho < 1 || wo < 1) throw std::invalid_argument("conv2d: non-positive output extent");

    const int patch = cin * k * k;
    const std::size_t npix = static_cast<std::size_t>(ho) * wo;
    // cols[patch x ho*wo]
    std::vector<double> cols(static_cast<std::size_t>(patch) * npix, 0.0);
    const auto& xv = x.value();
    for (int ci = 0; ci < cin; ++ci) {
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                std::size_t row = (static_cast<std::size_t>(ci) * k + ky) * k + kx;
                double* dst = cols.data() + row * npix;
                for (int oy = 0; oy < ho; ++oy) {
                    int iy = oy * stride + ky - padding;
                    if (iy < 0 || iy >= h) continue;
                    const double* src = xv.data() + (static_cast<std::size_t>(ci) * h + iy) * w;
                    for (int ox = 0; ox < wo; ++ox) {
                        int ix = ox * stride + kx - padding;
                        if (ix < 0 || ix >= w) continue;
                        dst[static_cast<std::size_t>(oy) * wo + ox] = src[ix];
                    }
                }
            }
    }

    std::vector<double> out(static_cast<std::size_t>(cout) * npix);
    detail::gemm_nn(kernel.value().data(), cols.data(), out.data(), cout, patch,
                    static_cast<int>(npix), false);

    return Tensor::from_op(
        "conv2d", {cout, ho, wo}, std::move(out), {x, kernel},
        [cin, h, w, cout, k, stride, padding, ho, wo, patch, npix,
         cols = std::move(cols)](detail::Node& nd) {
            auto* gx = detail::parent_grad(nd, 0);
            auto* gk = detail::parent_grad(nd, 1);
            if (gk) {
                // dW = dY[cout x npix] * cols^T
                detail::gemm_nt(nd.grad.data(), cols.data(), gk->data(), cout,
                                static_cast<int>(npix), patch, true);
            }
            if (gx) {
                const auto& kv = detail::parent_value(nd, 1);
                std::vector<double> dcols(static_cast<std::size_t>(patch) * npix);
                detail::gemm_tn(kv.data(), nd.grad.data(), dcols.data(), cout, patch,
                                static_cast<int>(npix), false);
                for (int ci = 0; ci < cin; ++ci) {
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx) {
                            std::size_t row = (static_cast<std::size_t>(ci) * k + ky) * k + kx;
                            const double* src = dcols.data() + row * npix;
                            for (int oy = 0; oy < ho; ++oy) {
                                int iy = oy * stride + ky - padding;
                                if (iy < 0 || iy >= h) continue;
                                double* dst =
                                    gx->data() + (static_cast<std::size_t>(ci) * h + iy) * w;
                                for (int ox = 0; ox < wo; ++ox) {
                                    int ix = ox * stride + kx - padding;
                                    if (ix < 0 || ix >= w) continue;
                                    dst[ix] += src[static_cast<std::size_t>(oy) * wo + ox];
                                }
                            }
                        }
                }
            }
        });
}

/// x[C x H x W] + bias[C], broadcast over each channel plane.
inline Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
    if (x.rank() != 3 || bias.rank() != 1 || bias.dim(0) != x.dim(0))
        throw std::invalid_argument("add_channel_bias: bias must match channel count");
    int c = x.dim(0);
    std::size_t hw = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
    std::vector<double> out(x.numel());
    const auto& xv = x.value();
    const auto& bv = bias.value();
    for (int ch = 0; ch < c; ++ch) {
        double b = bv[static_cast<std::size_t>(ch)];
        for (std::size_t p = 0; p < hw; ++p)
            out[static_cast<std::size_t>(ch) * hw + p] = xv[static_cast<std::size_t>(ch) * hw + p] + b;
    }
    return Tensor::from_op("add_channel_bias", x.shape(), std::move(out), {x, bias},
                           [c, hw](detail::Node& nd) {
                               if (auto* gx = detail::parent_grad(nd, 0))
                                   for (std::size_t i = 0; i < nd.grad.size(); ++i)
                                       (*gx)[i] += nd.grad[i];
                               if (auto* gb = detail::parent_grad(nd, 1)) {
                                   for (int ch = 0; ch < c; ++ch) {
                                       double acc = 0.0;
                                       for (std::size_t p = 0; p < hw; ++p)
                                           acc += nd.grad[static_cast<std::size_t>(ch) * hw + p];
                                       (*gb)[static_cast<std::size_t>(ch)] += acc;
                                   }
                               }
                           });
}

}  // namespace unept
