#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "labels.hpp"
#include "tensor.hpp"

// Grid sampling. Coordinates are (row, col) in continuous pixel space where
// integer coordinates sit exactly on lattice points. Out-of-range coordinates
// clamp to the valid border.

namespace unept {

namespace detail {

struct BilinearCell {
    int y0, y1, x0, x1;
    double wy, wx;
    bool clamped_y, clamped_x;
};

inline BilinearCell bilinear_cell(double y, double x, int h, int w) {
    BilinearCell c{};
    c.clamped_y = y < 0.0 || y > static_cast<double>(h - 1);
    c.clamped_x = x < 0.0 || x > static_cast<double>(w - 1);
    double yc = std::min(std::max(y, 0.0), static_cast<double>(h - 1));
    double xc = std::min(std::max(x, 0.0), static_cast<double>(w - 1));
    c.y0 = static_cast<int>(std::floor(yc));
    c.x0 = static_cast<int>(std::floor(xc));
    if (c.y0 > h - 1) c.y0 = h - 1;
    if (c.x0 > w - 1) c.x0 = w - 1;
    c.y1 = std::min(c.y0 + 1, h - 1);
    c.x1 = std::min(c.x0 + 1, w - 1);
    c.wy = yc - c.y0;
    c.wx = xc - c.x0;
    return c;
}

}  // namespace detail

/// Samples map[C x H x W] at P (row, col) coordinates with 4-neighbour
/// bilinear interpolation; returns [P x C]. Differentiable both in the map
/// values and in the coordinates (offsets are learned through this path).
inline Tensor bilinear_sample(const Tensor& map, const Tensor& coords) {
    if (map.rank() != 3) throw std::invalid_argument("bilinear_sample: map must be C x H x W");
    if (coords.rank() != 2 || coords.dim(1) != 2)
        throw std::invalid_argument("bilinear_sample: coords must be P x 2");
    int c = map.dim(0), h = map.dim(1), w = map.dim(2);
    if (h < 1 || w < 1) throw std::invalid_argument("bilinear_sample: empty map");
    int p = coords.dim(0);
    std::size_t hw = static_cast<std::size_t>(h) * w;
    const auto& mv = map.value();
    const auto& cv = coords.value();
    std::vector<double> out(static_cast<std::size_t>(p) * c);
    for (int i = 0; i < p; ++i) {
        auto cell = detail::bilinear_cell(cv[2 * static_cast<std::size_t>(i)],
                                          cv[2 * static_cast<std::size_t>(i) + 1], h, w);
        double w00 = (1.0 - cell.wy) * (1.0 - cell.wx);
        double w01 = (1.0 - cell.wy) * cell.wx;
        double w10 = cell.wy * (1.0 - cell.wx);
        double w11 = cell.wy * cell.wx;
        for (int ch = 0; ch < c; ++ch) {
            const double* plane = mv.data() + static_cast<std::size_t>(ch) * hw;
            out[static_cast<std::size_t>(i) * c + ch] =
                w00 * plane[static_cast<std::size_t>(cell.y0) * w + cell.x0] +
                w01 * plane[static_cast<std::size_t>(cell.y0) * w + cell.x1] +
                w10 * plane[static_cast<std::size_t>(cell.y1) * w + cell.x0] +
                w11 * plane[static_cast<std::size_t>(cell.y1) * w + cell.x1];
        }
    }
    return Tensor::from_op(
        "bilinear_sample", {p, c}, std::move(out), {map, coords},
        [c, h, w, p, hw](detail::Node& nd) {
            const auto& mv = detail::parent_value(nd, 0);
            const auto& cv = detail::parent_value(nd, 1);
            auto* gm = detail::parent_grad(nd, 0);
            auto* gc = detail::parent_grad(nd, 1);
            for (int i = 0; i < p; ++i) {
                auto cell = detail::bilinear_cell(cv[2 * static_cast<std::size_t>(i)],
                                                  cv[2 * static_cast<std::size_t>(i) + 1], h, w);
                std::size_t i00 = static_cast<std::size_t>(cell.y0) * w + cell.x0;
                std::size_t i01 = static_cast<std::size_t>(cell.y0) * w + cell.x1;
                std::size_t i10 = static_cast<std::size_t>(cell.y1) * w + cell.x0;
                std::size_t i11 = static_cast<std::size_t>(cell.y1) * w + cell.x1;
                double w00 = (1.0 - cell.wy) * (1.0 - cell.wx);
                double w01 = (1.0 - cell.wy) * cell.wx;
                double w10 = cell.wy * (1.0 - cell.wx);
                double w11 = cell.wy * cell.wx;
                double dy = 0.0, dx = 0.0;
                for (int ch = 0; ch < c; ++ch) {
                    double gy = nd.grad[static_cast<std::size_t>(i) * c + ch];
                    std::size_t base = static_cast<std::size_t>(ch) * hw;
                    if (gm) {
                        (*gm)[base + i00] += w00 * gy;
                        (*gm)[base + i01] += w01 * gy;
                        (*gm)[base + i10] += w10 * gy;
                        (*gm)[base + i11] += w11 * gy;
                    }
                    if (gc) {
                        double v00 = mv[base + i00], v01 = mv[base + i01];
                        double v10 = mv[base + i10], v11 = mv[base + i11];
                        dy += gy * ((v10 - v00) * (1.0 - cell.wx) + (v11 - v01) * cell.wx);
                        dx += gy * ((v01 - v00) * (1.0 - cell.wy) + (v11 - v10) * cell.wy);
                    }
                }
                if (gc) {
                    // A clamped coordinate is locally constant, so no gradient.
                    if (!cell.clamped_y) (*gc)[2 * static_cast<std::size_t>(i)] += dy;
                    if (!cell.clamped_x) (*gc)[2 * static_cast<std::size_t>(i) + 1] += dx;
                }
            }
        });
}

/// Rounds each (row, col) coordinate to the nearest lattice point (ties round
/// half up) and gathers labels. Not differentiable.
inline std::vector<std::int32_t> nearest_sample(const LabelMap& map,
                                                const std::vector<double>& coords) {
    if (coords.size() % 2 != 0)
        throw std::invalid_argument("nearest_sample: coords must be (row, col) pairs");
    std::size_t p = coords.size() / 2;
    std::vector<std::int32_t> out(p);
    for (std::size_t i = 0; i < p; ++i) {
        int y = static_cast<int>(std::floor(coords[2 * i] + 0.5));
        int x = static_cast<int>(std::floor(coords[2 * i + 1] + 0.5));
        y = std::min(std::max(y, 0), map.height - 1);
        x = std::min(std::max(x, 0), map.width - 1);
        out[i] = map.at(y, x);
    }
    return out;
}

/// Bilinear upsampling by an integer factor under the half-pixel-centre
/// convention: output pixel i reads input coordinate (i + 0.5)/f - 0.5.
inline Tensor upsample_bilinear(const Tensor& x, int factor) {
    if (x.rank() != 3) throw std::invalid_argument("upsample_bilinear: input must be C x H x W");
    if (factor < 1) throw std::invalid_argument("upsample_bilinear: factor must be >= 1");
    int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    int ho = h * factor, wo = w * factor;

    struct Axis {
        int i0, i1;
        double t;
    };
    auto make_axis = [factor](int out_extent, int in_extent) {
        std::vector<Axis> axis(static_cast<std::size_t>(out_extent));
        for (int i = 0; i < out_extent; ++i) {
            double src = (i + 0.5) / factor - 0.5;
            src = std::min(std::max(src, 0.0), static_cast<double>(in_extent - 1));
            int i0 = static_cast<int>(std::floor(src));
            if (i0 > in_extent - 1) i0 = in_extent - 1;
            int i1 = std::min(i0 + 1, in_extent - 1);
            axis[static_cast<std::size_t>(i)] = {i0, i1, src - i0};
        }
        return axis;
    };
    auto ys = make_axis(ho, h);
    auto xs = make_axis(wo, w);

    const auto& xv = x.value();
    std::vector<double> out(static_cast<std::size_t>(c) * ho * wo);
    std::size_t hw = static_cast<std::size_t>(h) * w;
    for (int ch = 0; ch < c; ++ch) {
        const double* plane = xv.data() + static_cast<std::size_t>(ch) * hw;
        double* oplane = out.data() + static_cast<std::size_t>(ch) * ho * wo;
        for (int i = 0; i < ho; ++i) {
            const Axis& ay = ys[static_cast<std::size_t>(i)];
            for (int j = 0; j < wo; ++j) {
                const Axis& ax = xs[static_cast<std::size_t>(j)];
                double v0 = plane[static_cast<std::size_t>(ay.i0) * w + ax.i0] * (1.0 - ax.t) +
                            plane[static_cast<std::size_t>(ay.i0) * w + ax.i1] * ax.t;
                double v1 = plane[static_cast<std::size_t>(ay.i1) * w + ax.i0] * (1.0 - ax.t) +
                            plane[static_cast<std::size_t>(ay.i1) * w + ax.i1] * ax.t;
                oplane[static_cast<std::size_t>(i) * wo + j] = v0 * (1.0 - ay.t) + v1 * ay.t;
            }
        }
    }
    return Tensor::from_op(
        "upsample_bilinear", {c, ho, wo}, std::move(out), {x},
        [c, h, w, ho, wo, hw, ys = std::move(ys), xs = std::move(xs)](detail::Node& nd) {
            if (auto* g = detail::parent_grad(nd, 0)) {
                for (int ch = 0; ch < c; ++ch) {
                    double* gplane = g->data() + static_cast<std::size_t>(ch) * hw;
                    const double* oplane =
                        nd.grad.data() + static_cast<std::size_t>(ch) * ho * wo;
                    for (int i = 0; i < ho; ++i) {
                        const auto& ay = ys[static_cast<std::size_t>(i)];
                        for (int j = 0; j < wo; ++j) {
                            const auto& ax = xs[static_cast<std::size_t>(j)];
                            double gy = oplane[static_cast<std::size_t>(i) * wo + j];
                            gplane[static_cast<std::size_t>(ay.i0) * w + ax.i0] +=
                                (1.0 - ay.t) * (1.0 - ax.t) * gy;
                            gplane[static_cast<std::size_t>(ay.i0) * w + ax.i1] +=
                                (1.0 - ay.t) * ax.t * gy;
                            gplane[static_cast<std::size_t>(ay.i1) * w + ax.i0] +=
                                ay.t * (1.0 - ax.t) * gy;
                            gplane[static_cast<std::size_t>(ay.i1) * w + ax.i1] +=
                                ay.t * ax.t * gy;
                        }
                    }
                }
            }
        });
}

}  // namespace unept
