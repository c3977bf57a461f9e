#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "labels.hpp"
#include "sampling.hpp"
#include "tensor.hpp"

// Boundary refinement: distance-transform ground truth, quantised interior
// directions, direction -> offset decoding, and grid-sample refinement of
// coarse predictions.

namespace unept {

inline constexpr int kDirectionBins = 8;

/// Compass offset (dy, dx) of direction bin k (bin 0 points along +x, bins
/// advance by 45 degrees counter-clockwise; the row axis points down).
inline std::array<int, 2> bin_to_offset(int bin, int m = kDirectionBins) {
    if (m != kDirectionBins) throw std::invalid_argument("bin_to_offset: m must be 8");
    if (bin < 0 || bin >= m) throw std::invalid_argument("bin_to_offset: bin out of range");
    static constexpr std::array<std::array<int, 2>, 8> table{{
        {0, 1},    // 0:   +x
        {-1, 1},   // 1:  up-right
        {-1, 0},   // 2:  up
        {-1, -1},  // 3:  up-left
        {0, -1},   // 4:  -x
        {1, -1},   // 5:  down-left
        {1, 0},    // 6:  down
        {1, 1},    // 7:  down-right
    }};
    return table[static_cast<std::size_t>(bin)];
}

/// Quantises an angle in radians (measured with +y up, i.e. atan2(-dy, dx))
/// to the nearest of m equal bins, bin 0 centred on +x.
inline int quantize_angle(double theta, int m = kDirectionBins) {
    const double two_pi = 6.283185307179586476925286766559;
    double t = std::fmod(theta, two_pi);
    if (t < 0) t += two_pi;
    int bin = static_cast<int>(std::floor(t / (two_pi / m) + 0.5)) % m;
    return bin;
}

struct BoundaryTargets {
    int height = 0, width = 0;
    std::vector<std::uint8_t> boundary;     // 1 inside the boundary band
    std::vector<std::int32_t> direction;    // bin in [0,m), valid only where boundary=1
    std::vector<std::array<int, 2>> offsets;  // (dy,dx) from the direction bin, (0,0) elsewhere

    std::size_t size() const { return boundary.size(); }
};

struct DistanceField {
    Tensor distance;  // [H x W]; +inf where undefined
    bool single_label = false;
};

namespace detail {

// Pixels with no source anywhere carry this instead of +inf so the parabola
// intersections below stay finite. Real squared distances never exceed
// H^2 + W^2, orders of magnitude smaller.
inline constexpr double kEdtUnreachable = 1e12;

// 1-D squared Euclidean distance transform (lower envelope of parabolas,
// Felzenszwalb-Huttenlocher).
inline void edt_1d(const std::vector<double>& f, std::vector<double>& d, int n) {
    static thread_local std::vector<int> v;
    static thread_local std::vector<double> z;
    v.assign(static_cast<std::size_t>(n), 0);
    z.assign(static_cast<std::size_t>(n) + 1, 0.0);
    const double inf = std::numeric_limits<double>::infinity();
    auto isect = [&](int q, int p) {
        return ((f[static_cast<std::size_t>(q)] + static_cast<double>(q) * q) -
                (f[static_cast<std::size_t>(p)] + static_cast<double>(p) * p)) /
               (2.0 * q - 2.0 * p);
    };
    int k = 0;
    v[0] = 0;
    z[0] = -inf;
    z[1] = inf;
    for (int q = 1; q < n; ++q) {
        double s = isect(q, v[static_cast<std::size_t>(k)]);
        while (s <= z[static_cast<std::size_t>(k)]) {
            --k;
            s = isect(q, v[static_cast<std::size_t>(k)]);
        }
        ++k;
        v[static_cast<std::size_t>(k)] = q;
        z[static_cast<std::size_t>(k)] = s;
        z[static_cast<std::size_t>(k) + 1] = inf;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[static_cast<std::size_t>(k) + 1] < q) ++k;
        int p = v[static_cast<std::size_t>(k)];
        d[static_cast<std::size_t>(q)] = static_cast<double>(q - p) * (q - p) + f[static_cast<std::size_t>(p)];
    }
}

// Exact 2-D squared EDT of a source mask (0 at sources, inf elsewhere).
inline std::vector<double> edt_2d(const std::vector<double>& seed, int h, int w) {
    std::vector<double> tmp(seed.size()), out(seed.size());
    std::vector<double> col(static_cast<std::size_t>(h)), cold(static_cast<std::size_t>(h));
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) col[static_cast<std::size_t>(y)] = seed[static_cast<std::size_t>(y) * w + x];
        edt_1d(col, cold, h);
        for (int y = 0; y < h; ++y) tmp[static_cast<std::size_t>(y) * w + x] = cold[static_cast<std::size_t>(y)];
    }
    std::vector<double> row(static_cast<std::size_t>(w)), rowd(static_cast<std::size_t>(w));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) row[static_cast<std::size_t>(x)] = tmp[static_cast<std::size_t>(y) * w + x];
        edt_1d(row, rowd, w);
        for (int x = 0; x < w; ++x) out[static_cast<std::size_t>(y) * w + x] = rowd[static_cast<std::size_t>(x)];
    }
    return out;
}

}  // namespace detail

/// Per-pixel Euclidean distance to the nearest pixel holding a different
/// non-ignore label; exact. A map with fewer than two distinct non-ignore
/// labels yields the +inf sentinel everywhere and single_label set.
inline DistanceField distance_transform(const LabelMap& labels) {
    int h = labels.height, w = labels.width;
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<std::int32_t> present;
    for (std::int32_t v : labels.values) {
        if (v == LabelMap::kIgnore) continue;
        bool known = false;
        for (std::int32_t p : present) known |= p == v;
        if (!known) present.push_back(v);
    }
    DistanceField field;
    if (present.size() < 2) {
        field.distance = Tensor::full({h, w}, inf);
        field.single_label = true;
        return field;
    }
    std::vector<double> dist(labels.size(), inf);
    std::vector<double> seed(labels.size());
    bool any_ignore = false;
    for (std::int32_t v : labels.values) any_ignore |= v == LabelMap::kIgnore;
    // For an ignore pixel, "different non-ignore label" means any real pixel.
    std::vector<std::int32_t> passes = present;
    if (any_ignore) passes.push_back(LabelMap::kIgnore);
    for (std::int32_t c : passes) {
        // sources: pixels of any *other* non-ignore label
        for (std::size_t i = 0; i < labels.size(); ++i) {
            std::int32_t v = labels.values[i];
            seed[i] = (v != c && v != LabelMap::kIgnore) ? 0.0 : detail::kEdtUnreachable;
        }
        std::vector<double> sq = detail::edt_2d(seed, h, w);
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels.values[i] == c) dist[i] = std::sqrt(sq[i]);
    }
    field.distance = Tensor::from_data(std::move(dist), {h, w});
    return field;
}

/// Boundary band (distance <= gamma) plus quantised interior directions from
/// the Sobel gradient of the distance map (pointing toward increasing
/// distance, i.e. away from the boundary into the region interior).
inline BoundaryTargets make_boundary_targets(const LabelMap& labels, double gamma = 2.0) {
    if (gamma <= 0.0) throw std::invalid_argument("make_boundary_targets: gamma must be positive");
    int h = labels.height, w = labels.width;
    BoundaryTargets t;
    t.height = h;
    t.width = w;
    t.boundary.assign(labels.size(), 0);
    t.direction.assign(labels.size(), -1);
    t.offsets.assign(labels.size(), {0, 0});

    DistanceField field = distance_transform(labels);
    if (field.single_label) return t;  // no boundary anywhere
    const auto& dist = field.distance.value();

    // Cap distances before the Sobel pass: inside the band (gamma + one Sobel
    // step) values are untouched, and +inf from ignore regions stays finite.
    double cap = gamma + 4.0;
    auto capped = [&](int y, int x) {
        y = std::min(std::max(y, 0), h - 1);
        x = std::min(std::max(x, 0), w - 1);
        return std::min(dist[static_cast<std::size_t>(y) * w + x], cap);
    };

    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            std::size_t i = static_cast<std::size_t>(y) * w + x;
            if (labels.values[i] == LabelMap::kIgnore) continue;
            if (!(dist[i] <= gamma)) continue;
            t.boundary[i] = 1;
            double gx = (capped(y - 1, x + 1) + 2.0 * capped(y, x + 1) + capped(y + 1, x + 1)) -
                        (capped(y - 1, x - 1) + 2.0 * capped(y, x - 1) + capped(y + 1, x - 1));
            double gy = (capped(y + 1, x - 1) + 2.0 * capped(y + 1, x) + capped(y + 1, x + 1)) -
                        (capped(y - 1, x - 1) + 2.0 * capped(y - 1, x) + capped(y - 1, x + 1));
            int bin = quantize_angle(std::atan2(-gy, gx));
            t.direction[i] = bin;
            t.offsets[i] = bin_to_offset(bin);
        }
    return t;
}

/// Shifts boundary pixels of a hard label map one step along the predicted
/// interior direction (categorical values, so nearest sampling).
inline LabelMap refine_labels(const LabelMap& coarse, const Tensor& boundary_prob,
                              const Tensor& direction_logits, double threshold = 0.5) {
    if (threshold <= 0.0 || threshold >= 1.0)
        throw std::invalid_argument("refine_labels: threshold must lie in (0,1)");
    int h = coarse.height, w = coarse.width;
    if (boundary_prob.rank() != 2 || boundary_prob.dim(0) != h || boundary_prob.dim(1) != w)
        throw std::invalid_argument("refine_labels: boundary_prob must be H x W");
    int m = direction_logits.dim(0);
    if (direction_logits.rank() != 3 || direction_logits.dim(1) != h ||
        direction_logits.dim(2) != w)
        throw std::invalid_argument("refine_labels: direction_logits must be m x H x W");

    const auto& bp = boundary_prob.value();
    const auto& dl = direction_logits.value();
    std::size_t hw = static_cast<std::size_t>(h) * w;

    std::vector<double> coords;
    std::vector<std::size_t> where;
    for (std::size_t i = 0; i < hw; ++i) {
        if (bp[i] <= threshold) continue;
        int best = 0;
        for (int b = 1; b < m; ++b)
            if (dl[static_cast<std::size_t>(b) * hw + i] > dl[static_cast<std::size_t>(best) * hw + i]) best = b;
        auto off = bin_to_offset(best, m);
        int y = static_cast<int>(i) / w, x = static_cast<int>(i) % w;
        coords.push_back(y + off[0]);
        coords.push_back(x + off[1]);
        where.push_back(i);
    }
    LabelMap refined = coarse;
    std::vector<std::int32_t> moved = nearest_sample(coarse, coords);
    for (std::size_t k = 0; k < where.size(); ++k) refined.values[where[k]] = moved[k];
    return refined;
}

/// Differentiable analogue for the refined cross-entropy term: logits are
/// gathered at p + offset (hard argmax offset, lattice-exact gather) and
/// blended with the in-place logits by the boundary probability.
inline Tensor refine_logits(const Tensor& seg_logits, const Tensor& boundary_prob,
                            const Tensor& direction_logits) {
    if (seg_logits.rank() != 3) throw std::invalid_argument("refine_logits: logits must be K x H x W");
    int h = seg_logits.dim(1), w = seg_logits.dim(2);
    if (boundary_prob.rank() != 2 || boundary_prob.dim(0) != h || boundary_prob.dim(1) != w)
        throw std::invalid_argument("refine_logits: boundary_prob must be H x W");
    if (direction_logits.rank() != 3 || direction_logits.dim(1) != h ||
        direction_logits.dim(2) != w)
        throw std::invalid_argument("refine_logits: direction_logits must be m x H x W");
    int m = direction_logits.dim(0);
    std::size_t hw = static_cast<std::size_t>(h) * w;
    const auto& dl = direction_logits.value();

    std::vector<double> coords(hw * 2);
    for (std::size_t i = 0; i < hw; ++i) {
        int best = 0;
        for (int b = 1; b < m; ++b)
            if (dl[static_cast<std::size_t>(b) * hw + i] > dl[static_cast<std::size_t>(best) * hw + i]) best = b;
        auto off = bin_to_offset(best, m);
        coords[2 * i] = static_cast<double>(static_cast<int>(i) / w + off[0]);
        coords[2 * i + 1] = static_cast<double>(static_cast<int>(i) % w + off[1]);
    }
    Tensor shifted_tokens =
        bilinear_sample(seg_logits, Tensor::from_data(std::move(coords), {static_cast<int>(hw), 2}));
    Tensor shifted = tokens_to_chw(shifted_tokens, h, w);
    return blend_chw(seg_logits, shifted, boundary_prob);
}

}  // namespace unept
