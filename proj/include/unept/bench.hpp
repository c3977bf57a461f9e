#pragma once

#include <algorithm>
#include <chrono>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "attention.hpp"
#include "model.hpp"
#include "rng.hpp"

// Dense vs sparse attention timing and analytic live-buffer estimates.
// Operationalises the O(n^2) -> O(kn) complexity claim: dense time roughly
// quadruples per doubling of n, the sparse path roughly doubles, and the
// sparse buffer estimate stays proportional to n.

namespace unept {

struct BenchRow {
    int n = 0;
    double dense_ms = 0, sparse_ms = 0;
    double dense_bytes = 0, sparse_bytes = 0;
};

namespace detail {

inline std::pair<int, int> bench_grid(int n) {
    int h = 1;
    while (2 * h * 2 * h <= n) h *= 2;
    if (h < 8 || n % h != 0)
        throw std::invalid_argument("bench: sizes must factor into a power-of-two grid (e.g. 4096, 8192, 16384)");
    return {h, n / h};
}

template <typename F>
double time_median_ms(F f, int reps) {
    f();  // warmup
    std::vector<double> times;
    for (int r = 0; r < reps; ++r) {
        auto t0 = std::chrono::steady_clock::now();
        f();
        times.push_back(
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                .count());
    }
    std::sort(times.begin(), times.end());
    return times[times.size() / 2];
}

}  // namespace detail

inline std::vector<BenchRow> bench_attention(const EPTConfig& cfg, const std::vector<int>& sizes,
                                             int reps = 3) {
    for (std::size_t i = 1; i < sizes.size(); ++i)
        if (sizes[i] <= sizes[i - 1])
            throw std::invalid_argument("bench: sizes must be ascending");
    NoGradGuard ng;
    Prng rng = Prng::keyed(7, "bench");
    auto dense_params = DenseAttentionParams::init(cfg.d_model, cfg.heads, cfg.d_k, cfg.d_v, rng);
    auto sparse_params = SparseAttentionParams::init(cfg.d_model, cfg.heads, cfg.d_k, cfg.d_v,
                                                     cfg.n_points, cfg.n_scales, rng);
    for (int m = 0; m < cfg.heads; ++m) {
        for (double& v : sparse_params.u_wts[static_cast<std::size_t>(m)].value_mut()) v = rng.uniform(-0.2, 0.2);
        for (double& v : sparse_params.u_pos[static_cast<std::size_t>(m)].value_mut()) v = rng.uniform(-0.2, 0.2);
    }

    std::vector<BenchRow> rows;
    for (int n : sizes) {
        auto [h, w] = detail::bench_grid(n);
        std::vector<double> xd(static_cast<std::size_t>(n) * cfg.d_model);
        for (double& v : xd) v = rng.uniform(-1, 1);
        Tensor tokens = Tensor::from_data(std::move(xd), {n, cfg.d_model});

        PyramidFeatures pyr;
        pyr.d_model = cfg.d_model;
        std::vector<double> ref(static_cast<std::size_t>(n) * 2);
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                ref[(static_cast<std::size_t>(i) * w + j) * 2] = (i + 0.5) / h;
                ref[(static_cast<std::size_t>(i) * w + j) * 2 + 1] = (j + 0.5) / w;
            }
        Tensor ref_norm = Tensor::from_data(std::move(ref), {n, 2});
        int hl = h, wl = w;
        for (int l = 0; l < cfg.n_scales; ++l) {
            if (hl % 1 != 0 || hl < 2 || wl < 2)
                throw std::invalid_argument("bench: size too small for the scale count");
            std::vector<double> md(static_cast<std::size_t>(hl) * wl * cfg.d_model);
            for (double& v : md) v = rng.uniform(-1, 1);
            pyr.maps.push_back(Tensor::from_data(std::move(md), {hl * wl, cfg.d_model}));
            pyr.shapes.push_back({hl, wl});
            pyr.strides.push_back(8 << l);
            hl /= 2;
            wl /= 2;
        }

        BenchRow row;
        row.n = n;
        row.dense_ms = detail::time_median_ms([&]() { (void)dense_mha(tokens, dense_params); }, reps);
        row.sparse_ms = detail::time_median_ms(
            [&]() { (void)pyramid_attention(tokens, pyr, ref_norm, sparse_params); }, reps);
        // Analytic live-buffer estimates: dense materialises one n x n weight
        // matrix per head; the sparse path holds (d_v samples + weight + 2
        // offsets) per query, head and sampling slot.
        row.dense_bytes = 8.0 * cfg.heads * static_cast<double>(n) * n;
        row.sparse_bytes = 8.0 * cfg.heads * static_cast<double>(n) * cfg.n_points *
                           cfg.n_scales * (cfg.d_v + 3);
        rows.push_back(row);
    }
    return rows;
}

inline std::string bench_csv(const std::vector<BenchRow>& rows) {
    std::ostringstream out;
    out << "n,dense_ms,sparse_ms,dense_bytes,sparse_bytes\n";
    for (const auto& r : rows) {
        char line[256];
        std::snprintf(line, sizeof(line), "%d,%.3f,%.3f,%.0f,%.0f\n", r.n, r.dense_ms,
                      r.sparse_ms, r.dense_bytes, r.sparse_bytes);
        out << line;
    }
    return out.str();
}

}  // namespace unept
