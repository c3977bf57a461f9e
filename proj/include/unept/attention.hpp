#pragma once

#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "rng.hpp"
#include "sampling.hpp"
#include "tensor.hpp"

// Attention operators: dense multi-head attention (the quadratic reference),
// single-scale sparse sampling attention, and multi-scale pyramid attention
// where each query attends to N sampled points per scale with offsets and
// weights projected from the query feature alone (no key features).

namespace unept {

namespace detail {

inline Tensor xavier_uniform(int rows, int cols, Prng& rng) {
    double limit = std::sqrt(6.0 / (rows + cols));
    std::vector<double> data(static_cast<std::size_t>(rows) * cols);
    for (double& v : data) v = rng.uniform(-limit, limit);
    return Tensor::param(std::move(data), {rows, cols});
}

}  // namespace detail

// ---------------------------------------------------------------------------
// parameter bundles

struct DenseAttentionParams {
    int heads = 0, d_model = 0, d_k = 0, d_v = 0;
    std::vector<Tensor> wq, wk, wv;  // per head: [d_model x d_k], values [d_model x d_v]
    Tensor wo;                       // [heads*d_v x d_model]

    static DenseAttentionParams init(int d_model, int heads, int d_k, int d_v, Prng& rng) {
        DenseAttentionParams p;
        p.heads = heads;
        p.d_model = d_model;
        p.d_k = d_k;
        p.d_v = d_v;
        for (int m = 0; m < heads; ++m) {
            p.wq.push_back(detail::xavier_uniform(d_model, d_k, rng));
            p.wk.push_back(detail::xavier_uniform(d_model, d_k, rng));
            p.wv.push_back(detail::xavier_uniform(d_model, d_v, rng));
        }
        p.wo = detail::xavier_uniform(heads * d_v, d_model, rng);
        return p;
    }

    void collect_parameters(const std::string& prefix, NamedParams& out) const {
        for (int m = 0; m < heads; ++m) {
            std::string h = prefix + ".h" + std::to_string(m);
            out.emplace_back(h + ".wq", wq[static_cast<std::size_t>(m)]);
            out.emplace_back(h + ".wk", wk[static_cast<std::size_t>(m)]);
            out.emplace_back(h + ".wv", wv[static_cast<std::size_t>(m)]);
        }
        out.emplace_back(prefix + ".wo", wo);
    }
};

struct SparseAttentionParams {
    int heads = 0, d_model = 0, d_k = 0, d_v = 0;
    int n_points = 0;  // N samples per scale
    int n_scales = 0;  // L
    std::vector<Tensor> wq, wv;     // per head
    std::vector<Tensor> u_wts;      // per head: [d_k x N*L]
    std::vector<Tensor> u_pos;      // per head: [d_k x 2*N*L]
    std::vector<Tensor> b_pos;      // per head: [2*N*L] additive offset bias
    Tensor wo;

    /// Offset projections start at zero with sampling points spread on a ray
    /// per head at radii 1..N (per-scale pixel units); weight projections
    /// start at zero, which yields uniform attention over the N*L samples.
    static SparseAttentionParams init(int d_model, int heads, int d_k, int d_v, int n_points,
                                      int n_scales, Prng& rng) {
        SparseAttentionParams p;
        p.heads = heads;
        p.d_model = d_model;
        p.d_k = d_k;
        p.d_v = d_v;
        p.n_points = n_points;
        p.n_scales = n_scales;
        int nl = n_points * n_scales;
        for (int m = 0; m < heads; ++m) {
            p.wq.push_back(detail::xavier_uniform(d_model, d_k, rng));
            p.wv.push_back(detail::xavier_uniform(d_model, d_v, rng));
            p.u_wts.push_back(Tensor::param(std::vector<double>(static_cast<std::size_t>(d_k) * nl, 0.0),
                                            {d_k, nl}));
            p.u_pos.push_back(Tensor::param(std::vector<double>(static_cast<std::size_t>(d_k) * 2 * nl, 0.0),
                                            {d_k, 2 * nl}));
            // The 0.35 rad twist keeps initial samples off lattice lines, where
            // bilinear interpolation is not differentiable.
            double angle = 2.0 * 3.14159265358979323846 * (m + 0.5) / heads + 0.35;
            std::vector<double> bias(static_cast<std::size_t>(2 * nl), 0.0);
            for (int l = 0; l < n_scales; ++l)
                for (int n = 0; n < n_points; ++n) {
                    double radius = n + 1.0;
                    bias[static_cast<std::size_t>(2 * (l * n_points + n))] = radius * std::sin(angle);
                    bias[static_cast<std::size_t>(2 * (l * n_points + n) + 1)] = radius * std::cos(angle);
                }
            p.b_pos.push_back(Tensor::param(std::move(bias), {2 * nl}));
        }
        p.wo = detail::xavier_uniform(heads * d_v, d_model, rng);
        return p;
    }

    void collect_parameters(const std::string& prefix, NamedParams& out) const {
        for (int m = 0; m < heads; ++m) {
            std::string h = prefix + ".h" + std::to_string(m);
            out.emplace_back(h + ".wq", wq[static_cast<std::size_t>(m)]);
            out.emplace_back(h + ".wv", wv[static_cast<std::size_t>(m)]);
            out.emplace_back(h + ".uw", u_wts[static_cast<std::size_t>(m)]);
            out.emplace_back(h + ".up", u_pos[static_cast<std::size_t>(m)]);
            out.emplace_back(h + ".bp", b_pos[static_cast<std::size_t>(m)]);
        }
        out.emplace_back(prefix + ".wo", wo);
    }
};

/// Flattened multi-scale feature maps, ordered fine to coarse. maps[l] holds
/// the tokens of scale l as [H_l*W_l x d_model].
struct PyramidFeatures {
    std::vector<Tensor> maps;
    std::vector<std::array<int, 2>> shapes;  // (H_l, W_l)
    std::vector<int> strides;
    int d_model = 0;

    int scales() const { return static_cast<int>(maps.size()); }

    std::size_t total_tokens() const {
        std::size_t n = 0;
        for (const auto& s : shapes) n += static_cast<std::size_t>(s[0]) * s[1];
        return n;
    }

    void validate() const {
        if (maps.size() != shapes.size())
            throw std::invalid_argument("PyramidFeatures: maps/shapes length mismatch");
        for (std::size_t l = 0; l < maps.size(); ++l) {
            if (maps[l].rank() != 2 || maps[l].dim(0) != shapes[l][0] * shapes[l][1] ||
                maps[l].dim(1) != d_model)
                throw std::invalid_argument("PyramidFeatures: map shape mismatch at scale " +
                                            std::to_string(l));
        }
    }
};

/// Learned per-scale embedding added (with the sine positional code) to
/// query tokens; one row per pyramid scale.
struct Encodings {
    Tensor scale_embedding;  // [L x d_model]

    static Encodings init(int n_scales, int d_model, Prng& rng) {
        Encodings e;
        std::vector<double> data(static_cast<std::size_t>(n_scales) * d_model);
        for (double& v : data) v = rng.normal(0.0, 0.02);
        e.scale_embedding = Tensor::param(std::move(data), {n_scales, d_model});
        return e;
    }
};

/// Optional capture of sampling internals, for visualisation and tests.
struct AttnTrace {
    int query = -1;               // capture sample coordinates for this query
    bool capture_weights = false;  // capture softmaxed weights for all queries
    struct Point {
        int scale, head;
        double y, x;  // pixel units of `scale`
    };
    std::vector<Point> points;
    std::vector<double> weights;  // per head, row-major [n_q x N*L]
};

// ---------------------------------------------------------------------------
// dense multi-head attention (the O(n^2) oracle and benchmark baseline)

namespace detail {

// Forward-only row-blocked evaluation; used when no tape is recording so the
// n x n attention matrix is never materialised in full.
inline Tensor dense_mha_blocked(const Tensor& x, const DenseAttentionParams& p) {
    int n = x.dim(0);
    int dm = p.d_model, dk = p.d_k, dv = p.d_v;
    std::vector<double> concat(static_cast<std::size_t>(n) * p.heads * dv);
    double inv_scale = 1.0 / std::sqrt(static_cast<double>(dm));
    const int block = 256;
    std::vector<double> q(static_cast<std::size_t>(n) * dk), k(q.size()),
        v(static_cast<std::size_t>(n) * dv);
    std::vector<double> logits(static_cast<std::size_t>(block) * n),
        chunk(static_cast<std::size_t>(block) * dv);
    for (int m = 0; m < p.heads; ++m) {
        gemm_nn(x.value().data(), p.wq[static_cast<std::size_t>(m)].value().data(), q.data(), n, dm, dk, false);
        gemm_nn(x.value().data(), p.wk[static_cast<std::size_t>(m)].value().data(), k.data(), n, dm, dk, false);
        gemm_nn(x.value().data(), p.wv[static_cast<std::size_t>(m)].value().data(), v.data(), n, dm, dv, false);
        for (int b0 = 0; b0 < n; b0 += block) {
            int bs = std::min(block, n - b0);
            gemm_nt(q.data() + static_cast<std::size_t>(b0) * dk, k.data(), logits.data(), bs, dk,
                    n, false);
            for (int r = 0; r < bs; ++r) {
                double* row = logits.data() + static_cast<std::size_t>(r) * n;
                double mx = row[0] * inv_scale;
                for (int j = 0; j < n; ++j) {
                    row[j] *= inv_scale;
                    mx = std::max(mx, row[j]);
                }
                double denom = 0.0;
                for (int j = 0; j < n; ++j) {
                    row[j] = std::exp(row[j] - mx);
                    denom += row[j];
                }
                for (int j = 0; j < n; ++j) row[j] /= denom;
            }
            gemm_nn(logits.data(), v.data(), chunk.data(), bs, n, dv, false);
            for (int r = 0; r < bs; ++r)
                for (int c = 0; c < dv; ++c)
                    concat[(static_cast<std::size_t>(b0) + r) * p.heads * dv + m * dv + c] =
                        chunk[static_cast<std::size_t>(r) * dv + c];
        }
    }
    std::vector<double> out(static_cast<std::size_t>(n) * dm);
    gemm_nn(concat.data(), p.wo.value().data(), out.data(), n, p.heads * dv, dm, false);
    return Tensor::from_data(std::move(out), {n, dm});
}

}  // namespace detail

/// Exact multi-head self-attention: softmax(Q Wq (K Wk)^T / sqrt(d_model)) V Wv
/// per head, heads concatenated and projected.
///
/// The logit scale divides by sqrt(d_model) (the token width), not
/// sqrt(d_k): the two names are sometimes used interchangeably for this
/// factor, but here they differ and d_model is the intended one. The sparse
/// path has no dot-product logits, so no scale factor at all.
inline Tensor dense_mha(const Tensor& x, const DenseAttentionParams& p) {
    if (x.rank() != 2 || x.dim(1) != p.d_model)
        throw std::invalid_argument("dense_mha: input must be n x d_model");
    if (x.dim(0) < 1) throw std::invalid_argument("dense_mha: empty sequence");
    if (p.wo.dim(0) != p.heads * p.d_v)
        throw std::invalid_argument("dense_mha: wo rows must equal heads*d_v");
    if (!grad_enabled()) return detail::dense_mha_blocked(x, p);

    double inv_scale = 1.0 / std::sqrt(static_cast<double>(p.d_model));
    std::vector<Tensor> heads;
    heads.reserve(static_cast<std::size_t>(p.heads));
    for (int m = 0; m < p.heads; ++m) {
        Tensor q = matmul(x, p.wq[static_cast<std::size_t>(m)]);
        Tensor k = matmul(x, p.wk[static_cast<std::size_t>(m)]);
        Tensor v = matmul(x, p.wv[static_cast<std::size_t>(m)]);
        Tensor attn = softmax(scale(matmul_nt(q, k), inv_scale), -1);
        heads.push_back(matmul(attn, v));
    }
    return matmul(concat_cols(heads), p.wo);
}

// ---------------------------------------------------------------------------
// sparse sampling attention

namespace detail {

/// Shared core: per head, attention weights softmax(q Wq Uwts) over the N*L
/// logits, sampling offsets q Wq Upos (+ ray bias) in per-scale pixel units,
/// output = sum of weighted bilinear samples of the projected value maps.
inline Tensor sampled_attention_core(const Tensor& query_tokens,
                                     const std::vector<Tensor>& value_tokens,
                                     const std::vector<std::array<int, 2>>& shapes,
                                     const std::vector<std::vector<double>>& base_px,
                                     const SparseAttentionParams& p, AttnTrace* trace) {
    int nq = query_tokens.dim(0);
    int n_pts = p.n_points, n_sc = p.n_scales;
    if (static_cast<int>(value_tokens.size()) != n_sc)
        throw std::invalid_argument("sampled attention: scale count mismatch");
    int nl = n_pts * n_sc;

    // Reference coordinates repeated per sample slot, one constant per scale.
    std::vector<Tensor> base;
    base.reserve(static_cast<std::size_t>(n_sc));
    for (int l = 0; l < n_sc; ++l) {
        if (static_cast<int>(base_px[static_cast<std::size_t>(l)].size()) != 2 * nq)
            throw std::invalid_argument("sampled attention: reference coords must be n_q x 2");
        std::vector<double> rep(static_cast<std::size_t>(nq) * n_pts * 2);
        const auto& b = base_px[static_cast<std::size_t>(l)];
        for (int q = 0; q < nq; ++q)
            for (int n = 0; n < n_pts; ++n) {
                rep[(static_cast<std::size_t>(q) * n_pts + n) * 2] = b[static_cast<std::size_t>(2 * q)];
                rep[(static_cast<std::size_t>(q) * n_pts + n) * 2 + 1] = b[static_cast<std::size_t>(2 * q) + 1];
            }
        base.push_back(Tensor::from_data(std::move(rep), {nq * n_pts, 2}));
    }

    std::vector<Tensor> heads;
    heads.reserve(static_cast<std::size_t>(p.heads));
    for (int m = 0; m < p.heads; ++m) {
        Tensor qp = matmul(query_tokens, p.wq[static_cast<std::size_t>(m)]);
        Tensor weights = softmax(matmul(qp, p.u_wts[static_cast<std::size_t>(m)]), -1);
        Tensor offsets = add_bias(matmul(qp, p.u_pos[static_cast<std::size_t>(m)]),
                                  p.b_pos[static_cast<std::size_t>(m)]);
        Tensor head_out;
        for (int l = 0; l < n_sc; ++l) {
            Tensor vmap = tokens_to_chw(matmul(value_tokens[static_cast<std::size_t>(l)],
                                               p.wv[static_cast<std::size_t>(m)]),
                                        shapes[static_cast<std::size_t>(l)][0],
                                        shapes[static_cast<std::size_t>(l)][1]);
            Tensor off = reshape(slice_cols(offsets, 2 * n_pts * l, 2 * n_pts), {nq * n_pts, 2});
            Tensor coords = add(off, base[static_cast<std::size_t>(l)]);
            Tensor sampled = bilinear_sample(vmap, coords);
            Tensor wl = slice_cols(weights, n_pts * l, n_pts);
            Tensor part = weighted_sample_sum(wl, sampled);
            head_out = head_out.defined() ? add(head_out, part) : part;
            if (trace && trace->query >= 0) {
                for (int n = 0; n < n_pts; ++n) {
                    std::size_t row = (static_cast<std::size_t>(trace->query) * n_pts + n) * 2;
                    trace->points.push_back(
                        {l, m, coords.value()[row], coords.value()[row + 1]});
                }
            }
        }
        if (trace && trace->capture_weights)
            trace->weights.insert(trace->weights.end(), weights.value().begin(),
                                  weights.value().end());
        heads.push_back(head_out);
    }
    (void)nl;
    return matmul(concat_cols(heads), p.wo);
}

}  // namespace detail

/// Single-scale sparse sampling attention. ref_coords are (row, col) in the
/// pixel space of value_map; params must carry n_scales == 1.
inline Tensor sparse_attention(const Tensor& query_tokens, const Tensor& value_map,
                               const Tensor& ref_coords, const SparseAttentionParams& p,
                               AttnTrace* trace = nullptr) {
    if (p.n_scales != 1)
        throw std::invalid_argument("sparse_attention: params must have a single scale");
    if (value_map.rank() != 3 || value_map.dim(0) != p.d_model)
        throw std::invalid_argument("sparse_attention: value map must be d_model x H x W");
    if (ref_coords.rank() != 2 || ref_coords.dim(1) != 2 ||
        ref_coords.dim(0) != query_tokens.dim(0))
        throw std::invalid_argument("sparse_attention: ref_coords must be n_q x 2");
    int h = value_map.dim(1), w = value_map.dim(2);
    std::vector<Tensor> tokens{chw_to_tokens(value_map)};
    std::vector<std::array<int, 2>> shapes{{h, w}};
    std::vector<std::vector<double>> base{ref_coords.value()};
    return detail::sampled_attention_core(query_tokens, tokens, shapes, base, p, trace);
}

/// Multi-scale pyramid attention. Each query attends to N sampled points on
/// every scale; the softmax runs jointly over all N*L logits. Normalised
/// (row, col) references in [0,1]^2 map to scale l pixels as c = r*extent-0.5.
inline Tensor pyramid_attention(const Tensor& query_tokens, const PyramidFeatures& pyramid,
                                const Tensor& ref_coords_norm, const SparseAttentionParams& p,
                                AttnTrace* trace = nullptr) {
    pyramid.validate();
    if (pyramid.scales() < 1) throw std::invalid_argument("pyramid_attention: no scales");
    if (pyramid.scales() != p.n_scales)
        throw std::invalid_argument("pyramid_attention: scale count does not match params");
    if (ref_coords_norm.rank() != 2 || ref_coords_norm.dim(1) != 2 ||
        ref_coords_norm.dim(0) != query_tokens.dim(0))
        throw std::invalid_argument("pyramid_attention: ref_coords must be n_q x 2");
    int nq = query_tokens.dim(0);
    const auto& rv = ref_coords_norm.value();
    std::vector<std::vector<double>> base(static_cast<std::size_t>(pyramid.scales()));
    for (int l = 0; l < pyramid.scales(); ++l) {
        auto [hl, wl] = pyramid.shapes[static_cast<std::size_t>(l)];
        auto& b = base[static_cast<std::size_t>(l)];
        b.resize(static_cast<std::size_t>(nq) * 2);
        for (int q = 0; q < nq; ++q) {
            b[static_cast<std::size_t>(2 * q)] = rv[static_cast<std::size_t>(2 * q)] * hl - 0.5;
            b[static_cast<std::size_t>(2 * q) + 1] = rv[static_cast<std::size_t>(2 * q) + 1] * wl - 0.5;
        }
    }
    return detail::sampled_attention_core(query_tokens, pyramid.maps, pyramid.shapes, base, p,
                                          trace);
}

// ---------------------------------------------------------------------------
// encodings

/// 2-D sine/cosine positional grid: the first d_model/2 channels encode the
/// row index, the rest the column index, alternating sin/cos with geometric
/// frequencies of base 10000. Deterministic; not a parameter.
inline Tensor sine_positional_encoding(int h, int w, int d_model) {
    if (d_model % 4 != 0)
        throw std::invalid_argument("sine_positional_encoding: d_model must be divisible by 4");
    int half = d_model / 2;
    std::vector<double> freqs(static_cast<std::size_t>(half / 2));
    for (int k = 0; k < half / 2; ++k)
        freqs[static_cast<std::size_t>(k)] = std::pow(10000.0, -2.0 * k / half);
    std::vector<double> out(static_cast<std::size_t>(h) * w * d_model);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            double* row = out.data() + (static_cast<std::size_t>(i) * w + j) * d_model;
            for (int k = 0; k < half / 2; ++k) {
                row[2 * k] = std::sin(i * freqs[static_cast<std::size_t>(k)]);
                row[2 * k + 1] = std::cos(i * freqs[static_cast<std::size_t>(k)]);
                row[half + 2 * k] = std::sin(j * freqs[static_cast<std::size_t>(k)]);
                row[half + 2 * k + 1] = std::cos(j * freqs[static_cast<std::size_t>(k)]);
            }
        }
    return Tensor::from_data(std::move(out), {h * w, d_model});
}

/// Adds positional + scale encodings to every token of every scale. Applied
/// to queries only; values stay untouched.
inline PyramidFeatures add_scale_encoding(const PyramidFeatures& pyramid, const Encodings& enc) {
    pyramid.validate();
    if (enc.scale_embedding.dim(0) != pyramid.scales())
        throw std::invalid_argument("add_scale_encoding: embedding rows must equal scale count");
    PyramidFeatures out = pyramid;
    for (int l = 0; l < pyramid.scales(); ++l) {
        auto [hl, wl] = pyramid.shapes[static_cast<std::size_t>(l)];
        Tensor pos = sine_positional_encoding(hl, wl, pyramid.d_model);
        Tensor row = reshape(slice_rows(enc.scale_embedding, l, 1), {pyramid.d_model});
        out.maps[static_cast<std::size_t>(l)] =
            add_bias(add(pyramid.maps[static_cast<std::size_t>(l)], pos), row);
    }
    return out;
}

/// Normalised centre coordinates ((i+0.5)/H, (j+0.5)/W) for every token of
/// every scale, concatenated in pyramid order.
inline Tensor pyramid_reference_coords(const PyramidFeatures& pyramid) {
    std::vector<double> coords;
    coords.reserve(pyramid.total_tokens() * 2);
    for (int l = 0; l < pyramid.scales(); ++l) {
        auto [hl, wl] = pyramid.shapes[static_cast<std::size_t>(l)];
        for (int i = 0; i < hl; ++i)
            for (int j = 0; j < wl; ++j) {
                coords.push_back((i + 0.5) / hl);
                coords.push_back((j + 0.5) / wl);
            }
    }
    int n = static_cast<int>(coords.size() / 2);
    return Tensor::from_data(std::move(coords), {n, 2});
}

}  // namespace unept
