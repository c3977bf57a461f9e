#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "attention.hpp"
#include "conv.hpp"
#include "rng.hpp"
#include "sampling.hpp"
#include "tensor.hpp"

// The full network: toy convolutional backbone emitting a three-scale
// pyramid, transformer encoder/decoder built on sparse sampling attention,
// and a spatial branch providing dynamic context queries plus boundary and
// direction heads.

namespace unept {

struct EPTConfig {
    int d_model = 256;
    int heads = 8;  // M
    int d_k = 32;
    int d_v = 32;
    int n_points = 16;  // N
    int n_scales = 3;   // L
    int encoder_layers = 2;
    int decoder_layers = 2;
    int ff_dim = 2048;
    double dropout = 0.1;
    int direction_bins = 8;  // m
    int num_classes = 4;     // K
    std::array<int, 3> strides{8, 16, 32};
    std::array<int, 2> stem_widths{16, 32};
    std::array<int, 3> backbone_widths{64, 128, 256};
    std::array<int, 3> spatial_widths{64, 128, 256};
    int head_width = 256;

    void validate() const {
        if (d_model != heads * d_v)
            throw std::invalid_argument("EPTConfig: d_model must equal heads*d_v");
        if (d_model % 4 != 0) throw std::invalid_argument("EPTConfig: d_model must be divisible by 4");
        if (n_scales < 1 || n_scales > 3)
            throw std::invalid_argument("EPTConfig: n_scales must be 1..3");
        if (n_points < 1) throw std::invalid_argument("EPTConfig: n_points must be positive");
        if (direction_bins != 8)
            throw std::invalid_argument("EPTConfig: direction_bins must be 8");
        if (num_classes < 2) throw std::invalid_argument("EPTConfig: need at least two classes");
        if (strides != std::array<int, 3>{8, 16, 32})
            throw std::invalid_argument("EPTConfig: strides are fixed at 8/16/32");
    }

    /// Thin configuration for finite-difference verification: full depth and
    /// every architectural element, but narrow enough to probe every weight.
    static EPTConfig reduced_gradcheck() {
        EPTConfig c;
        c.d_model = 32;
        c.heads = 2;
        c.d_k = 16;
        c.d_v = 16;
        c.n_points = 4;
        c.ff_dim = 64;
        c.num_classes = 3;
        c.stem_widths = {4, 8};
        c.backbone_widths = {8, 16, 32};
        c.spatial_widths = {8, 16, 32};
        c.head_width = 32;
        return c;
    }
};

struct ForwardCtx {
    bool training = false;
    Prng* dropout_rng = nullptr;
    double dropout_rate = 0.0;
    AttnTrace* trace = nullptr;  // filled by the last decoder cross-attention
};

namespace detail {

inline Tensor ctx_dropout(const Tensor& x, const ForwardCtx& ctx) {
    if (!ctx.training || ctx.dropout_rate <= 0.0 || ctx.dropout_rng == nullptr) return x;
    return dropout(x, ctx.dropout_rate, *ctx.dropout_rng, true);
}

inline const Tensor& cached_positional(int h, int w, int d_model) {
    thread_local std::map<std::array<int, 3>, Tensor> cache;
    auto key = std::array<int, 3>{h, w, d_model};
    auto it = cache.find(key);
    if (it == cache.end()) it = cache.emplace(key, sine_positional_encoding(h, w, d_model)).first;
    return it->second;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// building blocks

struct Linear {
    Tensor w;  // [in x out]
    Tensor b;  // [out]

    static Linear init(int in, int out, Prng& rng) {
        Linear l;
        l.w = detail::xavier_uniform(in, out, rng);
        l.b = Tensor::param(std::vector<double>(static_cast<std::size_t>(out), 0.0), {out});
        return l;
    }

    Tensor operator()(const Tensor& x) const { return add_bias(matmul(x, w), b); }

    void collect(const std::string& prefix, NamedParams& out) const {
        out.emplace_back(prefix + ".w", w);
        out.emplace_back(prefix + ".b", b);
    }
};

struct LayerNormParams {
    Tensor gain, bias;

    static LayerNormParams init(int d) {
        LayerNormParams n;
        n.gain = Tensor::param(std::vector<double>(static_cast<std::size_t>(d), 1.0), {d});
        n.bias = Tensor::param(std::vector<double>(static_cast<std::size_t>(d), 0.0), {d});
        return n;
    }

    Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }

    void collect(const std::string& prefix, NamedParams& out) const {
        out.emplace_back(prefix + ".gain", gain);
        out.emplace_back(prefix + ".bias", bias);
    }
};

/// Conv -> channel layer norm -> ReLU. Channel norm stands in for the
/// paper's batch norm; batch statistics are meaningless at batch sizes 1-4.
struct ConvBlock {
    Tensor w, b;
    LayerNormParams norm;
    int stride = 1, pad = 0;

    static ConvBlock init(int cin, int cout, int k, int stride, int pad, Prng& rng) {
        ConvBlock c;
        c.stride = stride;
        c.pad = pad;
        int fan_in = cin * k * k, fan_out = cout * k * k;
        double limit = std::sqrt(6.0 / (fan_in + fan_out));
        std::vector<double> kw(static_cast<std::size_t>(cout) * cin * k * k);
        for (double& v : kw) v = rng.uniform(-limit, limit);
        c.w = Tensor::param(std::move(kw), {cout, cin, k, k});
        c.b = Tensor::param(std::vector<double>(static_cast<std::size_t>(cout), 0.0), {cout});
        c.norm = LayerNormParams::init(cout);
        return c;
    }

    Tensor operator()(const Tensor& x) const {
        Tensor y = add_channel_bias(conv2d(x, w, stride, pad), b);
        int h = y.dim(1), wd = y.dim(2);
        Tensor t = relu(layer_norm(chw_to_tokens(y), norm.gain, norm.bias));
        return tokens_to_chw(t, h, wd);
    }

    void collect(const std::string& prefix, NamedParams& out) const {
        out.emplace_back(prefix + ".w", w);
        out.emplace_back(prefix + ".b", b);
        norm.collect(prefix + ".ln", out);
    }
};

struct FeedForward {
    Linear l1, l2;

    static FeedForward init(int d_model, int hidden, Prng& rng) {
        return FeedForward{Linear::init(d_model, hidden, rng), Linear::init(hidden, d_model, rng)};
    }

    Tensor operator()(const Tensor& x, const ForwardCtx& ctx) const {
        return l2(detail::ctx_dropout(relu(l1(x)), ctx));
    }

    void collect(const std::string& prefix, NamedParams& out) const {
        l1.collect(prefix + ".l1", out);
        l2.collect(prefix + ".l2", out);
    }
};

// ---------------------------------------------------------------------------
// backbone

/// Five stride-2 conv blocks; taps at strides 8/16/32 are projected to
/// d_model and flattened into the pyramid (fine to coarse).
struct ToyBackbone {
    std::vector<ConvBlock> convs;     // 5 blocks
    std::vector<Linear> projections;  // one per scale
    int d_model = 0;

    static ToyBackbone init(const EPTConfig& cfg, Prng& rng) {
        ToyBackbone b;
        b.d_model = cfg.d_model;
        int widths[6] = {3,
                         cfg.stem_widths[0],
                         cfg.stem_widths[1],
                         cfg.backbone_widths[0],
                         cfg.backbone_widths[1],
                         cfg.backbone_widths[2]};
        for (int i = 0; i < 5; ++i)
            b.convs.push_back(ConvBlock::init(widths[i], widths[i + 1], 3, 2, 1, rng));
        for (int l = 0; l < 3; ++l)
            b.projections.push_back(Linear::init(cfg.backbone_widths[static_cast<std::size_t>(l)],
                                                 cfg.d_model, rng));
        return b;
    }

    PyramidFeatures forward(const Tensor& image, int n_scales) const {
        if (image.rank() != 3 || image.dim(0) != 3)
            throw std::invalid_argument("backbone: image must be 3 x H x W");
        if (image.dim(1) % 32 != 0 || image.dim(2) % 32 != 0)
            throw std::invalid_argument("backbone: image extents must be multiples of 32");
        PyramidFeatures pyr;
        pyr.d_model = d_model;
        Tensor x = image;
        for (int i = 0; i < 5; ++i) {
            x = convs[static_cast<std::size_t>(i)](x);
            int scale = i - 2;  // taps after blocks 2, 3, 4
            if (scale >= 0 && scale < n_scales) {
                pyr.maps.push_back(projections[static_cast<std::size_t>(scale)](chw_to_tokens(x)));
                pyr.shapes.push_back({x.dim(1), x.dim(2)});
                pyr.strides.push_back(8 << scale);
            }
        }
        return pyr;
    }

    void collect(const std::string& prefix, NamedParams& out) const {
        for (std::size_t i = 0; i < convs.size(); ++i)
            convs[i].collect(prefix + ".conv" + std::to_string(i), out);
        for (std::size_t i = 0; i < projections.size(); ++i)
            projections[i].collect(prefix + ".proj" + std::to_string(i), out);
    }
};

// ---------------------------------------------------------------------------
// spatial branch

struct SpatialBranchOut {
    Tensor context_queries;   // [(H/8 * W/8) x d_model]
    Tensor boundary_logits;   // [1 x H x W]
    Tensor direction_logits;  // [m x H x W]
};

/// Three 3x3 stride-2 conv blocks (output stride 8). Context queries come
/// from the intermediate (second) block, pooled to the stride-8 grid and
/// projected to d_model; both heads read the third block.
struct SpatialBranch {
    ConvBlock conv0, conv1, conv2;
    Linear query_proj;
    ConvBlock boundary_block, direction_block;  // 1x1, head_width channels
    Linear boundary_cls, direction_cls;
    int direction_bins = 8;

    static SpatialBranch init(const EPTConfig& cfg, Prng& rng) {
        SpatialBranch s;
        s.direction_bins = cfg.direction_bins;
        s.conv0 = ConvBlock::init(3, cfg.spatial_widths[0], 3, 2, 1, rng);
        s.conv1 = ConvBlock::init(cfg.spatial_widths[0], cfg.spatial_widths[1], 3, 2, 1, rng);
        s.conv2 = ConvBlock::init(cfg.spatial_widths[1], cfg.spatial_widths[2], 3, 2, 1, rng);
        s.query_proj = Linear::init(cfg.spatial_widths[1], cfg.d_model, rng);
        s.boundary_block = ConvBlock::init(cfg.spatial_widths[2], cfg.head_width, 1, 1, 0, rng);
        s.direction_block = ConvBlock::init(cfg.spatial_widths[2], cfg.head_width, 1, 1, 0, rng);
        s.boundary_cls = Linear::init(cfg.head_width, 1, rng);
        s.direction_cls = Linear::init(cfg.head_width, cfg.direction_bins, rng);
        return s;
    }

    SpatialBranchOut forward(const Tensor& image) const {
        if (image.dim(1) % 8 != 0 || image.dim(2) % 8 != 0)
            throw std::invalid_argument("spatial branch: image extents must be multiples of 8");
        Tensor f2 = conv0(image);  // stride 2
        Tensor f4 = conv1(f2);     // stride 4
        Tensor f8 = conv2(f4);     // stride 8
        int h8 = f8.dim(1), w8 = f8.dim(2);

        Tensor pooled = avg_pool2(f4);  // intermediate feature onto the stride-8 grid
        SpatialBranchOut out;
        out.context_queries = query_proj(chw_to_tokens(pooled));

        Tensor bfeat = boundary_block(f8);
        out.boundary_logits =
            upsample_bilinear(tokens_to_chw(boundary_cls(chw_to_tokens(bfeat)), h8, w8), 8);
        Tensor dfeat = direction_block(f8);
        out.direction_logits =
            upsample_bilinear(tokens_to_chw(direction_cls(chw_to_tokens(dfeat)), h8, w8), 8);
        return out;
    }

    void collect(const std::string& prefix, NamedParams& out) const {
        conv0.collect(prefix + ".conv0", out);
        conv1.collect(prefix + ".conv1", out);
        conv2.collect(prefix + ".conv2", out);
        query_proj.collect(prefix + ".query_proj", out);
        boundary_block.collect(prefix + ".bhead.block", out);
        boundary_cls.collect(prefix + ".bhead.cls", out);
        direction_block.collect(prefix + ".dhead.block", out);
        direction_cls.collect(prefix + ".dhead.cls", out);
    }
};

// ---------------------------------------------------------------------------
// transformer layers (pre-norm residual: x + sublayer(norm(x)), so zeroed
// sublayers leave the sequence untouched)

namespace detail {

inline std::vector<Tensor> split_scales(const Tensor& seq,
                                        const std::vector<std::array<int, 2>>& shapes) {
    std::vector<Tensor> maps;
    int offset = 0;
    for (const auto& s : shapes) {
        int len = s[0] * s[1];
        maps.push_back(slice_rows(seq, offset, len));
        offset += len;
    }
    return maps;
}

}  // namespace detail

struct EncoderLayer {
    SparseAttentionParams attn;  // n_scales = L
    FeedForward ff;
    LayerNormParams ln_attn, ln_ff;

    static EncoderLayer init(const EPTConfig& cfg, Prng& rng) {
        EncoderLayer l;
        l.attn = SparseAttentionParams::init(cfg.d_model, cfg.heads, cfg.d_k, cfg.d_v,
                                             cfg.n_points, cfg.n_scales, rng);
        l.ff = FeedForward::init(cfg.d_model, cfg.ff_dim, rng);
        l.ln_attn = LayerNormParams::init(cfg.d_model);
        l.ln_ff = LayerNormParams::init(cfg.d_model);
        return l;
    }

    /// seq: [L_ms x d_model]; enc_tokens: positional+scale code per token;
    /// ref_norm: per-token normalised coordinates.
    Tensor forward(const Tensor& seq, const std::vector<std::array<int, 2>>& shapes,
                   const std::vector<int>& strides, const Tensor& enc_tokens,
                   const Tensor& ref_norm, const ForwardCtx& ctx) const {
        Tensor h = ln_attn(seq);
        PyramidFeatures values;
        values.d_model = seq.dim(1);
        values.maps = detail::split_scales(h, shapes);
        values.shapes = shapes;
        values.strides = strides;
        Tensor q = add(h, enc_tokens);
        Tensor attn_out = pyramid_attention(q, values, ref_norm, attn);
        Tensor x = add(seq, detail::ctx_dropout(attn_out, ctx));
        return add(x, detail::ctx_dropout(ff(ln_ff(x), ctx), ctx));
    }

    void collect(const std::string& prefix, NamedParams& out) const {
        attn.collect_parameters(prefix + ".attn", out);
        ff.collect(prefix + ".ff", out);
        ln_attn.collect(prefix + ".ln_attn", out);
        ln_ff.collect(prefix + ".ln_ff", out);
    }
};

struct DecoderLayer {
    SparseAttentionParams self_attn;   // single scale: the stride-8 query grid
    SparseAttentionParams cross_attn;  // samples all L scales of x_enc
    FeedForward ff;
    LayerNormParams ln_self, ln_cross, ln_ff;

    static DecoderLayer init(const EPTConfig& cfg, Prng& rng) {
        DecoderLayer l;
        l.self_attn = SparseAttentionParams::init(cfg.d_model, cfg.heads, cfg.d_k, cfg.d_v,
                                                  cfg.n_points, 1, rng);
        l.cross_attn = SparseAttentionParams::init(cfg.d_model, cfg.heads, cfg.d_k, cfg.d_v,
                                                   cfg.n_points, cfg.n_scales, rng);
        l.ff = FeedForward::init(cfg.d_model, cfg.ff_dim, rng);
        l.ln_self = LayerNormParams::init(cfg.d_model);
        l.ln_cross = LayerNormParams::init(cfg.d_model);
        l.ln_ff = LayerNormParams::init(cfg.d_model);
        return l;
    }

    Tensor forward(const Tensor& queries, const PyramidFeatures& x_enc, int h8, int w8,
                   const Tensor& pos8, const Tensor& ref_px8, const Tensor& ref_norm8,
                   const ForwardCtx& ctx, AttnTrace* trace) const {
        // self-attention over the stride-8 grid
        Tensor h = ln_self(queries);
        Tensor q = add(h, pos8);
        Tensor self_out =
            sparse_attention(q, tokens_to_chw(h, h8, w8), ref_px8, self_attn);
        Tensor x = add(queries, detail::ctx_dropout(self_out, ctx));
        // cross-attention: decoder output is the query, x_enc the value
        Tensor hc = ln_cross(x);
        Tensor qc = add(hc, pos8);
        Tensor cross_out = pyramid_attention(qc, x_enc, ref_norm8, cross_attn, trace);
        x = add(x, detail::ctx_dropout(cross_out, ctx));
        return add(x, detail::ctx_dropout(ff(ln_ff(x), ctx), ctx));
    }

    void collect(const std::string& prefix, NamedParams& out) const {
        self_attn.collect_parameters(prefix + ".self", out);
        cross_attn.collect_parameters(prefix + ".cross", out);
        ff.collect(prefix + ".ff", out);
        ln_self.collect(prefix + ".ln_self", out);
        ln_cross.collect(prefix + ".ln_cross", out);
        ln_ff.collect(prefix + ".ln_ff", out);
    }
};

// ---------------------------------------------------------------------------
// full network

struct ModelOutputs {
    Tensor seg_logits;        // [K x H x W]
    Tensor boundary_logits;   // [1 x H x W]
    Tensor direction_logits;  // [m x H x W]
};

class UNEPT {
public:
    EPTConfig cfg;
    ToyBackbone backbone;
    SpatialBranch spatial;
    Encodings encodings;
    std::vector<EncoderLayer> encoder;
    std::vector<DecoderLayer> decoder;
    Linear classifier;  // d_model -> K, applied per stride-8 token

    static UNEPT init(const EPTConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        UNEPT m;
        m.cfg = cfg;
        Prng rng = Prng::keyed(seed, "init");
        m.backbone = ToyBackbone::init(cfg, rng);
        m.spatial = SpatialBranch::init(cfg, rng);
        m.encodings = Encodings::init(cfg.n_scales, cfg.d_model, rng);
        for (int i = 0; i < cfg.encoder_layers; ++i) m.encoder.push_back(EncoderLayer::init(cfg, rng));
        for (int i = 0; i < cfg.decoder_layers; ++i) m.decoder.push_back(DecoderLayer::init(cfg, rng));
        m.classifier = Linear::init(cfg.d_model, cfg.num_classes, rng);
        return m;
    }

    /// Positional + scale code for each pyramid token, on tape through the
    /// learned scale embedding.
    Tensor pyramid_encoding_tokens(const std::vector<std::array<int, 2>>& shapes) const {
        std::vector<Tensor> parts;
        for (int l = 0; l < static_cast<int>(shapes.size()); ++l) {
            const Tensor& pos = detail::cached_positional(shapes[static_cast<std::size_t>(l)][0],
                                                          shapes[static_cast<std::size_t>(l)][1],
                                                          cfg.d_model);
            Tensor row = reshape(slice_rows(encodings.scale_embedding, l, 1), {cfg.d_model});
            parts.push_back(add_bias(pos, row));
        }
        return concat_rows(parts);
    }

    Tensor encoder_forward(const PyramidFeatures& pyramid, const ForwardCtx& ctx) const {
        pyramid.validate();
        Tensor seq = concat_rows(pyramid.maps);
        Tensor enc_tokens = pyramid_encoding_tokens(pyramid.shapes);
        Tensor ref = pyramid_reference_coords(pyramid);
        for (const auto& layer : encoder)
            seq = layer.forward(seq, pyramid.shapes, pyramid.strides, enc_tokens, ref, ctx);
        return seq;
    }

    Tensor decoder_forward(const Tensor& context_queries, const Tensor& x_enc,
                           const std::vector<std::array<int, 2>>& shapes,
                           const std::vector<int>& strides, int h8, int w8,
                           const ForwardCtx& ctx) const {
        if (context_queries.dim(0) != h8 * w8)
            throw std::invalid_argument("decoder: query count must match the stride-8 grid");
        PyramidFeatures enc_pyr;
        enc_pyr.d_model = cfg.d_model;
        enc_pyr.maps = detail::split_scales(x_enc, shapes);
        enc_pyr.shapes = shapes;
        enc_pyr.strides = strides;

        const Tensor& pos8 = detail::cached_positional(h8, w8, cfg.d_model);
        std::vector<double> px(static_cast<std::size_t>(h8) * w8 * 2),
            norm(static_cast<std::size_t>(h8) * w8 * 2);
        for (int i = 0; i < h8; ++i)
            for (int j = 0; j < w8; ++j) {
                std::size_t t = (static_cast<std::size_t>(i) * w8 + j) * 2;
                px[t] = i;
                px[t + 1] = j;
                norm[t] = (i + 0.5) / h8;
                norm[t + 1] = (j + 0.5) / w8;
            }
        Tensor ref_px = Tensor::from_data(std::move(px), {h8 * w8, 2});
        Tensor ref_norm = Tensor::from_data(std::move(norm), {h8 * w8, 2});

        Tensor x = context_queries;
        for (std::size_t i = 0; i < decoder.size(); ++i) {
            AttnTrace* trace = (i + 1 == decoder.size()) ? ctx.trace : nullptr;
            x = decoder[i].forward(x, enc_pyr, h8, w8, pos8, ref_px, ref_norm, ctx, trace);
        }
        return x;
    }

    ModelOutputs forward(const Tensor& image, const ForwardCtx& ctx) const {
        PyramidFeatures pyramid = backbone.forward(image, cfg.n_scales);
        Tensor x_enc = encoder_forward(pyramid, ctx);
        SpatialBranchOut sp = spatial.forward(image);
        int h8 = image.dim(1) / 8, w8 = image.dim(2) / 8;
        Tensor dec = decoder_forward(sp.context_queries, x_enc, pyramid.shapes, pyramid.strides,
                                     h8, w8, ctx);
        Tensor seg8 = tokens_to_chw(classifier(dec), h8, w8);
        ModelOutputs out;
        out.seg_logits = upsample_bilinear(seg8, 8);
        out.boundary_logits = sp.boundary_logits;
        out.direction_logits = sp.direction_logits;
        return out;
    }

    NamedParams named_parameters() const {
        NamedParams out;
        backbone.collect("backbone", out);
        spatial.collect("spatial", out);
        out.emplace_back("enc.scale_embedding", encodings.scale_embedding);
        for (std::size_t i = 0; i < encoder.size(); ++i)
            encoder[i].collect("enc" + std::to_string(i), out);
        for (std::size_t i = 0; i < decoder.size(); ++i)
            decoder[i].collect("dec" + std::to_string(i), out);
        classifier.collect("classifier", out);
        return out;
    }
};

}  // namespace unept
