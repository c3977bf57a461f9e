#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "boundary.hpp"
#include "checkpoint.hpp"
#include "config.hpp"
#include "data.hpp"
#include "gradcheck.hpp"
#include "model.hpp"
#include "training.hpp"

// Training / evaluation drivers shared by the CLI and the acceptance suite.

namespace unept {

// ---------------------------------------------------------------------------
// evaluation

struct EvalReport {
    Metrics overall, band;
    bool has_refined = false;
    Metrics overall_refined, band_refined;
};

inline LabelMap argmax_labels(const Tensor& logits) {
    int k = logits.dim(0), h = logits.dim(1), w = logits.dim(2);
    std::size_t hw = static_cast<std::size_t>(h) * w;
    LabelMap out(h, w);
    const auto& lv = logits.value();
    for (std::size_t i = 0; i < hw; ++i) {
        int best = 0;
        for (int c = 1; c < k; ++c)
            if (lv[static_cast<std::size_t>(c) * hw + i] > lv[static_cast<std::size_t>(best) * hw + i]) best = c;
        out.values[i] = best;
    }
    return out;
}

/// Ground truth restricted to the boundary band (pixels within `band_width`
/// of a label change); everything else becomes ignore.
inline LabelMap band_restricted(const LabelMap& gt, double band_width = 2.0) {
    DistanceField f = distance_transform(gt);
    LabelMap out = gt;
    if (f.single_label) {
        for (auto& v : out.values) v = LabelMap::kIgnore;
        return out;
    }
    for (std::size_t i = 0; i < gt.size(); ++i)
        if (!(f.distance.value()[i] <= band_width)) out.values[i] = LabelMap::kIgnore;
    return out;
}

inline Tensor boundary_prob_map(const Tensor& boundary_logits) {
    NoGradGuard ng;
    int h = boundary_logits.dim(1), w = boundary_logits.dim(2);
    return sigmoid(reshape(boundary_logits, {h, w}));
}

inline EvalReport evaluate(const UNEPT& model, const Dataset& data, const std::string& split,
                           bool with_refined, double refine_threshold = 0.5,
                           int max_samples = -1) {
    NoGradGuard ng;
    ForwardCtx ctx;  // eval mode
    std::vector<std::int64_t> cm, cm_band, cm_ref, cm_band_ref;
    int k = model.cfg.num_classes;
    int count = data.size(split);
    if (max_samples >= 0) count = std::min(count, max_samples);
    for (int i = 0; i < count; ++i) {
        Sample s = data.get(split, i);
        ModelOutputs out = model.forward(s.image, ctx);
        LabelMap pred = argmax_labels(out.seg_logits);
        LabelMap band_gt = band_restricted(s.labels);
        accumulate_confusion(cm, confusion_matrix(pred, s.labels, k));
        accumulate_confusion(cm_band, confusion_matrix(pred, band_gt, k));
        if (with_refined) {
            Tensor prob = boundary_prob_map(out.boundary_logits);
            LabelMap refined = refine_labels(pred, prob, out.direction_logits, refine_threshold);
            accumulate_confusion(cm_ref, confusion_matrix(refined, s.labels, k));
            accumulate_confusion(cm_band_ref, confusion_matrix(refined, band_gt, k));
        }
    }
    EvalReport report;
    report.overall = metrics(cm, k);
    report.band = metrics(cm_band, k);
    if (with_refined) {
        report.has_refined = true;
        report.overall_refined = metrics(cm_ref, k);
        report.band_refined = metrics(cm_band_ref, k);
    }
    return report;
}

// ---------------------------------------------------------------------------
// training

struct TrainRow {
    std::int64_t step = 0;
    double lr = 0, loss = 0, loss_coarse = 0, loss_refined = 0, loss_boundary = 0,
           loss_direction = 0;
    bool has_val = false;
    double val_miou = 0, val_pixacc = 0, val_miou_refined = 0, val_pixacc_refined = 0;
};

struct TrainOutcome {
    std::vector<TrainRow> rows;
    EvalReport final_eval;
    std::string final_checkpoint;
    double wall_seconds = 0;
};

inline std::string metrics_csv(const std::vector<TrainRow>& rows) {
    std::ostringstream out;
    out << "step,lr,loss,loss_coarse,loss_refined,loss_boundary,loss_direction,"
           "val_miou,val_pixacc,val_miou_refined,val_pixacc_refined\n";
    auto d = [](double v) { return detail::format_double(v); };
    for (const auto& r : rows) {
        out << r.step << "," << d(r.lr) << "," << d(r.loss) << "," << d(r.loss_coarse) << ","
            << d(r.loss_refined) << "," << d(r.loss_boundary) << "," << d(r.loss_direction) << ",";
        if (r.has_val)
            out << d(r.val_miou) << "," << d(r.val_pixacc) << "," << d(r.val_miou_refined) << ","
                << d(r.val_pixacc_refined);
        else
            out << ",,,";
        out << "\n";
    }
    return out.str();
}

namespace detail {

inline void apply_checkpoint(const Checkpoint& ckpt, const NamedParams& params, AdamW& opt) {
    for (const auto& [name, p] : params) {
        const Tensor* stored = ckpt.find(name);
        if (!stored) throw std::runtime_error("checkpoint: missing tensor " + name);
        if (stored->shape() != p.shape())
            throw std::runtime_error("checkpoint: shape mismatch for " + name);
        Tensor target = p;
        target.value_mut() = stored->value();
    }
    for (std::size_t i = 0; i < opt.params().size(); ++i) {
        const std::string& name = opt.params()[i].first;
        const Tensor* m = ckpt.find("opt.m." + name);
        const Tensor* v = ckpt.find("opt.v." + name);
        if (!m || !v) throw std::runtime_error("checkpoint: missing optimizer state for " + name);
        opt.moment1()[i] = m->value();
        opt.moment2()[i] = v->value();
    }
    opt.set_step_count(static_cast<std::int64_t>(ckpt.step));
}

inline void save_train_checkpoint(const std::string& path, std::uint64_t step,
                                  const NamedParams& params, AdamW& opt) {
    NamedParams all = params;
    for (std::size_t i = 0; i < opt.params().size(); ++i) {
        const std::string& name = opt.params()[i].first;
        const Tensor& p = opt.params()[i].second;
        all.emplace_back("opt.m." + name,
                         Tensor::from_data(opt.moment1()[i], p.shape()));
        all.emplace_back("opt.v." + name,
                         Tensor::from_data(opt.moment2()[i], p.shape()));
    }
    save_checkpoint(path, step, all);
}

}  // namespace detail

/// Loads model parameters (ignoring optimizer state) from a checkpoint.
inline UNEPT load_model(const RunConfig& cfg, const std::string& checkpoint_path) {
    UNEPT model = UNEPT::init(cfg.model, cfg.seed);
    Checkpoint ckpt = load_checkpoint(checkpoint_path);
    for (const auto& [name, p] : model.named_parameters()) {
        const Tensor* stored = ckpt.find(name);
        if (!stored) throw std::runtime_error("checkpoint: missing tensor " + name);
        if (stored->shape() != p.shape())
            throw std::runtime_error("checkpoint: shape mismatch for " + name +
                                     " (incompatible model configuration)");
        Tensor target = p;
        target.value_mut() = stored->value();
    }
    return model;
}

/// The training loop: forward, combined loss, backward, AdamW with the 2/3
/// schedule; periodic validation and checkpoints. All randomness is keyed by
/// (seed, purpose, absolute step), so a resumed run replays bit-identically.
inline TrainOutcome train_loop(const RunConfig& cfg, bool verbose = false) {
    cfg.validate();
    auto t0 = std::chrono::steady_clock::now();
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);

    Dataset data = cfg.data_dir.empty() ? Dataset(cfg.scene) : Dataset(cfg.data_dir);
    int train_size = data.size("train");
    if (train_size < 1 && cfg.total_steps > 0)
        throw std::runtime_error("train: empty training split");

    UNEPT model = UNEPT::init(cfg.model, cfg.seed);
    NamedParams params = model.named_parameters();
    AdamW opt(params, cfg.optim);

    std::int64_t start_step = 0;
    if (!cfg.resume_from.empty()) {
        Checkpoint ckpt = load_checkpoint(cfg.resume_from);
        detail::apply_checkpoint(ckpt, params, opt);
        start_step = static_cast<std::int64_t>(ckpt.step);
        if (start_step > cfg.total_steps)
            throw std::runtime_error("train: checkpoint is past total_steps");
    }

    TrainOutcome outcome;
    for (std::int64_t step = start_step; step < cfg.total_steps; ++step) {
        double sched = lr_schedule(step, cfg.total_steps, 1.0);
        Prng batch_rng = Prng::keyed(cfg.seed, "batch", static_cast<std::uint64_t>(step));

        Tensor total;
        TrainRow row;
        row.step = step;
        row.lr = cfg.optim.lr * sched;
        for (int b = 0; b < cfg.batch_size; ++b) {
            int idx = static_cast<int>(batch_rng.uniform_int(static_cast<std::uint64_t>(train_size)));
            Sample s = data.get("train", idx);
            if (cfg.augment) {
                Prng aug_rng = Prng::keyed(cfg.seed, "aug", static_cast<std::uint64_t>(step),
                                           static_cast<std::uint64_t>(b));
                s = augment(s, aug_rng);
            }
            BoundaryTargets targets = make_boundary_targets(s.labels, cfg.gamma);
            Prng drop_rng = Prng::keyed(cfg.seed, "drop", static_cast<std::uint64_t>(step),
                                        static_cast<std::uint64_t>(b));
            ForwardCtx ctx;
            ctx.training = true;
            ctx.dropout_rate = cfg.model.dropout;
            ctx.dropout_rng = &drop_rng;

            ModelOutputs out = model.forward(s.image, ctx);
            Tensor prob = sigmoid(reshape(out.boundary_logits,
                                          {s.labels.height, s.labels.width}));
            Tensor refined = refine_logits(out.seg_logits, prob, out.direction_logits);
            LossBreakdown lb = segmentation_loss(out.seg_logits, refined, out.boundary_logits,
                                                 out.direction_logits, s.labels, targets, cfg.loss);
            const struct {
                const char* name;
                double v;
            } terms[] = {{"coarse", lb.coarse},
                         {"refined", lb.refined},
                         {"boundary", lb.boundary},
                         {"direction", lb.direction}};
            for (const auto& t : terms)
                if (!std::isfinite(t.v))
                    throw std::runtime_error(std::string("train: non-finite ") + t.name +
                                             " loss term at step " + std::to_string(step));
            row.loss_coarse += lb.coarse / cfg.batch_size;
            row.loss_refined += lb.refined / cfg.batch_size;
            row.loss_boundary += lb.boundary / cfg.batch_size;
            row.loss_direction += lb.direction / cfg.batch_size;
            Tensor scaled = scale(lb.total, 1.0 / cfg.batch_size);
            total = total.defined() ? add(total, scaled) : scaled;
        }
        row.loss = total.item();
        backward(total);
        total = Tensor();  // release the tape before the parameter update
        opt.step(sched);

        if ((step + 1) % cfg.eval_every == 0 && data.size("val") > 0) {
            EvalReport r = evaluate(model, data, "val", true, cfg.refine_threshold);
            row.has_val = true;
            row.val_miou = r.overall.miou;
            row.val_pixacc = r.overall.pixacc;
            row.val_miou_refined = r.overall_refined.miou;
            row.val_pixacc_refined = r.overall_refined.pixacc;
            if (verbose)
                std::printf("step %lld  loss %.4f  val_miou %.4f  val_miou_refined %.4f\n",
                            static_cast<long long>(step), row.loss, row.val_miou,
                            row.val_miou_refined);
        } else if (verbose && (step + 1) % 25 == 0) {
            std::printf("step %lld  loss %.4f\n", static_cast<long long>(step), row.loss);
        }
        outcome.rows.push_back(row);

        if ((step + 1) % cfg.checkpoint_every == 0 && step + 1 != cfg.total_steps) {
            char name[64];
            std::snprintf(name, sizeof(name), "ckpt_%06lld.ept", static_cast<long long>(step + 1));
            detail::save_train_checkpoint((fs::path(cfg.out_dir) / name).string(),
                                          static_cast<std::uint64_t>(step + 1), params, opt);
        }
    }

    outcome.final_checkpoint = (fs::path(cfg.out_dir) / "ckpt_final.ept").string();
    detail::save_train_checkpoint(outcome.final_checkpoint,
                                  static_cast<std::uint64_t>(cfg.total_steps), params, opt);
    if (data.size("val") > 0)
        outcome.final_eval = evaluate(model, data, "val", true, cfg.refine_threshold);

    std::ofstream csv(fs::path(cfg.out_dir) / "metrics.csv");
    csv << metrics_csv(outcome.rows);

    outcome.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return outcome;
}

// ---------------------------------------------------------------------------
// gradient-check suites

inline std::vector<GradCheckGroup> gradcheck_attention(std::uint64_t seed) {
    Prng rng = Prng::keyed(seed, "gc_attn");
    int dm = 16, heads = 2;
    auto dense = DenseAttentionParams::init(dm, heads, 8, 8, rng);
    auto sparse = SparseAttentionParams::init(dm, heads, 8, 8, 3, 2, rng);
    for (int m = 0; m < heads; ++m) {
        for (double& v : sparse.u_wts[static_cast<std::size_t>(m)].value_mut()) v = rng.uniform(-0.4, 0.4);
        for (double& v : sparse.u_pos[static_cast<std::size_t>(m)].value_mut()) v = rng.uniform(-0.2, 0.2);
    }
    std::vector<double> xd(static_cast<std::size_t>(5) * dm);
    for (double& v : xd) v = rng.uniform(-1, 1);
    Tensor x = Tensor::from_data(xd, {5, dm});
    x.set_requires_grad(true);
    std::vector<double> wd(static_cast<std::size_t>(5) * dm);
    for (double& v : wd) v = rng.uniform(-1, 1);
    Tensor dirw = Tensor::from_data(wd, {5, dm});

    PyramidFeatures pyr;
    pyr.d_model = dm;
    std::vector<double> m0(static_cast<std::size_t>(16) * dm), m1(static_cast<std::size_t>(4) * dm);
    for (double& v : m0) v = rng.uniform(-1, 1);
    for (double& v : m1) v = rng.uniform(-1, 1);
    pyr.maps = {Tensor::from_data(m0, {16, dm}), Tensor::from_data(m1, {4, dm})};
    pyr.shapes = {{4, 4}, {2, 2}};
    pyr.strides = {8, 16};
    std::vector<double> refd(10);
    for (double& v : refd) v = rng.uniform(0.2, 0.8);
    Tensor ref = Tensor::from_data(refd, {5, 2});

    NamedParams params{{"tokens", x}};
    dense.collect_parameters("dense", params);
    sparse.collect_parameters("pyramid", params);
    auto loss = [&]() {
        Tensor a = dense_mha(x, dense);
        Tensor b = pyramid_attention(x, pyr, ref, sparse);
        return sum(mul(add(a, b), dirw));
    };
    return gradcheck_params(loss, params);
}

inline std::vector<GradCheckGroup> gradcheck_boundary(std::uint64_t seed) {
    Prng rng = Prng::keyed(seed, "gc_bnd");
    std::vector<double> seg(static_cast<std::size_t>(3) * 6 * 6), prob(36),
        dir(static_cast<std::size_t>(kDirectionBins) * 36);
    for (double& v : seg) v = rng.uniform(-1, 1);
    for (double& v : prob) v = rng.uniform(0.1, 0.9);
    for (double& v : dir) v = rng.uniform(-1, 1);
    Tensor logits = Tensor::param(seg, {3, 6, 6});
    Tensor bprob = Tensor::param(prob, {6, 6});
    Tensor dirs = Tensor::from_data(dir, {kDirectionBins, 6, 6});

    LabelMap labels(6, 6, 0);
    for (int y = 0; y < 6; ++y)
        for (int x = 3; x < 6; ++x) labels.at(y, x) = 1;
    auto loss = [&]() { return cross_entropy_mean(refine_logits(logits, bprob, dirs), labels); };
    return gradcheck_params(loss, {{"seg_logits", logits}, {"boundary_prob", bprob}});
}

/// Full-network check: every parameter of the reduced-width UN-EPT against
/// central differences of the complete training loss on a 32x32 scene.
inline std::vector<GradCheckGroup> gradcheck_model(std::uint64_t seed) {
    EPTConfig cfg = EPTConfig::reduced_gradcheck();
    UNEPT model = UNEPT::init(cfg, seed);
    SceneSpec spec;
    spec.canvas = 32;
    spec.num_classes = cfg.num_classes;
    spec.seed = seed;
    Sample s = generate_scene(spec, 0);
    BoundaryTargets targets = make_boundary_targets(s.labels, 2.0);
    LossWeights w;

    auto loss = [&]() {
        ForwardCtx ctx;  // eval mode: dropout off, deterministic
        ModelOutputs out = model.forward(s.image, ctx);
        Tensor prob = sigmoid(reshape(out.boundary_logits, {32, 32}));
        Tensor refined = refine_logits(out.seg_logits, prob, out.direction_logits);
        return segmentation_loss(out.seg_logits, refined, out.boundary_logits,
                                 out.direction_logits, s.labels, targets, w)
            .total;
    };
    return gradcheck_params(loss, model.named_parameters());
}

// ---------------------------------------------------------------------------
// rim-corruption benchmark (oracle-guided refinement efficacy)

struct RimBenchResult {
    double band_miou_before = 0, band_miou_after = 0;
    double overall_miou_before = 0, overall_miou_after = 0;
    int scenes = 0;
    int overall_regressions = 0;  // scenes where refinement lowered overall mIoU
};

/// Axis-aligned squares on background, eroded by one pixel to fabricate a
/// systematic rim error, then refined with oracle boundary/direction inputs.
inline RimBenchResult rim_benchmark(int scenes, std::uint64_t seed, double gamma = 2.0) {
    RimBenchResult res;
    res.scenes = scenes;
    std::vector<std::int64_t> band_before, band_after, all_before, all_after;
    const int k = 4, size = 64;
    for (int sc = 0; sc < scenes; ++sc) {
        Prng rng = Prng::keyed(seed, "rim", static_cast<std::uint64_t>(sc));
        LabelMap gt(size, size, 0);
        int squares = 2 + static_cast<int>(rng.uniform_int(3));
        for (int i = 0; i < squares; ++i) {
            int half = 4 + static_cast<int>(rng.uniform_int(9));
            int cy = half + 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(size - 2 * half - 2)));
            int cx = half + 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(size - 2 * half - 2)));
            std::int32_t cls = 1 + static_cast<std::int32_t>(rng.uniform_int(k - 1));
            for (int y = cy - half; y < cy + half; ++y)
                for (int x = cx - half; x < cx + half; ++x) gt.at(y, x) = cls;
        }
        // corrupt: erode every shape by one pixel
        DistanceField f = distance_transform(gt);
        if (f.single_label) continue;
        LabelMap coarse = gt;
        for (std::size_t i = 0; i < gt.size(); ++i)
            if (gt.values[i] != 0 && f.distance.value()[i] <= 1.0) coarse.values[i] = 0;

        BoundaryTargets t = make_boundary_targets(gt, gamma);
        std::vector<double> prob(t.size());
        std::vector<double> dirlogits(static_cast<std::size_t>(kDirectionBins) * t.size(), 0.0);
        for (std::size_t i = 0; i < t.size(); ++i) {
            prob[i] = t.boundary[i] ? 1.0 : 0.0;
            if (t.boundary[i]) dirlogits[static_cast<std::size_t>(t.direction[i]) * t.size() + i] = 8.0;
        }
        LabelMap refined = refine_labels(
            coarse, Tensor::from_data(prob, {size, size}),
            Tensor::from_data(dirlogits, {kDirectionBins, size, size}), 0.5);

        LabelMap band_gt = band_restricted(gt);
        accumulate_confusion(band_before, confusion_matrix(coarse, band_gt, k));
        accumulate_confusion(band_after, confusion_matrix(refined, band_gt, k));
        accumulate_confusion(all_before, confusion_matrix(coarse, gt, k));
        accumulate_confusion(all_after, confusion_matrix(refined, gt, k));
        double before = metrics(confusion_matrix(coarse, gt, k), k).miou;
        double after = metrics(confusion_matrix(refined, gt, k), k).miou;
        if (after < before) ++res.overall_regressions;
    }
    res.band_miou_before = metrics(band_before, k).miou;
    res.band_miou_after = metrics(band_after, k).miou;
    res.overall_miou_before = metrics(all_before, k).miou;
    res.overall_miou_after = metrics(all_after, k).miou;
    return res;
}

}  // namespace unept
