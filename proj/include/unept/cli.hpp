#pragma once

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "bench.hpp"
#include "harness.hpp"

// Command implementations and argument dispatch. Exit codes: 0 success,
// 1 contract violation (bad inputs, failed checks), 2 usage error.

namespace unept {

inline int cmd_train(const RunConfig& cfg) {
    TrainOutcome out = train_loop(cfg, /*verbose=*/true);
    std::printf("final checkpoint: %s\n", out.final_checkpoint.c_str());
    std::printf("metrics csv: %s\n",
                (std::filesystem::path(cfg.out_dir) / "metrics.csv").string().c_str());
    if (cfg.scene.val_samples > 0 || !cfg.data_dir.empty()) {
        std::printf("val_miou=%.6f val_pixacc=%.6f\n", out.final_eval.overall.miou,
                    out.final_eval.overall.pixacc);
        std::printf("val_miou_refined=%.6f val_pixacc_refined=%.6f\n",
                    out.final_eval.overall_refined.miou, out.final_eval.overall_refined.pixacc);
    }
    std::printf("wall_seconds=%.1f\n", out.wall_seconds);
    return 0;
}

inline int cmd_eval(const RunConfig& cfg, const std::string& checkpoint, bool refine) {
    UNEPT model = load_model(cfg, checkpoint);
    Dataset data = cfg.data_dir.empty() ? Dataset(cfg.scene) : Dataset(cfg.data_dir);
    EvalReport r = evaluate(model, data, "val", refine, cfg.refine_threshold);
    std::printf("split=val samples=%d refine=%s\n", data.size("val"), refine ? "on" : "off");
    std::printf("miou=%.6f pixacc=%.6f\n", r.overall.miou, r.overall.pixacc);
    std::printf("band_miou=%.6f band_pixacc=%.6f\n", r.band.miou, r.band.pixacc);
    if (refine) {
        std::printf("refined_miou=%.6f refined_pixacc=%.6f\n", r.overall_refined.miou,
                    r.overall_refined.pixacc);
        std::printf("refined_band_miou=%.6f refined_band_pixacc=%.6f\n", r.band_refined.miou,
                    r.band_refined.pixacc);
    }
    return 0;
}

namespace detail {

inline Tensor overlay_image(const Tensor& image, const LabelMap& labels) {
    int h = labels.height, w = labels.width;
    std::size_t hw = static_cast<std::size_t>(h) * w;
    std::vector<double> out(image.numel());
    for (std::size_t i = 0; i < hw; ++i) {
        auto color = class_color(labels.values[i] == LabelMap::kIgnore ? 15 : labels.values[i]);
        for (int c = 0; c < 3; ++c)
            out[static_cast<std::size_t>(c) * hw + i] =
                0.5 * image.value()[static_cast<std::size_t>(c) * hw + i] + 0.5 * color[static_cast<std::size_t>(c)];
    }
    return Tensor::from_data(std::move(out), {3, h, w});
}

inline void put_pixel(std::vector<double>& img, int h, int w, int y, int x, double r, double g,
                      double b) {
    if (y < 0 || y >= h || x < 0 || x >= w) return;
    std::size_t hw = static_cast<std::size_t>(h) * w;
    img[static_cast<std::size_t>(y) * w + x] = r;
    img[hw + static_cast<std::size_t>(y) * w + x] = g;
    img[2 * hw + static_cast<std::size_t>(y) * w + x] = b;
}

/// Marks the traced sampling locations on a copy of the input image: one dot
/// per (head, scale, sample), coloured by scale, plus a cross at the query.
inline Tensor sample_points_image(const Tensor& image, const AttnTrace& trace,
                                  const std::vector<int>& strides, int query_y, int query_x) {
    int h = image.dim(1), w = image.dim(2);
    std::vector<double> img = image.value();
    static constexpr double scale_colors[3][3] = {
        {1.0, 0.15, 0.15}, {0.15, 1.0, 0.15}, {0.25, 0.45, 1.0}};
    for (const auto& p : trace.points) {
        // scale-l pixel coordinate c maps back to image pixel (c+0.5)*stride-0.5
        double stride = static_cast<double>(strides[static_cast<std::size_t>(p.scale)]);
        int iy = static_cast<int>(std::lround((p.y + 0.5) * stride - 0.5));
        int ix = static_cast<int>(std::lround((p.x + 0.5) * stride - 0.5));
        iy = std::min(std::max(iy, 0), h - 1);
        ix = std::min(std::max(ix, 0), w - 1);
        const double* c = scale_colors[p.scale % 3];
        put_pixel(img, h, w, iy, ix, c[0], c[1], c[2]);
    }
    for (int d = -2; d <= 2; ++d) {
        put_pixel(img, h, w, query_y + d, query_x, 1.0, 1.0, 1.0);
        put_pixel(img, h, w, query_y, query_x + d, 1.0, 1.0, 1.0);
    }
    return Tensor::from_data(std::move(img), {3, h, w});
}

}  // namespace detail

inline int cmd_infer(const RunConfig& cfg, const std::string& checkpoint,
                     const std::string& image_path, bool refine,
                     const std::vector<int>& viz_samples) {
    Tensor image = load_ppm(image_path);
    if (image.dim(1) % 32 != 0 || image.dim(2) % 32 != 0)
        throw std::runtime_error("infer: image extents must be multiples of 32");
    UNEPT model = load_model(cfg, checkpoint);

    NoGradGuard ng;
    ForwardCtx ctx;
    AttnTrace trace;
    bool viz = viz_samples.size() == 2;
    if (viz) {
        int qy = viz_samples[0], qx = viz_samples[1];
        if (qy < 0 || qy >= image.dim(1) || qx < 0 || qx >= image.dim(2))
            throw std::runtime_error("infer: --viz-samples pixel out of range");
        trace.query = (qy / 8) * (image.dim(2) / 8) + qx / 8;
        ctx.trace = &trace;
    }
    ModelOutputs out = model.forward(image, ctx);
    LabelMap pred = argmax_labels(out.seg_logits);
    if (refine) {
        Tensor prob = boundary_prob_map(out.boundary_logits);
        pred = refine_labels(pred, prob, out.direction_logits, cfg.refine_threshold);
    }

    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    save_pgm((fs::path(cfg.out_dir) / "prediction.pgm").string(), pred);
    save_ppm((fs::path(cfg.out_dir) / "overlay.ppm").string(),
             detail::overlay_image(image, pred));
    std::printf("prediction: %s\n", (fs::path(cfg.out_dir) / "prediction.pgm").string().c_str());
    if (viz) {
        std::vector<int> strides(model.cfg.strides.begin(),
                                 model.cfg.strides.begin() + model.cfg.n_scales);
        Tensor pts = detail::sample_points_image(image, trace, strides, viz_samples[0],
                                                 viz_samples[1]);
        save_ppm((fs::path(cfg.out_dir) / "sample_points.ppm").string(), pts);
        std::printf("sampled points: %zu (N*L*M = %d)\n", trace.points.size(),
                    model.cfg.n_points * model.cfg.n_scales * model.cfg.heads);
    }
    return 0;
}

inline int cmd_gradcheck(const RunConfig& cfg, const std::string& module) {
    struct Suite {
        const char* name;
        std::vector<GradCheckGroup> report;
    };
    std::vector<Suite> suites;
    if (module == "all" || module == "attention")
        suites.push_back({"attention", gradcheck_attention(cfg.seed)});
    if (module == "all" || module == "boundary")
        suites.push_back({"boundary", gradcheck_boundary(cfg.seed)});
    if (module == "all" || module == "model")
        suites.push_back({"model", gradcheck_model(cfg.seed)});
    if (suites.empty()) throw std::runtime_error("gradcheck: unknown module " + module);

    bool ok = true;
    for (const auto& suite : suites) {
        double worst = 0;
        for (const auto& g : suite.report) {
            std::printf("group %s/%-28s max_rel_err %.3e\n", suite.name, g.name.c_str(),
                        g.max_rel_err);
            worst = std::max(worst, g.max_rel_err);
            ok &= g.max_rel_err < 1e-4;
        }
        std::printf("[%s] %s (worst %.3e, %zu groups)\n", suite.name,
                    worst < 1e-4 ? "PASS" : "FAIL", worst, suite.report.size());
    }
    return ok ? 0 : 1;
}

inline int cmd_bench_attention(const RunConfig& cfg, const std::vector<int>& sizes) {
    auto rows = bench_attention(cfg.model, sizes);
    std::fputs(bench_csv(rows).c_str(), stdout);
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    std::ofstream out(fs::path(cfg.out_dir) / "bench.csv");
    out << bench_csv(rows);
    return 0;
}

inline int cmd_gen_data(const RunConfig& cfg) {
    write_dataset(cfg.out_dir, cfg.scene, cfg.gamma);
    std::printf("dataset written to %s (%d train / %d val)\n", cfg.out_dir.c_str(),
                cfg.scene.train_samples, cfg.scene.val_samples);
    return 0;
}

// ---------------------------------------------------------------------------
// argument dispatch

inline int run_cli(int argc, const char* const* argv) {
    CLI::App app{"UN-EPT: efficient pyramid transformer segmentation on synthetic scenes"};
    app.require_subcommand(1);

    std::string config_path, out_dir, refine = "on", module = "all";
    std::string checkpoint, image_path;
    std::uint64_t seed = 0;
    bool seed_set = false, out_set = false;
    std::vector<int> viz_samples, sizes;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "run configuration file (key = value lines)");
        sub->add_option_function<std::uint64_t>(
               "--seed", [&](std::uint64_t v) { seed = v; seed_set = true; }, "override the config seed");
        sub->add_option_function<std::string>(
               "--out", [&](std::string v) { out_dir = std::move(v); out_set = true; },
               "override the output directory");
        return sub;
    };

    CLI::App* train = add_common(app.add_subcommand("train", "train on the synthetic dataset"));
    CLI::App* eval = add_common(app.add_subcommand("eval", "evaluate a checkpoint"));
    eval->add_option("checkpoint", checkpoint, "checkpoint file")->required();
    eval->add_option("--refine", refine, "apply boundary refinement")
        ->check(CLI::IsMember({"on", "off"}));
    CLI::App* infer = add_common(app.add_subcommand("infer", "segment one PPM image"));
    infer->add_option("checkpoint", checkpoint)->required();
    infer->add_option("image", image_path, "input image (binary PPM)")->required();
    infer->add_option("--refine", refine)->check(CLI::IsMember({"on", "off"}));
    infer->add_option("--viz-samples", viz_samples,
                      "emit sample_points.ppm for query pixel Y X")
        ->expected(2);
    CLI::App* gradcheck = add_common(app.add_subcommand("gradcheck", "finite-difference checks"));
    gradcheck->add_option("--module", module)
        ->check(CLI::IsMember({"all", "attention", "boundary", "model"}));
    CLI::App* bench = add_common(
        app.add_subcommand("bench-attention", "time dense vs sparse attention"));
    bench->add_option("sizes", sizes, "ascending sequence lengths")->required();
    CLI::App* gen = add_common(app.add_subcommand("gen-data", "write the dataset to disk"));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        (void)app.exit(e);
        return e.get_exit_code() == 0 ? 0 : 2;
    }

    try {
        RunConfig cfg;
        if (!config_path.empty()) cfg = load_config(config_path);
        if (seed_set) {
            cfg.seed = seed;
            cfg.scene.seed = seed;
        }
        if (out_set) cfg.out_dir = out_dir;
        cfg.validate();

        if (train->parsed()) return cmd_train(cfg);
        if (eval->parsed()) return cmd_eval(cfg, checkpoint, refine == "on");
        if (infer->parsed()) return cmd_infer(cfg, checkpoint, image_path, refine == "on", viz_samples);
        if (gradcheck->parsed()) return cmd_gradcheck(cfg, module);
        if (bench->parsed()) return cmd_bench_attention(cfg, sizes);
        if (gen->parsed()) return cmd_gen_data(cfg);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}

}  // namespace unept
