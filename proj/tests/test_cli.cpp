#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>
#include <set>
#include <unept/cli.hpp>

#include "doctest.h"

using namespace unept;
namespace fs = std::filesystem;

namespace {

std::string temp_dir(const char* tag) {
    auto p = fs::temp_directory_path() / (std::string("unept_cli_") + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

std::string file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

RunConfig tiny_run(const std::string& out) {
    RunConfig cfg;
    cfg.model = EPTConfig::reduced_gradcheck();
    cfg.scene.num_classes = cfg.model.num_classes;
    cfg.scene.canvas = 32;
    cfg.scene.train_samples = 8;
    cfg.scene.val_samples = 2;
    cfg.total_steps = 6;
    cfg.batch_size = 2;
    cfg.eval_every = 3;
    cfg.checkpoint_every = 3;
    cfg.out_dir = out;
    cfg.seed = 3;
    cfg.scene.seed = 3;
    return cfg;
}

int cli(std::vector<std::string> args) {
    std::vector<const char*> argv{"unept"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace

TEST_CASE("config round trip is the identity and unknown keys are rejected") {
    RunConfig cfg = tiny_run("/tmp/x");
    cfg.optim.lr = 0.000123456789012345;
    cfg.data_dir = "some/dir";
    std::string text = serialize_config(cfg);
    RunConfig back = parse_config(text);
    CHECK(serialize_config(back) == text);
    CHECK(back.optim.lr == cfg.optim.lr);
    CHECK(back.scene.canvas == 32);
    CHECK(back.data_dir == "some/dir");

    CHECK_THROWS_AS(parse_config("no_such_key = 7\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config("d_model\n"), std::invalid_argument);
    // comments and blank lines are fine
    RunConfig commented = parse_config("# hello\n\nd_model = 64 # trailing\nheads = 4\nd_v = 16\nd_k = 16\n");
    CHECK(commented.model.d_model == 64);
    CHECK(commented.model.heads == 4);
}

TEST_CASE("checkpoint round trip is bitwise") {
    std::string dir = temp_dir("ckpt");
    Prng rng(40);
    NamedParams tensors;
    std::vector<double> a(12), b(5);
    for (double& v : a) v = rng.uniform(-1, 1);
    for (double& v : b) v = rng.uniform(-1, 1);
    tensors.emplace_back("alpha", Tensor::from_data(a, {3, 4}));
    tensors.emplace_back("beta.gamma", Tensor::from_data(b, {5}));
    save_checkpoint(dir + "/a.ept", 77, tensors);

    Checkpoint ckpt = load_checkpoint(dir + "/a.ept");
    CHECK(ckpt.step == 77);
    REQUIRE(ckpt.tensors.size() == 2);
    CHECK(ckpt.tensors[0].first == "alpha");
    CHECK(ckpt.tensors[0].second.shape() == std::vector<int>{3, 4});
    CHECK(ckpt.tensors[0].second.value() == a);
    CHECK(ckpt.find("beta.gamma") != nullptr);
    CHECK(ckpt.find("missing") == nullptr);

    save_checkpoint(dir + "/b.ept", ckpt.step, ckpt.tensors);
    CHECK(file_bytes(dir + "/a.ept") == file_bytes(dir + "/b.ept"));

    std::ofstream bad(dir + "/bad.ept", std::ios::binary);
    bad << "NOPE";
    bad.close();
    CHECK_THROWS_AS(load_checkpoint(dir + "/bad.ept"), std::runtime_error);
}

TEST_CASE("seeded training runs are bitwise replayable") {
    std::string out1 = temp_dir("train1"), out2 = temp_dir("train2");
    RunConfig c1 = tiny_run(out1), c2 = tiny_run(out2);
    TrainOutcome a = train_loop(c1);
    TrainOutcome b = train_loop(c2);
    CHECK(metrics_csv(a.rows) == metrics_csv(b.rows));
    CHECK(file_bytes(out1 + "/metrics.csv") == file_bytes(out2 + "/metrics.csv"));
    // checkpoints differ only in... nothing: bitwise equal
    CHECK(file_bytes(a.final_checkpoint) == file_bytes(b.final_checkpoint));

    // a different seed diverges
    RunConfig c3 = tiny_run(temp_dir("train3"));
    c3.seed = 4;
    c3.scene.seed = 4;
    TrainOutcome c = train_loop(c3);
    CHECK(metrics_csv(a.rows) != metrics_csv(c.rows));
}

TEST_CASE("resumed training equals the uninterrupted run bitwise") {
    std::string out_full = temp_dir("resume_full"), out_rest = temp_dir("resume_rest");
    RunConfig full = tiny_run(out_full);
    TrainOutcome a = train_loop(full);
    REQUIRE(fs::exists(out_full + "/ckpt_000003.ept"));  // the "interrupted" state

    RunConfig rest = tiny_run(out_rest);
    rest.resume_from = out_full + "/ckpt_000003.ept";
    TrainOutcome r = train_loop(rest);
    CHECK(r.rows.size() == 3);  // steps 3..5 only
    CHECK(file_bytes(a.final_checkpoint) == file_bytes(r.final_checkpoint));
}

TEST_CASE("a zero-step run still writes the initial checkpoint") {
    std::string out = temp_dir("zerostep");
    RunConfig cfg = tiny_run(out);
    cfg.total_steps = 0;
    TrainOutcome o = train_loop(cfg);
    CHECK(fs::exists(o.final_checkpoint));
    Checkpoint ckpt = load_checkpoint(o.final_checkpoint);
    CHECK(ckpt.step == 0);
    CHECK(o.rows.empty());
}

TEST_CASE("evaluate with refinement off is exactly the raw argmax pipeline") {
    std::string out = temp_dir("evalraw");
    RunConfig cfg = tiny_run(out);
    cfg.total_steps = 2;
    train_loop(cfg);
    UNEPT model = load_model(cfg, out + "/ckpt_final.ept");
    Dataset data(cfg.scene);

    EvalReport r = evaluate(model, data, "val", /*with_refined=*/false);
    // manual raw pipeline
    std::vector<std::int64_t> cm;
    NoGradGuard ng;
    ForwardCtx ctx;
    for (int i = 0; i < data.size("val"); ++i) {
        Sample s = data.get("val", i);
        LabelMap pred = argmax_labels(model.forward(s.image, ctx).seg_logits);
        accumulate_confusion(cm, confusion_matrix(pred, s.labels, cfg.model.num_classes));
    }
    Metrics manual = metrics(cm, cfg.model.num_classes);
    CHECK(r.overall.miou == manual.miou);
    CHECK(r.overall.pixacc == manual.pixacc);
    CHECK_FALSE(r.has_refined);
}

TEST_CASE("checkpoints with the wrong shapes are rejected") {
    std::string out = temp_dir("shapemismatch");
    RunConfig cfg = tiny_run(out);
    cfg.total_steps = 1;
    TrainOutcome o = train_loop(cfg);
    RunConfig other = cfg;
    other.model.d_model = 64;
    other.model.heads = 4;
    CHECK_THROWS_WITH_AS(load_model(other, o.final_checkpoint),
                         doctest::Contains("shape mismatch"), std::runtime_error);
}

TEST_CASE("infer writes prediction, overlay and the sampled-point figure") {
    std::string out = temp_dir("infer");
    RunConfig cfg = tiny_run(out);
    cfg.total_steps = 1;
    TrainOutcome o = train_loop(cfg);

    Sample s = generate_scene(cfg.scene, 999);
    std::string img = out + "/input.ppm";
    save_ppm(img, s.image);

    RunConfig icfg = cfg;
    icfg.out_dir = out + "/inferout";
    CHECK(cmd_infer(icfg, o.final_checkpoint, img, /*refine=*/true, {9, 17}) == 0);
    LabelMap pred = load_pgm(icfg.out_dir + "/prediction.pgm");
    CHECK(pred.height == 32);
    CHECK(pred.width == 32);
    Tensor overlay = load_ppm(icfg.out_dir + "/overlay.ppm");
    CHECK(overlay.shape() == std::vector<int>{3, 32, 32});
    CHECK(fs::exists(icfg.out_dir + "/sample_points.ppm"));
}

TEST_CASE("the traced decoder cross-attention samples N*L*M points") {
    RunConfig cfg = tiny_run(temp_dir("trace"));
    UNEPT model = UNEPT::init(cfg.model, 1);
    Sample s = generate_scene(cfg.scene, 0);
    AttnTrace trace;
    trace.query = 5;
    ForwardCtx ctx;
    ctx.trace = &trace;
    NoGradGuard ng;
    (void)model.forward(s.image, ctx);
    CHECK(trace.points.size() ==
          static_cast<std::size_t>(cfg.model.n_points * cfg.model.n_scales * cfg.model.heads));
}

TEST_CASE("cli exit codes: 0 success, 1 contract violation, 2 usage error") {
    CHECK(cli({}) == 2);
    CHECK(cli({"no-such-command"}) == 2);
    CHECK(cli({"train", "--bogus-flag"}) == 2);
    CHECK(cli({"bench-attention"}) == 2);              // missing sizes
    CHECK(cli({"eval", "/nonexistent.ept"}) == 1);     // contract violation
    CHECK(cli({"gradcheck", "--module", "nope"}) == 2);

    std::string out = temp_dir("cli_train");
    RunConfig cfg = tiny_run(out);
    cfg.total_steps = 1;
    std::string cfg_path = out + "/run.cfg";
    save_config(cfg_path, cfg);
    CHECK(cli({"train", "--config", cfg_path}) == 0);
    CHECK(fs::exists(out + "/metrics.csv"));
    CHECK(cli({"eval", out + "/ckpt_final.ept", "--config", cfg_path, "--refine", "off"}) == 0);
}

TEST_CASE("gen-data followed by training from disk works") {
    std::string dir = temp_dir("gendata");
    RunConfig cfg = tiny_run(dir + "/ds");
    cfg.scene.train_samples = 4;
    cfg.scene.val_samples = 2;
    CHECK(cmd_gen_data(cfg) == 0);
    CHECK(fs::exists(dir + "/ds/dataset.txt"));
    CHECK(fs::exists(dir + "/ds/images/train/3.ppm"));

    RunConfig tcfg = cfg;
    tcfg.data_dir = dir + "/ds";
    tcfg.out_dir = dir + "/run";
    tcfg.total_steps = 2;
    TrainOutcome o = train_loop(tcfg);
    CHECK(fs::exists(o.final_checkpoint));
}

TEST_CASE("gradcheck reports list every parameter group exactly once") {
    auto rep = gradcheck_attention(5);
    std::set<std::string> names;
    for (const auto& g : rep) names.insert(g.name);
    CHECK(names.size() == rep.size());
    // the suite covers the probed tokens plus both parameter bundles
    CHECK(names.count("tokens") == 1);
    CHECK(names.count("dense.wo") == 1);
    CHECK(names.count("pyramid.h0.up") == 1);
}

TEST_CASE("bench csv header is the documented contract") {
    RunConfig cfg = tiny_run(temp_dir("bench"));
    auto rows = bench_attention(cfg.model, {64, 256});
    std::string csv = bench_csv(rows);
    CHECK(csv.rfind("n,dense_ms,sparse_ms,dense_bytes,sparse_bytes\n", 0) == 0);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].n == 64);
    // analytic estimates: dense quadratic, sparse linear in n
    CHECK(rows[1].dense_bytes / rows[0].dense_bytes == doctest::Approx(16.0));
    CHECK(rows[1].sparse_bytes / rows[0].sparse_bytes == doctest::Approx(4.0));
    CHECK(rows[0].sparse_bytes / 64.0 == doctest::Approx(rows[1].sparse_bytes / 256.0));

    CHECK_THROWS_AS(bench_attention(cfg.model, {256, 64}), std::invalid_argument);
    CHECK_THROWS_AS(bench_attention(cfg.model, {100}), std::invalid_argument);
}
