#pragma once

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "data.hpp"
#include "model.hpp"
#include "training.hpp"

// Flat `key = value` run configuration with '#' comments. Unknown keys are
// rejected; parse -> serialize -> parse is the identity.

namespace unept {

struct RunConfig {
    EPTConfig model;
    LossWeights loss;
    AdamW::Hyper optim;
    SceneSpec scene;

    std::int64_t total_steps = 500;
    int batch_size = 4;
    std::int64_t checkpoint_every = 250;
    std::int64_t eval_every = 100;
    bool augment = true;

    double gamma = 2.0;
    double refine_threshold = 0.5;

    std::string data_dir;
    std::string out_dir = "out";
    std::string resume_from;
    std::uint64_t seed = 1;

    void validate() const {
        model.validate();
        scene.validate();
        if (model.num_classes != scene.num_classes)
            throw std::invalid_argument("RunConfig: num_classes is shared by model and scene");
        if (total_steps < 0 || batch_size < 1 || checkpoint_every < 1 || eval_every < 1)
            throw std::invalid_argument("RunConfig: bad schedule values");
        if (gamma <= 0 || refine_threshold <= 0 || refine_threshold >= 1)
            throw std::invalid_argument("RunConfig: bad boundary settings");
    }
};

namespace detail {

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

template <std::size_t N>
std::string format_ints(const std::array<int, N>& a) {
    std::string out;
    for (std::size_t i = 0; i < N; ++i) {
        if (i) out += ",";
        out += std::to_string(a[i]);
    }
    return out;
}

template <std::size_t N>
std::array<int, N> parse_ints(const std::string& s, const std::string& key) {
    std::array<int, N> out{};
    std::stringstream ss(s);
    std::string item;
    std::size_t i = 0;
    while (std::getline(ss, item, ',')) {
        if (i >= N) throw std::invalid_argument("config: too many values for " + key);
        out[i++] = std::stoi(item);
    }
    if (i != N) throw std::invalid_argument("config: expected " + std::to_string(N) + " values for " + key);
    return out;
}

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    std::size_t b = s.find_last_not_of(" \t\r");
    if (a == std::string::npos) return "";
    return s.substr(a, b - a + 1);
}

}  // namespace detail

inline std::string serialize_config(const RunConfig& c) {
    std::ostringstream out;
    out << "# unept run configuration\n";
    out << "d_model = " << c.model.d_model << "\n";
    out << "heads = " << c.model.heads << "\n";
    out << "d_k = " << c.model.d_k << "\n";
    out << "d_v = " << c.model.d_v << "\n";
    out << "n_points = " << c.model.n_points << "\n";
    out << "n_scales = " << c.model.n_scales << "\n";
    out << "encoder_layers = " << c.model.encoder_layers << "\n";
    out << "decoder_layers = " << c.model.decoder_layers << "\n";
    out << "ff_dim = " << c.model.ff_dim << "\n";
    out << "dropout = " << detail::format_double(c.model.dropout) << "\n";
    out << "direction_bins = " << c.model.direction_bins << "\n";
    out << "num_classes = " << c.model.num_classes << "\n";
    out << "strides = " << detail::format_ints(c.model.strides) << "\n";
    out << "stem_widths = " << detail::format_ints(c.model.stem_widths) << "\n";
    out << "backbone_widths = " << detail::format_ints(c.model.backbone_widths) << "\n";
    out << "spatial_widths = " << detail::format_ints(c.model.spatial_widths) << "\n";
    out << "head_width = " << c.model.head_width << "\n";
    out << "lambda_coarse = " << detail::format_double(c.loss.coarse) << "\n";
    out << "lambda_refined = " << detail::format_double(c.loss.refined) << "\n";
    out << "lambda_boundary = " << detail::format_double(c.loss.boundary) << "\n";
    out << "lambda_direction = " << detail::format_double(c.loss.direction) << "\n";
    out << "lr = " << detail::format_double(c.optim.lr) << "\n";
    out << "backbone_lr = " << detail::format_double(c.optim.backbone_lr) << "\n";
    out << "weight_decay = " << detail::format_double(c.optim.weight_decay) << "\n";
    out << "beta1 = " << detail::format_double(c.optim.beta1) << "\n";
    out << "beta2 = " << detail::format_double(c.optim.beta2) << "\n";
    out << "adam_eps = " << detail::format_double(c.optim.eps) << "\n";
    out << "total_steps = " << c.total_steps << "\n";
    out << "batch_size = " << c.batch_size << "\n";
    out << "checkpoint_every = " << c.checkpoint_every << "\n";
    out << "eval_every = " << c.eval_every << "\n";
    out << "augment = " << (c.augment ? "on" : "off") << "\n";
    out << "gamma = " << detail::format_double(c.gamma) << "\n";
    out << "refine_threshold = " << detail::format_double(c.refine_threshold) << "\n";
    out << "canvas = " << c.scene.canvas << "\n";
    out << "min_shapes = " << c.scene.min_shapes << "\n";
    out << "max_shapes = " << c.scene.max_shapes << "\n";
    out << "noise_sigma = " << detail::format_double(c.scene.noise_sigma) << "\n";
    out << "train_samples = " << c.scene.train_samples << "\n";
    out << "val_samples = " << c.scene.val_samples << "\n";
    out << "data_dir = " << c.data_dir << "\n";
    out << "out_dir = " << c.out_dir << "\n";
    out << "resume_from = " << c.resume_from << "\n";
    out << "seed = " << c.seed << "\n";
    return out.str();
}

inline RunConfig parse_config(const std::string& text) {
    RunConfig c;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
        std::string key = detail::trim(line.substr(0, eq));
        std::string value = detail::trim(line.substr(eq + 1));

        auto as_bool = [&](const std::string& v) {
            if (v == "on" || v == "true" || v == "1") return true;
            if (v == "off" || v == "false" || v == "0") return false;
            throw std::invalid_argument("config: bad boolean for " + key);
        };

        if (key == "d_model") c.model.d_model = std::stoi(value);
        else if (key == "heads") c.model.heads = std::stoi(value);
        else if (key == "d_k") c.model.d_k = std::stoi(value);
        else if (key == "d_v") c.model.d_v = std::stoi(value);
        else if (key == "n_points") c.model.n_points = std::stoi(value);
        else if (key == "n_scales") c.model.n_scales = std::stoi(value);
        else if (key == "encoder_layers") c.model.encoder_layers = std::stoi(value);
        else if (key == "decoder_layers") c.model.decoder_layers = std::stoi(value);
        else if (key == "ff_dim") c.model.ff_dim = std::stoi(value);
        else if (key == "dropout") c.model.dropout = std::stod(value);
        else if (key == "direction_bins") c.model.direction_bins = std::stoi(value);
        else if (key == "num_classes") { c.model.num_classes = std::stoi(value); c.scene.num_classes = c.model.num_classes; }
        else if (key == "strides") c.model.strides = detail::parse_ints<3>(value, key);
        else if (key == "stem_widths") c.model.stem_widths = detail::parse_ints<2>(value, key);
        else if (key == "backbone_widths") c.model.backbone_widths = detail::parse_ints<3>(value, key);
        else if (key == "spatial_widths") c.model.spatial_widths = detail::parse_ints<3>(value, key);
        else if (key == "head_width") c.model.head_width = std::stoi(value);
        else if (key == "lambda_coarse") c.loss.coarse = std::stod(value);
        else if (key == "lambda_refined") c.loss.refined = std::stod(value);
        else if (key == "lambda_boundary") c.loss.boundary = std::stod(value);
        else if (key == "lambda_direction") c.loss.direction = std::stod(value);
        else if (key == "lr") c.optim.lr = std::stod(value);
        else if (key == "backbone_lr") c.optim.backbone_lr = std::stod(value);
        else if (key == "weight_decay") c.optim.weight_decay = std::stod(value);
        else if (key == "beta1") c.optim.beta1 = std::stod(value);
        else if (key == "beta2") c.optim.beta2 = std::stod(value);
        else if (key == "adam_eps") c.optim.eps = std::stod(value);
        else if (key == "total_steps") c.total_steps = std::stoll(value);
        else if (key == "batch_size") c.batch_size = std::stoi(value);
        else if (key == "checkpoint_every") c.checkpoint_every = std::stoll(value);
        else if (key == "eval_every") c.eval_every = std::stoll(value);
        else if (key == "augment") c.augment = as_bool(value);
        else if (key == "gamma") c.gamma = std::stod(value);
        else if (key == "refine_threshold") c.refine_threshold = std::stod(value);
        else if (key == "canvas") c.scene.canvas = std::stoi(value);
        else if (key == "min_shapes") c.scene.min_shapes = std::stoi(value);
        else if (key == "max_shapes") c.scene.max_shapes = std::stoi(value);
        else if (key == "noise_sigma") c.scene.noise_sigma = std::stod(value);
        else if (key == "train_samples") c.scene.train_samples = std::stoi(value);
        else if (key == "val_samples") c.scene.val_samples = std::stoi(value);
        else if (key == "data_dir") c.data_dir = value;
        else if (key == "out_dir") c.out_dir = value;
        else if (key == "resume_from") c.resume_from = value;
        else if (key == "seed") { c.seed = std::stoull(value); c.scene.seed = c.seed; }
        else throw std::invalid_argument("config: unknown key '" + key + "'");
    }
    c.scene.num_classes = c.model.num_classes;
    c.scene.seed = c.seed;
    return c;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_config: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

inline void save_config(const std::string& path, const RunConfig& cfg) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_config: cannot open " + path);
    out << serialize_config(cfg);
}

}  // namespace unept
