#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "boundary.hpp"
#include "labels.hpp"
#include "rng.hpp"
#include "sampling.hpp"
#include "tensor.hpp"

// Synthetic segmentation scenes (flat-coloured shapes plus Gaussian noise),
// binary PPM/PGM file IO, and training-time augmentation.

namespace unept {

enum class ShapeKind { kRectangle = 0, kDisc = 1, kTriangle = 2 };

struct SceneSpec {
    int canvas = 64;  // multiple of 32
    int min_shapes = 2;
    int max_shapes = 5;
    int num_classes = 4;  // background + shape classes
    double noise_sigma = 0.05;
    std::uint64_t seed = 0;
    int train_samples = 512;
    int val_samples = 64;

    void validate() const {
        if (canvas < 32 || canvas % 32 != 0)
            throw std::invalid_argument("SceneSpec: canvas must be a positive multiple of 32");
        if (min_shapes < 0 || max_shapes < min_shapes)
            throw std::invalid_argument("SceneSpec: bad shape count range");
        if (num_classes < 2 || num_classes > 200)
            throw std::invalid_argument("SceneSpec: num_classes out of range");
        if (noise_sigma < 0) throw std::invalid_argument("SceneSpec: negative noise");
        if (train_samples < 0 || val_samples < 0)
            throw std::invalid_argument("SceneSpec: negative sample counts");
    }
};

struct Sample {
    Tensor image;  // [3 x H x W] in [0, 1]
    LabelMap labels;
};

/// Fixed class palette (RGB in [0,1]); class k wraps modulo 16.
inline std::array<double, 3> class_color(int k) {
    static constexpr std::array<std::array<double, 3>, 16> palette{{
        {0.15, 0.15, 0.15},  // background
        {0.85, 0.25, 0.20},
        {0.20, 0.75, 0.25},
        {0.20, 0.35, 0.85},
        {0.90, 0.80, 0.20},
        {0.70, 0.25, 0.80},
        {0.25, 0.80, 0.80},
        {0.95, 0.55, 0.15},
        {0.55, 0.35, 0.20},
        {0.90, 0.45, 0.65},
        {0.45, 0.55, 0.10},
        {0.15, 0.55, 0.45},
        {0.50, 0.50, 0.95},
        {0.75, 0.75, 0.75},
        {0.40, 0.10, 0.30},
        {0.10, 0.30, 0.55},
    }};
    return palette[static_cast<std::size_t>(k % 16)];
}

// ---------------------------------------------------------------------------
// rasterisation primitives

/// Axis-aligned rectangle covering rows [y0, y1) x cols [x0, x1), clipped.
inline void draw_rect(LabelMap& labels, std::vector<double>& image, int y0, int x0, int y1,
                      int x1, std::int32_t cls) {
    int h = labels.height, w = labels.width;
    auto color = class_color(cls);
    for (int y = std::max(y0, 0); y < std::min(y1, h); ++y)
        for (int x = std::max(x0, 0); x < std::min(x1, w); ++x) {
            labels.at(y, x) = cls;
            for (int c = 0; c < 3; ++c)
                image[(static_cast<std::size_t>(c) * h + y) * w + x] = color[static_cast<std::size_t>(c)];
        }
}

inline void draw_disc(LabelMap& labels, std::vector<double>& image, double cy, double cx,
                      double radius, std::int32_t cls) {
    int h = labels.height, w = labels.width;
    auto color = class_color(cls);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double dy = y - cy, dx = x - cx;
            if (dy * dy + dx * dx > radius * radius) continue;
            labels.at(y, x) = cls;
            for (int c = 0; c < 3; ++c)
                image[(static_cast<std::size_t>(c) * h + y) * w + x] = color[static_cast<std::size_t>(c)];
        }
}

inline void draw_triangle(LabelMap& labels, std::vector<double>& image,
                          const std::array<double, 6>& vertices, std::int32_t cls) {
    int h = labels.height, w = labels.width;
    auto color = class_color(cls);
    double y0 = vertices[0], x0 = vertices[1], y1 = vertices[2], x1 = vertices[3],
           y2 = vertices[4], x2 = vertices[5];
    auto edge = [](double ay, double ax, double by, double bx, double py, double px) {
        return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
    };
    double area = edge(y0, x0, y1, x1, y2, x2);
    if (area == 0.0) return;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double e0 = edge(y0, x0, y1, x1, y, x);
            double e1 = edge(y1, x1, y2, x2, y, x);
            double e2 = edge(y2, x2, y0, x0, y, x);
            bool inside = area > 0 ? (e0 >= 0 && e1 >= 0 && e2 >= 0) : (e0 <= 0 && e1 <= 0 && e2 <= 0);
            if (!inside) continue;
            labels.at(y, x) = cls;
            for (int c = 0; c < 3; ++c)
                image[(static_cast<std::size_t>(c) * h + y) * w + x] = color[static_cast<std::size_t>(c)];
        }
}

/// Deterministic scene index -> sample. Background is class 0; shapes draw
/// back to front with occlusion; class identity is tied to shape kind so a
/// class always looks the same.
inline Sample generate_scene(const SceneSpec& spec, std::int64_t index) {
    spec.validate();
    Prng rng = Prng::keyed(spec.seed, "scene", static_cast<std::uint64_t>(index));
    int s = spec.canvas;
    LabelMap labels(s, s, 0);
    std::vector<double> image(static_cast<std::size_t>(3) * s * s);
    auto bg = class_color(0);
    for (int c = 0; c < 3; ++c)
        for (int p = 0; p < s * s; ++p)
            image[static_cast<std::size_t>(c) * s * s + p] = bg[static_cast<std::size_t>(c)];

    int count = spec.min_shapes +
                static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(spec.max_shapes - spec.min_shapes + 1)));
    for (int i = 0; i < count; ++i) {
        int kind = static_cast<int>(rng.uniform_int(3));
        std::int32_t cls = 1 + static_cast<std::int32_t>(kind % (spec.num_classes - 1));
        double cy = rng.uniform(0.1 * s, 0.9 * s);
        double cx = rng.uniform(0.1 * s, 0.9 * s);
        double size = rng.uniform(0.08 * s, 0.22 * s);
        switch (static_cast<ShapeKind>(kind)) {
            case ShapeKind::kRectangle: {
                double aspect = rng.uniform(0.6, 1.6);
                int hh = std::max(2, static_cast<int>(size));
                int hwd = std::max(2, static_cast<int>(size * aspect));
                draw_rect(labels, image, static_cast<int>(cy) - hh, static_cast<int>(cx) - hwd,
                          static_cast<int>(cy) + hh, static_cast<int>(cx) + hwd, cls);
                break;
            }
            case ShapeKind::kDisc:
                draw_disc(labels, image, cy, cx, std::max(2.5, size), cls);
                break;
            case ShapeKind::kTriangle: {
                double r = std::max(3.0, size * 1.2);
                double rot = rng.uniform(0.0, 6.283185307179586);
                std::array<double, 6> v{};
                for (int j = 0; j < 3; ++j) {
                    double a = rot + j * 2.0943951023931953;  // 120 degrees
                    v[static_cast<std::size_t>(2 * j)] = cy + r * std::sin(a);
                    v[static_cast<std::size_t>(2 * j) + 1] = cx + r * std::cos(a);
                }
                draw_triangle(labels, image, v, cls);
                break;
            }
        }
    }
    for (double& v : image) {
        v += rng.normal(0.0, spec.noise_sigma);
        v = std::min(std::max(v, 0.0), 1.0);
    }
    return Sample{Tensor::from_data(std::move(image), {3, s, s}), std::move(labels)};
}

// ---------------------------------------------------------------------------
// netpbm IO (binary PPM "P6" and PGM "P5", maxval 255)

namespace detail {

inline int pnm_next_token(std::istream& in) {
    // skips whitespace and '#' comment lines between header tokens
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (std::isspace(c)) {
            c = in.get();
        } else {
            break;
        }
    }
    if (c == EOF) throw std::runtime_error("pnm: truncated header");
    int value = 0;
    bool any = false;
    while (c != EOF && std::isdigit(c)) {
        value = value * 10 + (c - '0');
        any = true;
        c = in.get();
    }
    if (!any) throw std::runtime_error("pnm: malformed header token");
    // c is the single whitespace that terminates the token (or EOF)
    return value;
}

inline std::uint8_t quantize_byte(double v) {
    double q = std::floor(v * 255.0 + 0.5);
    return static_cast<std::uint8_t>(std::min(std::max(q, 0.0), 255.0));
}

}  // namespace detail

inline void save_ppm(const std::string& path, const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != 3)
        throw std::invalid_argument("save_ppm: image must be 3 x H x W");
    int h = image.dim(1), w = image.dim(2);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_ppm: cannot open " + path);
    out << "P6\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(w) * 3);
    std::size_t hw = static_cast<std::size_t>(h) * w;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                row[static_cast<std::size_t>(x) * 3 + c] =
                    detail::quantize_byte(image.value()[static_cast<std::size_t>(c) * hw + static_cast<std::size_t>(y) * w + x]);
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw std::runtime_error("save_ppm: write failed for " + path);
}

inline Tensor load_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_ppm: cannot open " + path);
    char magic[2];
    in.read(magic, 2);
    if (!in || magic[0] != 'P' || magic[1] != '6')
        throw std::runtime_error("load_ppm: not a binary PPM (P6) file: " + path);
    int w = detail::pnm_next_token(in);
    int h = detail::pnm_next_token(in);
    int maxval = detail::pnm_next_token(in);
    if (maxval != 255) throw std::runtime_error("load_ppm: maxval must be 255");
    std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * h * 3);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
        throw std::runtime_error("load_ppm: truncated payload in " + path);
    std::vector<double> image(bytes.size());
    std::size_t hw = static_cast<std::size_t>(h) * w;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                image[static_cast<std::size_t>(c) * hw + static_cast<std::size_t>(y) * w + x] =
                    bytes[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0;
    return Tensor::from_data(std::move(image), {3, h, w});
}

inline void save_pgm(const std::string& path, const LabelMap& labels) {
    for (std::int32_t v : labels.values)
        if (v < 0 || v > 255) throw std::invalid_argument("save_pgm: labels must fit a byte");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_pgm: cannot open " + path);
    out << "P5\n" << labels.width << " " << labels.height << "\n255\n";
    std::vector<unsigned char> bytes(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i)
        bytes[i] = static_cast<unsigned char>(labels.values[i]);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("save_pgm: write failed for " + path);
}

inline LabelMap load_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_pgm: cannot open " + path);
    char magic[2];
    in.read(magic, 2);
    if (!in || magic[0] != 'P' || magic[1] != '5')
        throw std::runtime_error("load_pgm: not a binary PGM (P5) file: " + path);
    int w = detail::pnm_next_token(in);
    int h = detail::pnm_next_token(in);
    int maxval = detail::pnm_next_token(in);
    if (maxval != 255) throw std::runtime_error("load_pgm: maxval must be 255");
    std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * h);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
        throw std::runtime_error("load_pgm: truncated payload in " + path);
    LabelMap labels(h, w);
    for (std::size_t i = 0; i < bytes.size(); ++i) labels.values[i] = bytes[i];
    return labels;
}

// ---------------------------------------------------------------------------
// augmentation

namespace detail {

inline Tensor resize_image_bilinear(const Tensor& image, int ho, int wo) {
    int h = image.dim(1), w = image.dim(2);
    double ry = static_cast<double>(h) / ho, rx = static_cast<double>(w) / wo;
    std::vector<double> coords(static_cast<std::size_t>(ho) * wo * 2);
    for (int y = 0; y < ho; ++y)
        for (int x = 0; x < wo; ++x) {
            coords[(static_cast<std::size_t>(y) * wo + x) * 2] = (y + 0.5) * ry - 0.5;
            coords[(static_cast<std::size_t>(y) * wo + x) * 2 + 1] = (x + 0.5) * rx - 0.5;
        }
    NoGradGuard ng;
    Tensor tokens = bilinear_sample(image, Tensor::from_data(std::move(coords), {ho * wo, 2}));
    return tokens_to_chw(tokens, ho, wo);
}

inline LabelMap resize_labels_nearest(const LabelMap& labels, int ho, int wo) {
    double ry = static_cast<double>(labels.height) / ho, rx = static_cast<double>(labels.width) / wo;
    std::vector<double> coords(static_cast<std::size_t>(ho) * wo * 2);
    for (int y = 0; y < ho; ++y)
        for (int x = 0; x < wo; ++x) {
            coords[(static_cast<std::size_t>(y) * wo + x) * 2] = (y + 0.5) * ry - 0.5;
            coords[(static_cast<std::size_t>(y) * wo + x) * 2 + 1] = (x + 0.5) * rx - 0.5;
        }
    LabelMap out(ho, wo);
    out.values = nearest_sample(labels, coords);
    return out;
}

}  // namespace detail

/// Training-time augmentation: random scale in [0.5, 2], horizontal flip
/// with p=0.5, then crop/pad back to the canvas (labels pad with ignore,
/// images with zero). A ratio of exactly 1 with no flip is the identity.
inline Sample augment(const Sample& sample, Prng& rng) {
    int h = sample.labels.height, w = sample.labels.width;
    double ratio = rng.uniform(0.5, 2.0);
    bool flip = rng.bernoulli(0.5);

    int nh = std::max(1, static_cast<int>(std::lround(h * ratio)));
    int nw = std::max(1, static_cast<int>(std::lround(w * ratio)));

    Tensor image = sample.image;
    LabelMap labels = sample.labels;
    if (nh != h || nw != w) {
        image = detail::resize_image_bilinear(image, nh, nw);
        labels = detail::resize_labels_nearest(labels, nh, nw);
    }

    if (flip) {
        std::vector<double> flipped(image.numel());
        const auto& iv = image.value();
        std::size_t hw = static_cast<std::size_t>(nh) * nw;
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < nh; ++y)
                for (int x = 0; x < nw; ++x)
                    flipped[static_cast<std::size_t>(c) * hw + static_cast<std::size_t>(y) * nw + x] =
                        iv[static_cast<std::size_t>(c) * hw + static_cast<std::size_t>(y) * nw + (nw - 1 - x)];
        image = Tensor::from_data(std::move(flipped), {3, nh, nw});
        LabelMap lf(nh, nw);
        for (int y = 0; y < nh; ++y)
            for (int x = 0; x < nw; ++x) lf.at(y, x) = labels.at(y, nw - 1 - x);
        labels = std::move(lf);
    }

    // crop or pad back to the canvas, with a random placement
    int oy = nh > h ? static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(nh - h + 1)))
            : nh < h ? -static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(h - nh + 1)))
                     : 0;
    int ox = nw > w ? static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(nw - w + 1)))
            : nw < w ? -static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(w - nw + 1)))
                     : 0;
    if (nh == h && nw == w && oy == 0 && ox == 0) return Sample{image, labels};

    std::vector<double> out_img(static_cast<std::size_t>(3) * h * w, 0.0);
    LabelMap out_lab(h, w, LabelMap::kIgnore);
    const auto& iv = image.value();
    std::size_t nhw = static_cast<std::size_t>(nh) * nw;
    std::size_t hw = static_cast<std::size_t>(h) * w;
    for (int y = 0; y < h; ++y) {
        int sy = y + oy;  // oy > 0 crops, oy < 0 shifts into padding
        if (sy < 0 || sy >= nh) continue;
        for (int x = 0; x < w; ++x) {
            int sx = x + ox;
            if (sx < 0 || sx >= nw) continue;
            out_lab.at(y, x) = labels.at(sy, sx);
            for (int c = 0; c < 3; ++c)
                out_img[static_cast<std::size_t>(c) * hw + static_cast<std::size_t>(y) * w + x] =
                    iv[static_cast<std::size_t>(c) * nhw + static_cast<std::size_t>(sy) * nw + sx];
        }
    }
    return Sample{Tensor::from_data(std::move(out_img), {3, h, w}), std::move(out_lab)};
}

// ---------------------------------------------------------------------------
// dataset access (in-memory synthesis or an on-disk directory)

/// Directory layout: images/{split}/{i}.ppm, labels/{split}/{i}.pgm, plus
/// optional boundary/{split}/{i}.pgm and direction/{split}/{i}.pgm caches
/// and a dataset.txt manifest of key=value lines.
class Dataset {
public:
    explicit Dataset(SceneSpec spec) : spec_(spec) { spec_.validate(); }

    explicit Dataset(const std::string& dir) : dir_(dir) {
        std::ifstream manifest(dir + "/dataset.txt");
        if (!manifest) throw std::runtime_error("Dataset: missing manifest " + dir + "/dataset.txt");
        std::string line;
        while (std::getline(manifest, line)) {
            auto eq = line.find('=');
            if (line.empty() || line[0] == '#' || eq == std::string::npos) continue;
            std::string key = line.substr(0, eq);
            std::string value = line.substr(eq + 1);
            if (key == "canvas") spec_.canvas = std::stoi(value);
            else if (key == "min_shapes") spec_.min_shapes = std::stoi(value);
            else if (key == "max_shapes") spec_.max_shapes = std::stoi(value);
            else if (key == "num_classes") spec_.num_classes = std::stoi(value);
            else if (key == "noise_sigma") spec_.noise_sigma = std::stod(value);
            else if (key == "seed") spec_.seed = std::stoull(value);
            else if (key == "train_samples") spec_.train_samples = std::stoi(value);
            else if (key == "val_samples") spec_.val_samples = std::stoi(value);
            else throw std::runtime_error("Dataset: unknown manifest key " + key);
        }
        spec_.validate();
    }

    const SceneSpec& spec() const { return spec_; }
    bool on_disk() const { return !dir_.empty(); }

    int size(const std::string& split) const {
        return split == "train" ? spec_.train_samples : spec_.val_samples;
    }

    Sample get(const std::string& split, int index) const {
        if (index < 0 || index >= size(split))
            throw std::invalid_argument("Dataset: index out of range");
        if (!on_disk()) {
            std::int64_t scene = split == "train" ? index : spec_.train_samples + index;
            return generate_scene(spec_, scene);
        }
        std::string base = "/" + split + "/" + std::to_string(index);
        Sample s;
        s.image = load_ppm(dir_ + "/images" + base + ".ppm");
        s.labels = load_pgm(dir_ + "/labels" + base + ".pgm");
        if (s.labels.height != s.image.dim(1) || s.labels.width != s.image.dim(2))
            throw std::runtime_error("Dataset: image/label shape mismatch at index " +
                                     std::to_string(index));
        return s;
    }

private:
    SceneSpec spec_;
    std::string dir_;
};

/// Writes a full synthetic dataset (plus boundary/direction caches) to dir.
inline void write_dataset(const std::string& dir, const SceneSpec& spec, double gamma = 2.0) {
    spec.validate();
    namespace fs = std::filesystem;
    for (const char* split : {"train", "val"})
        for (const char* sub : {"images", "labels", "boundary", "direction"})
            fs::create_directories(fs::path(dir) / sub / split);
    std::ofstream manifest(dir + "/dataset.txt");
    if (!manifest) throw std::runtime_error("write_dataset: cannot open manifest");
    manifest << "canvas=" << spec.canvas << "\nmin_shapes=" << spec.min_shapes
             << "\nmax_shapes=" << spec.max_shapes << "\nnum_classes=" << spec.num_classes
             << "\nnoise_sigma=" << spec.noise_sigma << "\nseed=" << spec.seed
             << "\ntrain_samples=" << spec.train_samples << "\nval_samples=" << spec.val_samples
             << "\n";
    for (const char* split : {"train", "val"}) {
        int count = std::string(split) == "train" ? spec.train_samples : spec.val_samples;
        for (int i = 0; i < count; ++i) {
            std::int64_t scene = std::string(split) == "train" ? i : spec.train_samples + i;
            Sample s = generate_scene(spec, scene);
            std::string base = "/" + std::string(split) + "/" + std::to_string(i);
            save_ppm(dir + "/images" + base + ".ppm", s.image);
            save_pgm(dir + "/labels" + base + ".pgm", s.labels);
            BoundaryTargets t = make_boundary_targets(s.labels, gamma);
            LabelMap bnd(s.labels.height, s.labels.width);
            LabelMap dirm(s.labels.height, s.labels.width);
            for (std::size_t p = 0; p < t.size(); ++p) {
                bnd.values[p] = t.boundary[p];
                dirm.values[p] = t.boundary[p] ? t.direction[p] : LabelMap::kIgnore;
            }
            save_pgm(dir + "/boundary" + base + ".pgm", bnd);
            save_pgm(dir + "/direction" + base + ".pgm", dirm);
        }
    }
}

}  // namespace unept
