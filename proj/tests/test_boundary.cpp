#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <limits>
#include <unept/boundary.hpp>
#include <unept/gradcheck.hpp>
#include <unept/rng.hpp>

#include "doctest.h"

using namespace unept;

namespace {

// Independent oracle: all-pairs nearest-different-label scan, O(H^2 W^2).
std::vector<double> brute_distance(const LabelMap& m) {
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> out(m.size(), inf);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            std::int32_t c = m.at(y, x);
            double best = inf;
            for (int yy = 0; yy < m.height; ++yy)
                for (int xx = 0; xx < m.width; ++xx) {
                    std::int32_t v = m.at(yy, xx);
                    if (v == c || v == LabelMap::kIgnore) continue;
                    double d = std::hypot(static_cast<double>(yy - y), static_cast<double>(xx - x));
                    best = std::min(best, d);
                }
            out[static_cast<std::size_t>(y) * m.width + x] = best;
        }
    return out;
}

LabelMap square_scene() {
    LabelMap m(8, 8, 0);
    for (int y = 2; y <= 5; ++y)
        for (int x = 2; x <= 5; ++x) m.at(y, x) = 1;
    return m;
}

Tensor one_hot_direction_logits(const BoundaryTargets& t) {
    int h = t.height, w = t.width;
    std::vector<double> logits(static_cast<std::size_t>(kDirectionBins) * h * w, 0.0);
    for (std::size_t i = 0; i < t.size(); ++i)
        if (t.boundary[i]) logits[static_cast<std::size_t>(t.direction[i]) * h * w + i] = 10.0;
    return Tensor::from_data(std::move(logits), {kDirectionBins, h, w});
}

Tensor boundary_prob_from(const BoundaryTargets& t) {
    std::vector<double> prob(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) prob[i] = t.boundary[i] ? 1.0 : 0.0;
    return Tensor::from_data(std::move(prob), {t.height, t.width});
}

}  // namespace

TEST_CASE("distance_transform simple geometry") {
    LabelMap two(2, 2, 0);
    two.at(0, 1) = 1;
    two.at(1, 1) = 1;
    DistanceField f = distance_transform(two);
    CHECK_FALSE(f.single_label);
    for (double d : f.distance.value()) CHECK(d == doctest::Approx(1.0).epsilon(1e-14));

    // centre of a 5x5 uniform region inside a larger map is >= 2 away from
    // any other label
    LabelMap big(9, 9, 0);
    for (int y = 2; y <= 6; ++y)
        for (int x = 2; x <= 6; ++x) big.at(y, x) = 1;
    DistanceField fb = distance_transform(big);
    CHECK(fb.distance.at({4, 4}) >= 2.0);
}

TEST_CASE("distance_transform single-label sentinel") {
    LabelMap uniform(4, 4, 2);
    DistanceField f = distance_transform(uniform);
    CHECK(f.single_label);
    for (double d : f.distance.value()) CHECK(std::isinf(d));

    LabelMap with_ignore(4, 4, 2);
    with_ignore.at(0, 0) = LabelMap::kIgnore;
    CHECK(distance_transform(with_ignore).single_label);
}

TEST_CASE("distance_transform matches brute force on the square scene") {
    LabelMap m = square_scene();
    DistanceField f = distance_transform(m);
    auto expect = brute_distance(m);
    for (std::size_t i = 0; i < expect.size(); ++i)
        CHECK(f.distance.value()[i] == doctest::Approx(expect[i]).epsilon(1e-12));
}

TEST_CASE("distance_transform matches brute force on random small maps") {
    Prng rng(500);
    for (int trial = 0; trial < 60; ++trial) {
        int h = 2 + static_cast<int>(rng.uniform_int(15));
        int w = 2 + static_cast<int>(rng.uniform_int(15));
        LabelMap m(h, w);
        for (auto& v : m.values) v = static_cast<std::int32_t>(rng.uniform_int(3));
        if (rng.bernoulli(0.3)) m.values[rng.uniform_int(m.size())] = LabelMap::kIgnore;
        DistanceField f = distance_transform(m);
        auto expect = brute_distance(m);
        bool single = true;
        {
            std::int32_t first = -1;
            for (auto v : m.values) {
                if (v == LabelMap::kIgnore) continue;
                if (first == -1) first = v;
                single &= v == first;
            }
        }
        REQUIRE(f.single_label == single);
        if (single) {
            // sentinel contract overrides per-pixel values
            for (double d : f.distance.value()) CHECK(std::isinf(d));
            continue;
        }
        for (std::size_t i = 0; i < expect.size(); ++i) {
            if (std::isinf(expect[i]))
                CHECK(std::isinf(f.distance.value()[i]));
            else
                CHECK(f.distance.value()[i] == doctest::Approx(expect[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("bin_to_offset table and round trip") {
    CHECK(bin_to_offset(0) == std::array<int, 2>{0, 1});
    CHECK(bin_to_offset(2) == std::array<int, 2>{-1, 0});
    CHECK(bin_to_offset(4) == std::array<int, 2>{0, -1});
    CHECK(bin_to_offset(6) == std::array<int, 2>{1, 0});
    CHECK_THROWS_AS(bin_to_offset(8), std::invalid_argument);
    CHECK_THROWS_AS(bin_to_offset(-1), std::invalid_argument);
    CHECK_THROWS_AS(bin_to_offset(0, 4), std::invalid_argument);
    for (int k = 0; k < kDirectionBins; ++k) {
        auto [dy, dx] = bin_to_offset(k);
        CHECK((dy != 0 || dx != 0));
        CHECK(quantize_angle(std::atan2(static_cast<double>(-dy), static_cast<double>(dx))) == k);
    }
}

TEST_CASE("make_boundary_targets on a uniform map is empty") {
    LabelMap uniform(6, 6, 1);
    BoundaryTargets t = make_boundary_targets(uniform, 2.0);
    for (std::size_t i = 0; i < t.size(); ++i) {
        CHECK(t.boundary[i] == 0);
        CHECK(t.offsets[i] == std::array<int, 2>{0, 0});
    }
}

TEST_CASE("vertical edge directions point into each region's interior") {
    LabelMap m(8, 8, 0);
    for (int y = 0; y < 8; ++y)
        for (int x = 4; x < 8; ++x) m.at(y, x) = 1;
    BoundaryTargets t = make_boundary_targets(m, 1.0);
    // pixels just left of the edge belong to the left region; interior is -x
    for (int y = 1; y < 7; ++y) {
        CHECK(t.boundary[static_cast<std::size_t>(y) * 8 + 3] == 1);
        CHECK(t.direction[static_cast<std::size_t>(y) * 8 + 3] == 4);
        CHECK(t.direction[static_cast<std::size_t>(y) * 8 + 4] == 0);  // right region: +x
    }
}

TEST_CASE("boundary band of the 4x4 square at gamma=1.5") {
    LabelMap m = square_scene();
    BoundaryTargets t = make_boundary_targets(m, 1.5);
    int count = 0;
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            bool in_square_perimeter =
                (y >= 2 && y <= 5 && x >= 2 && x <= 5) && (y == 2 || y == 5 || x == 2 || x == 5);
            bool in_touching_ring =
                (y >= 1 && y <= 6 && x >= 1 && x <= 6) && !(y >= 2 && y <= 5 && x >= 2 && x <= 5);
            bool expect = in_square_perimeter || in_touching_ring;
            INFO("pixel (" << y << "," << x << ")");
            CHECK(static_cast<bool>(t.boundary[static_cast<std::size_t>(y) * 8 + x]) == expect);
            count += t.boundary[static_cast<std::size_t>(y) * 8 + x];
        }
    CHECK(count == 32);  // 12 perimeter + 20 touching background pixels
}

TEST_CASE("direction bins exist exactly where boundary does") {
    Prng rng(501);
    for (int trial = 0; trial < 10; ++trial) {
        LabelMap m(10, 10);
        for (auto& v : m.values) v = static_cast<std::int32_t>(rng.uniform_int(3));
        BoundaryTargets t = make_boundary_targets(m, 2.0);
        for (std::size_t i = 0; i < t.size(); ++i) {
            if (t.boundary[i]) {
                CHECK(t.direction[i] >= 0);
                CHECK(t.direction[i] < kDirectionBins);
                CHECK(t.offsets[i] == bin_to_offset(t.direction[i]));
            } else {
                CHECK(t.direction[i] == -1);
                CHECK(t.offsets[i] == std::array<int, 2>{0, 0});
            }
        }
    }
}

TEST_CASE("refine_labels identity when boundary probability is zero") {
    Prng rng(502);
    LabelMap coarse(6, 6);
    for (auto& v : coarse.values) v = static_cast<std::int32_t>(rng.uniform_int(4));
    Tensor prob = Tensor::zeros({6, 6});
    Tensor dir = Tensor::zeros({kDirectionBins, 6, 6});
    LabelMap refined = refine_labels(coarse, prob, dir, 0.5);
    CHECK(refined == coarse);
    CHECK_THROWS_AS(refine_labels(coarse, prob, dir, 1.5), std::invalid_argument);
}

TEST_CASE("oracle-guided refinement repairs a one-pixel corrupted rim") {
    LabelMap gt = square_scene();
    // corrupt: erode the square by one pixel (its perimeter flips to background)
    LabelMap coarse = gt;
    for (int y = 2; y <= 5; ++y)
        for (int x = 2; x <= 5; ++x)
            if (y == 2 || y == 5 || x == 2 || x == 5) coarse.at(y, x) = 0;

    BoundaryTargets t = make_boundary_targets(gt, 2.0);
    LabelMap refined = refine_labels(coarse, boundary_prob_from(t), one_hot_direction_logits(t), 0.5);
    CHECK(refined == gt);
}

TEST_CASE("refine_labels clamps offsets that leave the map") {
    LabelMap coarse(3, 3, 2);
    std::vector<double> prob(9, 0.0);
    prob[0] = 1.0;  // corner pixel
    std::vector<double> dir(static_cast<std::size_t>(kDirectionBins) * 9, 0.0);
    dir[3 * 9 + 0] = 5.0;  // bin 3 = up-left, straight out of the map
    LabelMap refined =
        refine_labels(coarse, Tensor::from_data(prob, {3, 3}),
                      Tensor::from_data(dir, {kDirectionBins, 3, 3}), 0.5);
    CHECK(refined.at(0, 0) == 2);
}

TEST_CASE("refine_logits blend endpoints") {
    Prng rng(503);
    std::vector<double> seg(3 * 4 * 4);
    for (double& v : seg) v = rng.uniform(-1, 1);
    Tensor logits = Tensor::from_data(seg, {3, 4, 4});
    std::vector<double> dir(static_cast<std::size_t>(kDirectionBins) * 16, 0.0);
    for (int i = 0; i < 16; ++i) dir[0 * 16 + i] = 1.0;  // bin 0: shift from +x
    Tensor dirs = Tensor::from_data(dir, {kDirectionBins, 4, 4});

    Tensor same = refine_logits(logits, Tensor::zeros({4, 4}), dirs);
    CHECK(same.value() == logits.value());

    Tensor shifted = refine_logits(logits, Tensor::full({4, 4}, 1.0), dirs);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x) {
                int sx = std::min(x + 1, 3);  // clamped pure shift
                CHECK(shifted.at({c, y, x}) == logits.at({c, y, sx}));
            }
}

TEST_CASE("refine_logits gradients match finite differences") {
    Prng rng(504);
    std::vector<double> seg(3 * 4 * 4), prob(16), dir(static_cast<std::size_t>(kDirectionBins) * 16);
    for (double& v : seg) v = rng.uniform(-1, 1);
    for (double& v : prob) v = rng.uniform(0.1, 0.9);
    for (double& v : dir) v = rng.uniform(-1, 1);
    Tensor logits = Tensor::param(seg, {3, 4, 4});
    Tensor bprob = Tensor::param(prob, {4, 4});
    Tensor dirs = Tensor::from_data(dir, {kDirectionBins, 4, 4});
    std::vector<double> w(3 * 16);
    for (double& v : w) v = rng.uniform(-1, 1);
    Tensor dirw = Tensor::from_data(w, {3, 4, 4});

    auto loss = [&]() { return sum(mul(refine_logits(logits, bprob, dirs), dirw)); };
    auto report = gradcheck_params(loss, {{"seg_logits", logits}, {"boundary_prob", bprob}});
    for (const auto& g : report) {
        INFO(g.name);
        CHECK(g.max_rel_err < 1e-4);
    }
}
