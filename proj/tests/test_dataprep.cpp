#include <doctest.h>

#include <fstream>

#include "murestitch/dataprep.hpp"
#include "murestitch/errors.hpp"
#include "support.hpp"

using namespace murestitch;
using namespace murestitch::dataprep;
using testing::random_image;
using testing::TempDir;

namespace {

using testing::dlt;

const std::array<Point, 4> kUnit{Point{0, 0}, Point{1, 0}, Point{1, 1}, Point{0, 1}};

Image image_avoiding_fill(int h, int w, std::mt19937_64& rng, float lo = 0.0f, float hi = 1.0f) {
    std::uniform_real_distribution<float> u(lo, hi);
    Image img(h, w, 3);
    for (auto& v : img.data) {
        do v = u(rng);
        while (v == kFill);
    }
    return img;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream(p) << text;
}

}  // namespace

TEST_CASE("bbox mask covers exactly w*h pixels (property)") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        std::uniform_int_distribution<int> dim(1, 40);
        const int H = dim(rng), W = dim(rng);
        BBox b;
        b.w = std::uniform_int_distribution<int>(1, W)(rng);
        b.h = std::uniform_int_distribution<int>(1, H)(rng);
        b.x = std::uniform_int_distribution<int>(0, W - b.w)(rng);
        b.y = std::uniform_int_distribution<int>(0, H - b.h)(rng);
        const Image m = bbox_mask(b, H, W);
        double sum = 0.0;
        bool inside_ok = true;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                sum += m.at(y, x, 0);
                inside_ok = inside_ok && (m.at(y, x, 0) == (b.contains(x, y) ? 1.0f : 0.0f));
            }
        CHECK(sum == static_cast<double>(b.area()));
        CHECK(inside_ok);
    }
}

TEST_CASE("erase fills the box with the neutral value and nothing else") {
    std::mt19937_64 rng(12);
    const Image img = random_image(10, 12, 3, rng);
    const BBox b{3, 2, 5, 4};
    const Image e = erase_bbox(img, b);
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 12; ++x)
            for (int c = 0; c < 3; ++c) CHECK(e.at(y, x, c) == (b.contains(x, y) ? kFill : img.at(y, x, c)));
}

TEST_CASE("out-of-bounds boxes raise BoundsError") {
    CHECK_THROWS_AS(bbox_mask({5, 5, 6, 2}, 10, 10), BoundsError);
    CHECK_THROWS_AS(erase_bbox(Image(4, 4, 3), {-1, 0, 2, 2}), BoundsError);
    CHECK_THROWS_AS(bbox_mask({0, 0, 0, 2}, 10, 10), BoundsError);
}

TEST_CASE("box covering the whole image erases to uniform fill") {
    std::mt19937_64 rng(13);
    const Image e = erase_bbox(random_image(6, 7, 3, rng), {0, 0, 7, 6});
    for (float v : e.data) CHECK(v == kFill);
}

TEST_CASE("resize: identity, exact 2x box average, constants preserved") {
    std::mt19937_64 rng(14);
    const Image img = random_image(8, 6, 3, rng);
    CHECK(resize(img, 8, 6) == img);
    const Image half = resize(img, 4, 3);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 3; ++x)
            for (int c = 0; c < 3; ++c) {
                const float avg = (img.at(2 * y, 2 * x, c) + img.at(2 * y, 2 * x + 1, c) + img.at(2 * y + 1, 2 * x, c) +
                                   img.at(2 * y + 1, 2 * x + 1, c)) /
                                  4.0f;
                CHECK(half.at(y, x, c) == doctest::Approx(avg).epsilon(1e-6));
            }
    const Image flat(5, 3, 3, 0.3f);
    for (auto [h, w] : {std::pair{9, 7}, std::pair{2, 2}, std::pair{5, 11}})
        for (float v : resize(flat, h, w).data) CHECK(v == doctest::Approx(0.3f).epsilon(1e-6));
}

TEST_CASE("extract_foreground letterboxes, blanks background and is exact at native size") {
    std::mt19937_64 rng(15);
    const Image img = random_image(20, 20, 3, rng);
    SUBCASE("square box at the target resolution is a plain crop") {
        const BBox b{4, 6, 8, 8};
        const Image canvas = extract_foreground(img, b, nullptr, 8);
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x)
                for (int c = 0; c < 3; ++c) CHECK(canvas.at(y, x, c) == img.at(6 + y, 4 + x, c));
    }
    SUBCASE("wide box is centred with fill bands") {
        const BBox b{0, 0, 16, 8};
        const Image canvas = extract_foreground(img, b, nullptr, 16);
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 16; ++x) {
                CHECK(canvas.at(y, x, 0) == kFill);
                CHECK(canvas.at(15 - y, x, 0) == kFill);
            }
        for (int x = 0; x < 16; ++x) CHECK(canvas.at(4, x, 1) == img.at(0, x, 1));
    }
    SUBCASE("mask blanks non-object pixels") {
        Image mask(20, 20, 1, 0.0f);
        mask.at(7, 5, 0) = 1.0f;
        const Image canvas = extract_foreground(img, {4, 6, 8, 8}, &mask, 8);
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x)
                CHECK(canvas.at(y, x, 2) == (y == 1 && x == 1 ? img.at(7, 5, 2) : kFill));
    }
    SUBCASE("degenerate and inconsistent masks") {
        Image empty(20, 20, 1, 0.0f);
        CHECK_THROWS_AS(extract_foreground(img, {4, 6, 8, 8}, &empty, 8), DataError);
        Image outside(20, 20, 1, 0.0f);
        outside.at(0, 0, 0) = 1.0f;
        CHECK_THROWS_AS(extract_foreground(img, {4, 6, 8, 8}, &outside, 8), ValidationError);
    }
}

TEST_CASE("closed-form homography agrees with an independently solved DLT") {
    std::mt19937_64 rng(16);
    std::uniform_real_distribution<double> j(-0.2, 0.2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        std::array<Point, 4> q;
        for (int k = 0; k < 4; ++k) q[k] = {kUnit[k].x + j(rng), kUnit[k].y + j(rng)};
        const Homography h = homography_from_unit_square(q);
        const Homography ref = dlt(kUnit, q);
        for (int k = 0; k < 4; ++k) {
            const Point p = apply(h, kUnit[k]);
            CHECK(std::abs(p.x - q[k].x) <= 1e-6);
            CHECK(std::abs(p.y - q[k].y) <= 1e-6);
        }
        for (int s = 0; s < 5; ++s) {
            const Point p{u(rng), u(rng)};
            const Point a = apply(h, p), b = apply(ref, p);
            CHECK(std::abs(a.x - b.x) <= 1e-6);
            CHECK(std::abs(a.y - b.y) <= 1e-6);
        }
    }
}

TEST_CASE("parallelogram corners give an affine map") {
    const std::array<Point, 4> q{Point{0.1, 0.2}, Point{1.1, 0.3}, Point{1.0, 1.3}, Point{0.0, 1.2}};
    const Homography h = homography_from_unit_square(q);
    CHECK(std::abs(h[6]) <= 1e-12);
    CHECK(std::abs(h[7]) <= 1e-12);
    for (int k = 0; k < 4; ++k) CHECK(apply(h, kUnit[k]).x == doctest::Approx(q[k].x).epsilon(1e-12));
}

TEST_CASE("collapsed corners are a degenerate warp") {
    const std::array<Point, 4> line{Point{0, 0}, Point{1, 0}, Point{2, 0}, Point{3, 0}};
    CHECK_THROWS_AS(homography_from_unit_square(line), DataError);
    const std::array<Point, 4> point{Point{0.5, 0.5}, Point{0.5, 0.5}, Point{0.5, 0.5}, Point{0.5, 0.5}};
    CHECK_THROWS_AS(homography_from_unit_square(point), DataError);
}

TEST_CASE("zero jitter perspective is the identity") {
    std::mt19937_64 rng(17);
    for (int size : {8, 13, 32}) {
        const Image img = random_image(size, size, 3, rng);
        CHECK(perspective_perturb(img, PerturbParams{}) == img);
    }
}

TEST_CASE("pure translation jitter shifts by whole pixels") {
    std::mt19937_64 rng(18);
    const int R = 16;
    const Image img = random_image(R, R, 3, rng);
    PerturbParams p;
    for (int k = 0; k < 4; ++k) {
        p.corner_jitter[2 * k] = 2.0 / R;
        p.corner_jitter[2 * k + 1] = -1.0 / R;
    }
    const Image out = perspective_perturb(img, p);
    for (int y = 0; y < R; ++y)
        for (int x = 0; x < R; ++x)
            for (int c = 0; c < 3; ++c) {
                const int sx = x - 2, sy = y + 1;
                const bool in = sx >= 0 && sy < R;
                CHECK(out.at(y, x, c) == doctest::Approx(in ? img.at(sy, sx, c) : kFill).epsilon(1e-6));
            }
}

TEST_CASE("perspective output follows the forward corner map") {
    // A single bright pixel at the canvas centre lands where H sends the centre.
    const int R = 33;
    Image img(R, R, 3, 0.0f);
    for (int c = 0; c < 3; ++c) img.at(16, 16, c) = 1.0f;
    PerturbParams p;
    p.corner_jitter = {0.1, 0.05, -0.08, 0.1, 0.05, -0.1, -0.1, 0.0};
    std::array<Point, 4> q;
    for (int k = 0; k < 4; ++k) q[k] = {kUnit[k].x + p.corner_jitter[2 * k], kUnit[k].y + p.corner_jitter[2 * k + 1]};
    const Point centre = apply(homography_from_unit_square(q), {16.5 / R, 16.5 / R});
    const Image out = perspective_perturb(img, p);
    int bx = 0, by = 0;
    float best = -1.0f;
    for (int y = 0; y < R; ++y)
        for (int x = 0; x < R; ++x)
            if (out.at(y, x, 0) > best) best = out.at(y, x, 0), bx = x, by = y;
    CHECK(std::abs(bx + 0.5 - centre.x * R) <= 1.0);
    CHECK(std::abs(by + 0.5 - centre.y * R) <= 1.0);
}

TEST_CASE("jitter beyond the configured range is rejected") {
    PerturbParams p;
    p.corner_jitter[3] = 0.2;
    CHECK_THROWS_AS(perspective_perturb(Image(8, 8, 3), p, PerturbConfig{}), ValidationError);
}

TEST_CASE("color transfer moment identities") {
    std::mt19937_64 rng(19);
    const Image img = image_avoiding_fill(16, 16, rng, 0.3f, 0.6f);
    const std::array<float, 3> gain{0.8f, 1.2f, 1.0f}, shift{0.05f, -0.1f, 0.12f};
    const Image out = color_transfer(img, gain, shift);
    for (int c = 0; c < 3; ++c) {
        double mi = 0, mo = 0;
        for (int k = 0; k < 256; ++k) mi += img.data[k * 3 + c], mo += out.data[k * 3 + c];
        mi /= 256, mo /= 256;
        double vi = 0, vo = 0;
        for (int k = 0; k < 256; ++k) {
            vi += (img.data[k * 3 + c] - mi) * (img.data[k * 3 + c] - mi);
            vo += (out.data[k * 3 + c] - mo) * (out.data[k * 3 + c] - mo);
        }
        CHECK(std::abs(mo - (gain[c] * mi + shift[c])) <= 1e-6);
        CHECK(std::abs(std::sqrt(vo / 256) - gain[c] * std::sqrt(vi / 256)) <= 1e-6);
    }
}

TEST_CASE("color transfer clips and leaves fill pixels alone") {
    Image img(1, 3, 3, kFill);
    for (int c = 0; c < 3; ++c) img.at(0, 1, c) = 0.9f, img.at(0, 2, c) = 0.05f;
    const Image out = color_transfer(img, {1.3f, 1.3f, 1.3f}, {0.15f, 0.15f, -0.15f});
    for (int c = 0; c < 3; ++c) CHECK(out.at(0, 0, c) == kFill);
    CHECK(out.at(0, 1, 0) == 1.0f);
    CHECK(out.at(0, 2, 2) == 0.0f);
}

TEST_CASE("perturbation draws are in range and seed-deterministic") {
    const PerturbConfig cfg;
    for (std::uint64_t s = 0; s < 50; ++s) {
        const auto p = draw_perturbation(s, cfg);
        CHECK_NOTHROW(p.validate(cfg));
        const auto q = draw_perturbation(s, cfg);
        CHECK(p.corner_jitter == q.corner_jitter);
        CHECK(p.color_gain == q.color_gain);
    }
    CHECK(derive_seed(1, {2, 3}) != derive_seed(1, {3, 2}));
    CHECK(derive_seed(1, {2, 3}) == derive_seed(1, {2, 3}));
    CHECK(derive_seed(0, {0}) != derive_seed(0, {1}));
}

TEST_CASE("finetune set: one sample per image with cyclic references") {
    std::mt19937_64 rng(20);
    std::vector<AnnotatedImage> images;
    for (int i = 0; i < 4; ++i) {
        AnnotatedImage a;
        a.id = "img" + std::to_string(i);
        a.pixels = random_image(16, 16, 3, rng);
        a.bbox = {2 + i, 3, 6, 7};
        images.push_back(a);
    }
    const PerturbConfig cfg;
    const auto set = build_finetune_set(images, 3, 9, cfg, 8);
    REQUIRE(set.size() == 4);
    for (int i = 0; i < 4; ++i) {
        const auto& s = set[i];
        CHECK(s.ground_truth == images[i].pixels);
        CHECK(s.background == erase_bbox(images[i].pixels, images[i].bbox));
        CHECK(s.mask == bbox_mask(images[i].bbox, 16, 16));
        REQUIRE(s.references.size() == 3);
        for (int r = 0; r < 3; ++r) {
            CHECK(s.references[r].source_id == images[(i + r) % 4].id);
            CHECK(s.references[r].pixels.height == 8);
            CHECK(s.references[r].perturbation.rng_seed ==
                  derive_seed(9, {static_cast<std::uint64_t>(i), static_cast<std::uint64_t>((i + r) % 4)}));
        }
    }
    const auto again = build_finetune_set(images, 3, 9, cfg, 8);
    CHECK(again[2].references[1].pixels == set[2].references[1].pixels);
    const auto other = build_finetune_set(images, 3, 10, cfg, 8);
    CHECK_FALSE(other[2].references[1].pixels == set[2].references[1].pixels);
    CHECK_THROWS_AS(build_finetune_set(images, 5, 9, cfg, 8), ValidationError);
    CHECK_THROWS_AS(build_finetune_set(images, 0, 9, cfg, 8), ValidationError);
    CHECK_THROWS_AS(build_finetune_set({}, 1, 9, cfg, 8), ValidationError);
}

TEST_CASE("annotation files: round trip and malformed input") {
    TempDir dir("annot");
    write_bbox_json(dir.path / "a.json", {1, 2, 3, 4});
    CHECK(read_bbox_json(dir.path / "a.json") == BBox{1, 2, 3, 4});
    write_text(dir.path / "bad.json", "{\"bbox\": [1, 2");
    try {
        read_bbox_json(dir.path / "bad.json");
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("bad.json") != std::string::npos);
    }
    write_text(dir.path / "short.json", "{\"bbox\": [1, 2, 3]}");
    CHECK_THROWS_AS(read_bbox_json(dir.path / "short.json"), ValidationError);
}

TEST_CASE("object directories: numeric order and missing annotations listed") {
    TempDir dir("objdir");
    std::mt19937_64 rng(21);
    for (int j : {0, 2, 10}) {
        save_png(random_image(8, 8, 3, rng), dir.path / ("img" + std::to_string(j) + ".png"));
        write_bbox_json(dir.path / ("img" + std::to_string(j) + ".json"), {1, 1, 4, 4});
    }
    const auto files = numbered_pngs(dir.path, "img");
    REQUIRE(files.size() == 3);
    CHECK(files[1].filename() == "img2.png");
    CHECK(files[2].filename() == "img10.png");
    CHECK(load_object_dir(dir.path).size() == 3);

    save_png(random_image(8, 8, 3, rng), dir.path / "img3.png");
    save_png(random_image(8, 8, 3, rng), dir.path / "img4.png");
    try {
        load_object_dir(dir.path);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        const std::string what = e.what();
        CHECK(what.find("img3") != std::string::npos);
        CHECK(what.find("img4") != std::string::npos);
    }
    CHECK_THROWS_AS(load_object_dir(dir.path / "nope"), ValidationError);
    TempDir empty("emptyobj");
    CHECK_THROWS_AS(load_object_dir(empty.path), ValidationError);
}

TEST_CASE("png round trip is exact on 8-bit values") {
    TempDir dir("png");
    Image img(3, 4, 3);
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>((i * 37) % 256) / 255.0f;
    save_png(img, dir.path / "x.png");
    const Image back = load_png(dir.path / "x.png");
    REQUIRE(back.same_shape(img));
    for (std::size_t i = 0; i < img.data.size(); ++i) CHECK(back.data[i] == doctest::Approx(img.data[i]).epsilon(1e-7));
}
