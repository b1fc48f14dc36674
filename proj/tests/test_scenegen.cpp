#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "oracles.hpp"

#include "vpgrid/classical.hpp"
#include "vpgrid/dataset.hpp"
#include "vpgrid/error.hpp"
#include "vpgrid/image.hpp"
#include "vpgrid/rng.hpp"
#include "vpgrid/scenegen.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <string>

using namespace vpgrid;

// ---- PGM ----

TEST_CASE("pgm golden bytes for a 2x2 image") {
    const ImageRaster img(2, 2, std::vector<double>{0.0, 1.0, 0.5, 0.5});
    const auto bytes = encode_pgm(img);
    const std::string header = "P5\n2 2\n255\n";
    REQUIRE(bytes.size() == header.size() + 4);
    CHECK(std::string(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(header.size())) == header);
    CHECK(bytes[header.size() + 0] == 0);
    CHECK(bytes[header.size() + 1] == 255);
    CHECK(bytes[header.size() + 2] == 128);
    CHECK(bytes[header.size() + 3] == 128);
}

TEST_CASE("quantization is round half up") {
    CHECK(quantize_byte(0.0) == 0);
    CHECK(quantize_byte(1.0) == 255);
    CHECK(quantize_byte(0.5) == 128);
    CHECK(quantize_byte(0.5 / 255.0) == 1);
    CHECK(quantize_byte(0.49 / 255.0) == 0);
}

TEST_CASE("pgm round trip equals the quantized image") {
    Rng rng(5);
    ImageRaster img(17, 9);
    for (double& v : img.pixels()) {
        v = rng.uniform();
    }
    const oracle::ScratchDir dir("pgm");
    write_pgm(img, dir.path / "a.pgm");
    const ImageRaster back = read_pgm(dir.path / "a.pgm");
    CHECK(back == quantize_8bit(img));
    for (std::size_t i = 0; i < back.pixels().size(); ++i) {
        REQUIRE(back.pixels()[i] == quantize_byte(img.pixels()[i]) / 255.0);
    }
    write_pgm(back, dir.path / "b.pgm");
    CHECK(read_file_bytes(dir.path / "a.pgm") == read_file_bytes(dir.path / "b.pgm"));
}

TEST_CASE("pgm parser errors carry byte offsets") {
    auto bytes_of = [](const std::string& s) { return std::vector<std::uint8_t>(s.begin(), s.end()); };
    SUBCASE("maxval other than 255") {
        const auto b = bytes_of("P5\n2 2\n65535\n\x01\x02\x03\x04");
        try {
            decode_pgm(b);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.offset() == 7);
        }
    }
    SUBCASE("bad magic") {
        CHECK_THROWS_AS(decode_pgm(bytes_of("P2\n2 2\n255\n0 0 0 0")), ParseError);
    }
    SUBCASE("truncated raster") {
        const auto b = bytes_of("P5\n2 2\n255\n\x01\x02");
        try {
            decode_pgm(b);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.offset() == b.size());
        }
    }
    SUBCASE("comments are skipped") {
        const auto img = decode_pgm(bytes_of("P5\n# made by hand\n1 1\n255\n\xff"));
        CHECK(img.at(0, 0) == 1.0);
    }
}

TEST_CASE("pgm write rejects out-of-range values and unwritable paths") {
    CHECK_THROWS_AS(encode_pgm(ImageRaster(1, 1, 1.5)), DomainError);
    CHECK_THROWS_AS(write_pgm(ImageRaster(1, 1, 0.5), "/nonexistent_dir_vpgrid/x.pgm"), IoError);
    CHECK_THROWS_AS(read_pgm("/nonexistent_dir_vpgrid/x.pgm"), IoError);
}

// ---- scene generation ----

TEST_CASE("generate_positive is deterministic") {
    SceneParams p;
    p.noise_sigma = 0.05;
    p.n_distractor = 3;
    const auto a = generate_positive(p, 42);
    const auto b = generate_positive(p, 42);
    CHECK(encode_pgm(a.image) == encode_pgm(b.image));
    CHECK(a.image == b.image);
    CHECK(a.vp == b.vp);
    CHECK_FALSE(generate_positive(p, 43).image == a.image);
}

TEST_CASE("positive soundness: every drawn line passes within 1 px of the VP") {
    SceneParams p;
    p.n_converging = 8;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto s = generate_positive(p, seed);
        REQUIRE(s.converging.size() == 8);
        REQUIRE(s.scene.lines.size() == 8);
        for (std::size_t idx : s.converging) {
            const auto pix = rasterize_segment(s.scene.lines[idx], p.line_thickness, p.width, p.height);
            REQUIRE(pix.size() >= 2);
            const auto fit = oracle::tls_fit(pix);
            INFO("seed " << seed << " line " << idx);
            CHECK(fit.distance(s.vp) < 1.0);
        }
    }
}

TEST_CASE("positive VP lies in the central 80% and segments reach the border") {
    SceneParams p;
    p.vp_prior_sigma = 100.0; // force clamping
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const auto s = generate_positive(p, seed);
        REQUIRE(s.vp.x >= 0.1 * p.width);
        REQUIRE(s.vp.x <= 0.9 * p.width);
        REQUIRE(s.vp.y >= 0.1 * p.height);
        REQUIRE(s.vp.y <= 0.9 * p.height);
        for (const auto& seg : s.scene.lines) {
            const PixelPoint far = seg.b;
            const bool on_border = std::abs(far.x) < 1e-6 || std::abs(far.y) < 1e-6 ||
                                   std::abs(far.x - (p.width - 1)) < 1e-6 ||
                                   std::abs(far.y - (p.height - 1)) < 1e-6;
            REQUIRE(on_border);
        }
    }
}

TEST_CASE("VP prior concentrates in the central third") {
    // Central third read as the centred square holding a third of the image
    // area: side 300/sqrt(3). Oracle: per-axis normal mass, squared.
    SceneParams p = SceneParams::for_size(300, 300);
    p.vp_prior_sigma = 30.0;
    p.n_converging = 2;
    const double half = 150.0 / std::sqrt(3.0);
    const double per_axis = std::erf(half / (30.0 * std::sqrt(2.0)));
    const double expected = per_axis * per_axis;
    CHECK(expected > 0.99);
    int inside = 0;
    const int trials = 10000;
    for (int i = 0; i < trials; ++i) {
        const auto s = generate_positive(p, static_cast<std::uint64_t>(i));
        if (std::abs(s.vp.x - 150.0) < half && std::abs(s.vp.y - 150.0) < half) {
            ++inside;
        }
    }
    const double frac = inside / double(trials);
    const double se = std::sqrt(expected * (1 - expected) / trials);
    CHECK(frac >= 0.99);
    CHECK(std::abs(frac - expected) < 4 * se);
}

TEST_CASE("positive parameter errors") {
    SceneParams p;
    p.n_converging = 1;
    CHECK_THROWS_AS(generate_positive(p, 0), DomainError);
    p = SceneParams{};
    p.width = 0;
    CHECK_THROWS_AS(generate_positive(p, 0), DomainError);
    p = SceneParams{};
    p.noise_sigma = -1;
    CHECK_THROWS_AS(generate_positive(p, 0), DomainError);
    p = SceneParams{};
    p.line_intensity = 1.5;
    CHECK_THROWS_AS(generate_positive(p, 0), DomainError);
}

TEST_CASE("negatives are deterministic and have no concurrent triple") {
    SceneParams p;
    p.n_distractor = 4;
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        const auto a = generate_negative(p, seed);
        const auto b = generate_negative(p, seed);
        REQUIRE(a.image == b.image);
        REQUIRE_FALSE(has_concurrent_triple(a.scene.lines, p.width, p.height, 1.0));
    }
}

TEST_CASE("has_concurrent_triple detects three lines through one point") {
    const std::vector<Segment> star{{{0, 32}, {63, 32}}, {{32, 0}, {32, 63}}, {{0, 0}, {63, 63}}};
    CHECK(has_concurrent_triple(star, 64, 64, 1.0));
    const std::vector<Segment> parallel{{{0, 10}, {63, 10}}, {{0, 20}, {63, 20}}, {{0, 30}, {63, 30}}};
    CHECK_FALSE(has_concurrent_triple(parallel, 64, 64, 1.0));
    // meeting point outside the frame
    const std::vector<Segment> outside{{{0, 0}, {10, 1}}, {{0, 5}, {10, 5.5}}, {{0, 10}, {10, 10}}};
    CHECK_FALSE(has_concurrent_triple(outside, 64, 64, 1.0));
}

TEST_CASE("grating-only negatives stay below the positive pair-count bar") {
    SceneParams p;
    p.n_blobs = 0;
    p.n_distractor = 0;
    p.n_gratings = 2;
    const int bar = p.n_converging * (p.n_converging - 1) / 2;
    const GridSpec grid(p.width, p.height, 8);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto neg = generate_negative(p, seed);
        const auto lines = detect_lines(neg.image, HoughConfig{});
        const VoteGrid votes = accumulate_votes(lines, grid);
        const int peak = *std::max_element(votes.pair_counts.begin(), votes.pair_counts.end());
        INFO("seed " << seed);
        CHECK(peak < bar);
    }
}

TEST_CASE("negative mean intensity stays near the background") {
    for (double noise : {0.0, 0.05}) {
        SceneParams p;
        p.noise_sigma = noise;
        for (std::uint64_t seed = 0; seed < 50; ++seed) {
            const auto neg = generate_negative(p, seed);
            REQUIRE(std::abs(neg.image.mean() - p.background_intensity) <= 0.1);
        }
    }
}

TEST_CASE("anti-aliased coverage follows the distance rule") {
    const Segment horiz{{2, 5}, {20, 5}};
    const auto pix = rasterize_segment(horiz, 1.0, 32, 32);
    for (const auto& c : pix) {
        if (c.x >= 2 && c.x <= 20) {
            const double d = std::abs(c.y - 5.0);
            CHECK(c.coverage == doctest::Approx(std::clamp(1.0 - d, 0.0, 1.0)));
        }
    }
    const auto thick = rasterize_segment(horiz, 3.0, 32, 32);
    CHECK(thick.size() > pix.size());
}

// ---- augmentation ----

TEST_CASE("magnitude 0 is the identity for every kind") {
    const auto img = generate_positive(SceneParams{}, 9).image;
    for (auto kind : {AugmentKind::jitter, AugmentKind::crop, AugmentKind::noise, AugmentKind::blur}) {
        const Augmented a = augment(img, kind, 0.0, 1);
        CHECK(a.image == img);
        CHECK(a.label_transform.is_identity());
    }
}

TEST_CASE("jitter by (5, 0) moves the VP label by (-5, 0)") {
    const auto s = generate_positive(SceneParams{}, 4);
    const Augmented a = jitter(s.image, 5, 0);
    const PixelPoint moved = a.label_transform.apply(s.vp);
    CHECK(moved.x == s.vp.x - 5.0);
    CHECK(moved.y == s.vp.y);
}

TEST_CASE("jitter label transform matches a redrawn shifted scene") {
    const SceneParams p;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto s = generate_positive(p, seed);
        const int dx = 3, dy = -2;
        const Augmented a = jitter(s.image, dx, dy);
        Scene shifted = s.scene;
        for (auto& seg : shifted.lines) {
            seg.a = a.label_transform.apply(seg.a);
            seg.b = a.label_transform.apply(seg.b);
        }
        const ImageRaster redrawn = render(shifted);
        // Compare away from the replicated border.
        for (int y = 4; y < p.height - 4; ++y) {
            for (int x = 4; x < p.width - 4; ++x) {
                REQUIRE(a.image.at(x, y) == doctest::Approx(redrawn.at(x, y)).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("crop label transform follows a bright dot") {
    ImageRaster img(64, 64, 0.0);
    img.at(40, 30) = 1.0;
    const Augmented a = crop_rescale(img, 8, 6, 48, 48);
    const PixelPoint expect = a.label_transform.apply({40, 30});
    int bx = 0, by = 0;
    for (int y = 0; y < 64; ++y) {
        for (int x = 0; x < 64; ++x) {
            if (a.image.at(x, y) > a.image.at(bx, by)) {
                bx = x;
                by = y;
            }
        }
    }
    CHECK(std::abs(bx - expect.x) <= 1.0);
    CHECK(std::abs(by - expect.y) <= 1.0);
    CHECK(a.label_transform.sx == doctest::Approx(64.0 / 48.0));
}

TEST_CASE("blur of a constant image is the same image") {
    const ImageRaster flat(16, 12, 0.37);
    CHECK(box_blur(flat, 1) == flat);
    CHECK(augment(flat, AugmentKind::blur, 1.0, 0).image == flat);
    CHECK(augment(flat, AugmentKind::blur, 1.0, 0).label_transform.is_identity());
}

TEST_CASE("augment outputs stay in [0,1] and crop errors") {
    const auto img = generate_positive(SceneParams{}, 1).image;
    const Augmented n = augment(img, AugmentKind::noise, 0.5, 3);
    for (double v : n.image.pixels()) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 1.0);
    }
    CHECK(n.label_transform.is_identity());
    CHECK_THROWS_AS(augment(img, AugmentKind::crop, 64.0, 0), DomainError);
    CHECK_THROWS_AS(augment(img, AugmentKind::crop, -1.0, 0), DomainError);
    CHECK_THROWS_AS(crop_rescale(img, 10, 10, 60, 20), DomainError);
    CHECK_THROWS_AS(parse_augment_kind("rotate"), DomainError);
    CHECK(augment(img, AugmentKind::noise, 0.2, 7).image == augment(img, AugmentKind::noise, 0.2, 7).image);
}

// ---- dataset ----

TEST_CASE("train counts use floor per class") {
    CHECK(train_count(100, 0.88) == 88);
    CHECK(train_count(7, 0.5) == 3);
    const oracle::ScratchDir dir("frac");
    DatasetRequest req;
    req.n_pos = 2;
    for (double f : {0.0, 1.0, -0.5}) {
        req.train_fraction = f;
        CHECK_THROWS_AS(build_dataset(req, 0, dir.path), DomainError);
    }
}

TEST_CASE("build_dataset with 100+100 at 0.88 gives 176 train and 24 test") {
    const oracle::ScratchDir dir("ds");
    DatasetRequest req;
    req.n_pos = 100;
    req.n_neg = 100;
    req.params.width = req.params.height = 32;
    req.params.vp_prior_sigma = 3.2;
    const DatasetManifest m = build_dataset(req, 77, dir.path);
    CHECK(m.entries.size() == 200);
    CHECK(m.select(Split::train).size() == 176);
    CHECK(m.select(Split::test).size() == 24);
    std::set<std::string> paths;
    int pos = 0;
    for (const auto& e : m.entries) {
        paths.insert(e.path);
        REQUIRE(std::filesystem::exists(dir.path / e.path));
        REQUIRE(e.has_vp == e.vp.has_value());
        pos += e.has_vp;
    }
    CHECK(paths.size() == 200);
    CHECK(pos == 100);
    CHECK(read_manifest(dir.path / kManifestFileName) == m);

    // VP recorded with six decimals matches the image's generator.
    const auto& first = *m.select(Split::train).front();
    if (first.has_vp) {
        const auto s = generate_positive(req.params, first.seed);
        CHECK(std::abs(s.vp.x - first.vp->x) < 1e-6);
        CHECK(read_pgm(dir.path / first.path) == quantize_8bit(s.image));
    }
}

TEST_CASE("split membership depends only on the dataset seed") {
    const oracle::ScratchDir a("dsa"), b("dsb");
    DatasetRequest req;
    req.n_pos = 20;
    req.n_neg = 10;
    req.train_fraction = 0.5;
    req.params.width = req.params.height = 16;
    req.params.vp_prior_sigma = 1.6;
    const auto m1 = build_dataset(req, 5, a.path);
    const auto m2 = build_dataset(req, 5, b.path);
    CHECK(m1 == m2);
    CHECK(read_file_bytes(a.path / kManifestFileName) == read_file_bytes(b.path / kManifestFileName));
    for (const auto& e : m1.entries) {
        REQUIRE(read_file_bytes(a.path / e.path) == read_file_bytes(b.path / e.path));
    }
    std::set<std::string> train, test;
    for (const auto* e : m1.select(Split::train)) {
        train.insert(e->path);
    }
    for (const auto* e : m1.select(Split::test)) {
        test.insert(e->path);
    }
    CHECK(train.size() + test.size() == 30);
    for (const auto& t : train) {
        CHECK(test.count(t) == 0);
    }
    const oracle::ScratchDir c("dsc");
    CHECK_FALSE(build_dataset(req, 6, c.path) == m1);
}

TEST_CASE("manifest text round trip and parse errors") {
    DatasetManifest m;
    m.width = 64;
    m.height = 48;
    m.grids = {8, 4};
    m.entries.push_back({"images/pos_000000.pgm", Split::train, true, PixelPoint{12.5, 30.25}, 9});
    m.entries.push_back({"images/neg_000001.pgm", Split::test, false, std::nullopt, 8});
    const std::string text = format_manifest(m);
    CHECK(text.find("12.500000 30.250000") != std::string::npos);
    CHECK(parse_manifest(text) == m);
    CHECK(format_manifest(parse_manifest(text)) == text);

    CHECK_THROWS_AS(parse_manifest("not-a-manifest\n"), ParseError);
    std::string dup = text;
    dup.replace(dup.find("neg_000001"), 10, "pos_000000");
    CHECK_THROWS(parse_manifest(dup));
    std::string bad_flag = text;
    bad_flag.replace(bad_flag.find(" test 0 - -"), 11, " test 0 1 2");
    CHECK_THROWS(parse_manifest(bad_flag));
}

TEST_CASE("build_dataset into an unwritable directory is an I/O error") {
    const oracle::ScratchDir dir("ro");
    std::ofstream(dir.path / "file") << "x";
    DatasetRequest req;
    req.n_pos = 1;
    req.n_neg = 1;
    req.train_fraction = 0.5;
    CHECK_THROWS_AS(build_dataset(req, 0, dir.path / "file" / "sub"), IoError);
}
