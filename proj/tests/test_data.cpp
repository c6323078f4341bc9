#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "ibnn/data.hpp"

using namespace ibnn;

namespace {

std::string read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_bytes(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("cubic regression dataset") {
    SUBCASE("zero noise gives y = x^3 exactly") {
        Rng rng(80);
        auto c = make_cubic_regression(30, -1.0, 1.0, 0.0, rng);
        CHECK(c.train.size() == 30);
        for (std::int64_t i = 0; i < 30; ++i) {
            const double x = c.train.inputs[i];
            CHECK(c.train.targets[i] == x * x * x);
        }
    }
    SUBCASE("fixed seed reproduces the dataset") {
        Rng r1(81), r2(81);
        auto a = make_cubic_regression(30, -1.0, 1.0, 0.1, r1);
        auto b = make_cubic_regression(30, -1.0, 1.0, 0.1, r2);
        CHECK(a.train.inputs == b.train.inputs);
        CHECK(a.train.targets == b.train.targets);
    }
    SUBCASE("grid extends beyond the training range") {
        Rng rng(82);
        auto c = make_cubic_regression(10, -1.0, 1.0, 0.0, rng, 0.5, 101);
        CHECK(c.grid.size() == 101);
        CHECK(c.grid.inputs.front() == doctest::Approx(-2.0).epsilon(1e-12));
        CHECK(c.grid.inputs.back() == doctest::Approx(2.0).epsilon(1e-12));
    }
}

TEST_CASE("regression csv round trip") {
    Rng rng(83);
    auto c = make_cubic_regression(12, -1.0, 1.0, 0.05, rng);
    const std::string path = "/tmp/ibnn_test_reg.csv";
    save_regression_csv(c.train, path);
    auto loaded = load_regression_csv(path);
    CHECK(loaded.inputs == c.train.inputs);
    CHECK(loaded.targets == c.train.targets);
    std::remove(path.c_str());
}

TEST_CASE("idx fixture built byte-by-byte parses to exact pixels") {
    // two 2x3 images and two labels, assembled by hand
    std::string images;
    const auto be = [](std::uint32_t v) {
        std::string s(4, '\0');
        s[0] = static_cast<char>(v >> 24);
        s[1] = static_cast<char>(v >> 16);
        s[2] = static_cast<char>(v >> 8);
        s[3] = static_cast<char>(v);
        return s;
    };
    images += be(0x00000803);
    images += be(2);  // count
    images += be(2);  // rows
    images += be(3);  // cols
    const std::uint8_t pix[12] = {0, 51, 102, 153, 204, 255, 255, 128, 0, 1, 2, 3};
    images.append(reinterpret_cast<const char*>(pix), 12);

    std::string labels;
    labels += be(0x00000801);
    labels += be(2);
    labels += '\x07';
    labels += '\x02';

    const std::string ipath = "/tmp/ibnn_test_imgs.idx";
    const std::string lpath = "/tmp/ibnn_test_labs.idx";
    write_bytes(ipath, images);
    write_bytes(lpath, labels);

    auto data = load_idx(ipath, lpath);
    CHECK(data.size() == 2);
    CHECK(data.example_shape == Shape{1, 2, 3});
    CHECK(data.labels == std::vector<std::int64_t>{7, 2});
    for (int i = 0; i < 12; ++i) {
        CHECK(data.inputs[i] == static_cast<double>(pix[i]) / 255.0);
    }
    CHECK(data.inputs[5] == 1.0);

    SUBCASE("library writer reproduces the fixture bytes") {
        const std::string ipath2 = "/tmp/ibnn_test_imgs2.idx";
        const std::string lpath2 = "/tmp/ibnn_test_labs2.idx";
        write_idx_images(ipath2, pix, 2, 2, 3);
        const std::uint8_t labs[2] = {7, 2};
        write_idx_labels(lpath2, labs);
        CHECK(read_bytes(ipath2) == images);
        CHECK(read_bytes(lpath2) == labels);
        std::remove(ipath2.c_str());
        std::remove(lpath2.c_str());
    }

    SUBCASE("wrong magic is a format error") {
        std::string bad = images;
        bad[3] = '\x05';
        write_bytes(ipath, bad);
        CHECK_THROWS_AS(load_idx(ipath, lpath), FormatError);
    }
    SUBCASE("count mismatch is a consistency error") {
        std::string bad_labels;
        bad_labels += be(0x00000801);
        bad_labels += be(3);
        bad_labels += "\x07\x02\x01";
        write_bytes(lpath, bad_labels);
        CHECK_THROWS_AS(load_idx(ipath, lpath), DataError);
    }
    SUBCASE("truncated image payload is a format error") {
        write_bytes(ipath, images.substr(0, images.size() - 3));
        CHECK_THROWS_AS(load_idx(ipath, lpath), FormatError);
    }
    std::remove(ipath.c_str());
    std::remove(lpath.c_str());
}

TEST_CASE("gaussian mix corruption") {
    Rng rng(84);
    std::vector<double> x(1000);
    for (auto& v : x) v = 0.5;

    SUBCASE("gamma 0 is the identity") {
        auto out = gaussian_mix_corrupt(x, 0.0, rng);
        CHECK(out == x);
    }
    SUBCASE("gamma 1 is standard normal noise") {
        std::vector<double> big(100000, 0.5);
        auto out = gaussian_mix_corrupt(big, 1.0, rng);
        double mean = 0.0, sq = 0.0;
        for (double v : out) {
            mean += v;
            sq += v * v;
        }
        mean /= static_cast<double>(out.size());
        const double sd = std::sqrt(sq / static_cast<double>(out.size()) - mean * mean);
        CHECK(std::abs(mean) < 0.02);
        CHECK(std::abs(sd - 1.0) < 0.02);
    }
    SUBCASE("gamma 0.5 with eps pinned to zero halves the input") {
        std::vector<double> eps(x.size(), 0.0);
        auto out = gaussian_mix_apply(x, 0.5, eps);
        for (double v : out) CHECK(v == 0.25);
    }
    SUBCASE("gamma outside [0,1] is rejected") {
        CHECK_THROWS_AS(gaussian_mix_corrupt(x, -0.1, rng), ConfigError);
        CHECK_THROWS_AS(gaussian_mix_corrupt(x, 1.1, rng), ConfigError);
    }
    SUBCASE("same seed, same corruption") {
        Rng r1(85), r2(85);
        CHECK(gaussian_mix_corrupt(x, 0.3, r1) == gaussian_mix_corrupt(x, 0.3, r2));
    }
}

TEST_CASE("salt and pepper corruption") {
    Rng rng(86);
    std::vector<double> x(100000, 0.5);

    SUBCASE("p 0 is the identity") {
        CHECK(salt_pepper_corrupt(x, 0.0, rng) == x);
    }
    SUBCASE("p 1 sets everything to 0 or 1 with equal salt share") {
        auto out = salt_pepper_corrupt(x, 1.0, rng);
        std::int64_t ones = 0;
        for (double v : out) {
            CHECK((v == 0.0 || v == 1.0));
            if (v == 1.0) ++ones;
        }
        const double frac = static_cast<double>(ones) / static_cast<double>(out.size());
        CHECK(std::abs(frac - 0.5) < 3.0 * std::sqrt(0.25 / static_cast<double>(out.size())));
    }
    SUBCASE("corrupted fraction tracks p within the binomial bound") {
        const double p = 0.3;
        auto out = salt_pepper_corrupt(x, p, rng);
        std::int64_t corrupted = 0;
        for (double v : out) {
            if (v != 0.5) ++corrupted;
        }
        const double frac = static_cast<double>(corrupted) / static_cast<double>(out.size());
        CHECK(std::abs(frac - p) < 3.0 * std::sqrt(p * (1 - p) / static_cast<double>(out.size())));
    }
    SUBCASE("p outside [0,1] is rejected") {
        CHECK_THROWS_AS(salt_pepper_corrupt(x, 1.5, rng), ConfigError);
    }
}

TEST_CASE("synthetic images are valid and reproducible") {
    Rng r1(87), r2(87);
    auto a = make_synthetic_images(50, 20, 4, 3, 3, 0.3, 0.05, r1);
    auto b = make_synthetic_images(50, 20, 4, 3, 3, 0.3, 0.05, r2);
    CHECK(a.train.inputs == b.train.inputs);
    CHECK(a.test.labels == b.test.labels);
    CHECK(a.train.size() == 50);
    CHECK(a.test.size() == 20);
    CHECK(a.train.example_shape == Shape{1, 3, 3});
    for (double v : a.train.inputs) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    for (auto l : a.train.labels) {
        CHECK(l >= 0);
        CHECK(l < 4);
    }
}

TEST_CASE("corruption sweep shape and ordering") {
    Rng rng(88);
    auto tt = make_synthetic_images(8, 8, 3, 2, 2, 0.2, 0.0, rng);

    Model m;
    m.kind = ModelKind::Ibnn;
    m.K = 2;
    Rng mrng(89);
    m.layers.push_back(make_ibnn_dense(4, 6, 2, 0.3, Activation::Relu, mrng));
    m.layers.push_back(make_ibnn_dense(6, 3, 2, 0.3, Activation::Identity, mrng));

    std::vector<double> intensities{0.0, 0.5, 1.0};
    auto rows = corruption_sweep(m, tt.test, CorruptionKind::GaussianMix, intensities, 2, 99);
    REQUIRE(rows.size() == 3);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i].intensity == intensities[i]);
        CHECK(rows[i].mpe == doctest::Approx(rows[i].aleatoric + rows[i].epistemic).epsilon(1e-12));
    }

    // the zero-intensity row equals a clean prediction with the sweep's rng
    std::vector<std::int64_t> all(static_cast<std::size_t>(tt.test.size()));
    std::iota(all.begin(), all.end(), 0);
    Rng clean_rng = make_rng(99, {0xBEEFull, 0ull});
    auto clean = predict(m, gather_inputs(tt.test, all), tt.test.labels, 2, clean_rng);
    CHECK(rows[0].mpe == uncertainty_decomposition(clean).mean_total);

    std::vector<double> unsorted{0.5, 0.0};
    CHECK_THROWS_AS(corruption_sweep(m, tt.test, CorruptionKind::GaussianMix, unsorted, 2, 99),
                    ConfigError);

    // deterministic across calls
    auto rows2 = corruption_sweep(m, tt.test, CorruptionKind::GaussianMix, intensities, 2, 99);
    for (std::size_t i = 0; i < rows.size(); ++i) CHECK(rows[i].mpe == rows2[i].mpe);
}
