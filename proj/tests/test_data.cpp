#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <random>

#include "bseg/data.hpp"

using namespace bseg;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path / "images");
        fs::create_directories(path / "masks");
    }
    ~TempDir() { fs::remove_all(path); }
};

Tensor quantized_image(int64_t size, std::mt19937_64& rng) {
    Tensor img({3, size, size});
    for (int64_t i = 0; i < img.numel(); ++i)
        img[i] = static_cast<double>(rng() % 256) / 255.0;  // byte-exact values
    return img;
}

Mask random_label_mask(int64_t h, int64_t w, int32_t k_max, std::mt19937_64& rng) {
    Mask m(h, w);
    for (auto& v : m.v) v = static_cast<int32_t>(rng() % static_cast<uint64_t>(k_max + 1));
    return m;
}

}  // namespace

TEST_CASE("boundary derivation from label masks") {
    SUBCASE("empty mask -> empty boundary") {
        CHECK(boundary_from_mask(Mask(6, 6)).count_nonzero() == 0);
    }
    SUBCASE("single foreground pixel is its own boundary") {
        Mask m(5, 5);
        m.at(2, 3) = 1;
        Mask b = boundary_from_mask(m);
        CHECK(b.count_nonzero() == 1);
        CHECK(b.at(2, 3) == 1);
    }
    SUBCASE("filled 4x4 square: exactly its 12 perimeter pixels") {
        Mask m(8, 8);
        for (int64_t y = 2; y < 6; ++y)
            for (int64_t x = 2; x < 6; ++x) m.at(y, x) = 1;
        Mask b = boundary_from_mask(m, 1);
        CHECK(b.count_nonzero() == 12);
        for (int64_t y = 2; y < 6; ++y)
            for (int64_t x = 2; x < 6; ++x) {
                const bool interior = y >= 3 && y <= 4 && x >= 3 && x <= 4;
                CHECK(b.at(y, x) == (interior ? 0 : 1));
            }
        // nothing outside the square
        CHECK(b.at(1, 2) == 0);
        CHECK(b.at(2, 1) == 0);
    }
    SUBCASE("transitions between two foreground classes mark both sides") {
        Mask m(2, 4);
        m.at(0, 0) = m.at(0, 1) = m.at(1, 0) = m.at(1, 1) = 1;
        m.at(0, 2) = m.at(0, 3) = m.at(1, 2) = m.at(1, 3) = 2;
        Mask b = boundary_from_mask(m);
        CHECK(b.at(0, 1) == 1);
        CHECK(b.at(0, 2) == 1);
        CHECK(b.at(0, 0) == 0);  // only grid-internal transitions count
    }
    SUBCASE("width dilates the transition band") {
        Mask m(9, 9);
        for (int64_t y = 3; y < 6; ++y)
            for (int64_t x = 3; x < 6; ++x) m.at(y, x) = 1;
        const int64_t w1 = boundary_from_mask(m, 1).count_nonzero();
        const int64_t w2 = boundary_from_mask(m, 2).count_nonzero();
        CHECK(w2 > w1);
        CHECK_THROWS_AS(boundary_from_mask(m, 0), ShapeError);
    }
    SUBCASE("invariant under permutations of the nonzero labels") {
        std::mt19937_64 rng(31);
        for (int trial = 0; trial < 100; ++trial) {
            Mask m = random_label_mask(8, 8, 3, rng);
            std::array<int32_t, 3> perm{1, 2, 3};
            std::shuffle(perm.begin(), perm.end(), rng);
            Mask permuted = m;
            for (auto& v : permuted.v)
                if (v != 0) v = perm[static_cast<size_t>(v - 1)];
            Mask a = boundary_from_mask(m);
            Mask b = boundary_from_mask(permuted);
            REQUIRE(a.v == b.v);
        }
    }
}

TEST_CASE("synthetic dataset generator") {
    SUBCASE("same seed twice is bitwise identical") {
        auto a = synth_dataset(4, 64, 99);
        auto b = synth_dataset(4, 64, 99);
        REQUIRE(a.size() == 4);
        for (size_t i = 0; i < 4; ++i) {
            REQUIRE(a[i].id == b[i].id);
            REQUIRE(a[i].mask.v == b[i].mask.v);
            for (int64_t j = 0; j < a[i].image.numel(); ++j)
                REQUIRE(a[i].image[j] == b[i].image[j]);
        }
        auto c = synth_dataset(4, 64, 100);
        bool differs = false;
        for (int64_t j = 0; j < a[0].image.numel(); ++j)
            if (a[0].image[j] != c[0].image[j]) differs = true;
        CHECK(differs);
    }
    SUBCASE("shapes, value ranges and nonempty boundaries") {
        auto samples = synth_dataset(8, 64, 5);
        CHECK(samples.size() == 8);
        for (const Sample& s : samples) {
            CHECK(s.image.shape() == Shape{3, 64, 64});
            CHECK(s.image.min() >= 0.0);
            CHECK(s.image.max() <= 1.0);
            CHECK(s.mask.count_nonzero() > 0);  // the generator guarantees >= 1 shape
            CHECK(s.boundary.count_nonzero() > 0);
        }
    }
    SUBCASE("size constraints are enforced") {
        CHECK_THROWS_AS(synth_dataset(0, 64, 1), ShapeError);
        CHECK_THROWS_AS(synth_dataset(1, 60, 1), ShapeError);
    }
}

TEST_CASE("dataset loading from the images/masks layout") {
    std::mt19937_64 rng(41);
    TempDir dir("bseg_data_test");

    auto put_pair = [&](const std::string& id, int64_t size) {
        std::mt19937_64 r(std::hash<std::string>{}(id));
        write_image_png((dir.path / "images" / (id + ".png")).string(), quantized_image(size, r));
        Mask m(size, size);
        for (int64_t y = size / 4; y < size / 2; ++y)
            for (int64_t x = size / 4; x < size / 2; ++x) m.at(y, x) = 1;
        write_mask_png((dir.path / "masks" / (id + ".png")).string(), m);
    };

    SUBCASE("three pairs load in lexicographic order") {
        put_pair("b_scan", 64);
        put_pair("a_scan", 64);
        put_pair("c_scan", 64);
        auto samples = load_dataset(dir.path.string(), 64);
        REQUIRE(samples.size() == 3);
        CHECK(samples[0].id == "a_scan");
        CHECK(samples[1].id == "b_scan");
        CHECK(samples[2].id == "c_scan");
        for (const Sample& s : samples) {
            CHECK(s.image.shape() == Shape{3, 64, 64});
            CHECK(s.mask.count_nonzero() > 0);
            CHECK(s.boundary.count_nonzero() > 0);
        }
    }
    SUBCASE("missing mask is reported with the stem") {
        put_pair("ok", 64);
        std::mt19937_64 r(1);
        write_image_png((dir.path / "images" / "orphan.png").string(), quantized_image(64, r));
        try {
            load_dataset(dir.path.string(), 64);
            FAIL("expected DataError");
        } catch (const DataError& e) {
            CHECK(std::string(e.what()).find("orphan") != std::string::npos);
        }
    }
    SUBCASE("image/mask dimension mismatch is a distinct error") {
        std::mt19937_64 r(2);
        write_image_png((dir.path / "images" / "bad.png").string(), quantized_image(64, r));
        write_mask_png((dir.path / "masks" / "bad.png").string(), Mask(32, 32));
        try {
            load_dataset(dir.path.string(), 64);
            FAIL("expected DataError");
        } catch (const DataError& e) {
            CHECK(std::string(e.what()).find("size mismatch") != std::string::npos);
        }
    }
    SUBCASE("larger inputs are resized to the requested square") {
        put_pair("big", 128);
        auto samples = load_dataset(dir.path.string(), 64);
        REQUIRE(samples.size() == 1);
        CHECK(samples[0].image.shape() == Shape{3, 64, 64});
        CHECK(samples[0].mask.h == 64);
        // nearest-neighbor mask resize keeps labels binary
        for (int32_t v : samples[0].mask.v) CHECK((v == 0 || v == 1));
    }
    SUBCASE("loading at native size changes no pixel") {
        std::mt19937_64 r(3);
        Tensor original = quantized_image(64, r);
        write_image_png((dir.path / "images" / "native.png").string(), original);
        Mask m(64, 64);
        m.at(10, 10) = 1;
        write_mask_png((dir.path / "masks" / "native.png").string(), m);
        auto samples = load_dataset(dir.path.string(), 64);
        REQUIRE(samples.size() == 1);
        for (int64_t i = 0; i < original.numel(); ++i)
            REQUIRE(samples[0].image[i] == original[i]);
        CHECK(samples[0].mask.v == m.v);
    }
    SUBCASE("unreadable file is a distinct error") {
        std::ofstream((dir.path / "images" / "junk.png").string()) << "not a png";
        std::ofstream((dir.path / "masks" / "junk.png").string()) << "not a png";
        CHECK_THROWS_AS(load_dataset(dir.path.string(), 64), DataError);
    }
    SUBCASE("missing directories are rejected") {
        CHECK_THROWS_AS(scan_dataset((dir.path / "nope").string()), DataError);
    }
}

TEST_CASE("batch assembly stacks images and integer maps") {
    auto samples = synth_dataset(3, 64, 7);
    Batch b = make_batch(samples, {2, 0});
    CHECK(b.images.shape() == Shape{2, 3, 64, 64});
    CHECK(b.labels.shape() == Shape{2, 1, 64, 64});
    CHECK(b.boundaries.shape() == Shape{2, 1, 64, 64});
    CHECK(b.images.at(0, 0, 5, 5) == samples[2].image[5 * 64 + 5]);
    CHECK(b.labels.at(1, 0, 10, 10) == static_cast<double>(samples[0].mask.at(10, 10)));
}
