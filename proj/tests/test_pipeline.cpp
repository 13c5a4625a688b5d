#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "dunet/pipeline.hpp"
#include "images.hpp"

using namespace dunet;
using namespace dunet::pipeline;
namespace fs = std::filesystem;
using dunet::testing::disc_image;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("dunet_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST(Png, GrayRoundTripIsExactOn8BitValues) {
    const fs::path dir = scratch("png");
    Tensor t(Shape{1, 1, 5, 7});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>((i * 37) % 256) / 255.0f;
    write_png(dir / "g.png", t, {{"seed", "42"}});
    EXPECT_EQ(read_png(dir / "g.png"), t);
    EXPECT_EQ(read_png_text(dir / "g.png").at("seed"), "42");
}

TEST(Png, ColorAndMask) {
    const fs::path dir = scratch("png_rgb");
    Tensor t(Shape{1, 3, 4, 4});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(i % 256) / 255.0f;
    write_png(dir / "c.png", t);
    EXPECT_EQ(read_png(dir / "c.png"), t);
    BinaryMask m(3, 4);
    m.at(1, 2) = 1;
    write_mask_png(dir / "m.png", m);
    EXPECT_EQ(read_mask_png(dir / "m.png"), m);
    EXPECT_THROW(read_png(dir / "missing.png"), Error);
}

TEST(Rasterize, CircleAreaConvergesToAnalytic) {
    for (auto [r, tol] : {std::pair{20.0, 0.01}, {50.0, 0.005}, {100.0, 0.0025}}) {
        const BinaryMask m = rasterize_ellipse_mask(Ellipse{128.3, 127.6, r, r, 0.0}, 256, 256);
        const double area = std::numbers::pi * r * r;
        EXPECT_LE(std::abs(static_cast<double>(m.count()) - area) / area, tol) << "r = " << r;
    }
}

TEST(Rasterize, RotationByQuarterTurnIsTranspose) {
    const int n = 9;
    const BinaryMask a = rasterize_ellipse_mask(Ellipse{4, 4, 2, 1, std::numbers::pi / 2}, n, n);
    const BinaryMask b = rasterize_ellipse_mask(Ellipse{4, 4, 2, 1, 0}, n, n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) EXPECT_EQ(a.at(y, x), b.at(x, y));
    EXPECT_EQ(b.count(), 7u);  // (0,0), (+-1,0), (+-2,0), (0,+-1)
}

TEST(Rasterize, OutsideFrameIsEmpty) {
    EXPECT_EQ(rasterize_ellipse_mask(Ellipse{-50, -50, 10, 5, 0.3}, 32, 32).count(), 0u);
}

TEST(Ellipse, Canonicalization) {
    const Ellipse e = Ellipse{0, 0, 1, 2, 0.25}.canonical();
    EXPECT_EQ(e.a, 2);
    EXPECT_EQ(e.b, 1);
    EXPECT_NEAR(e.theta, 0.25 + std::numbers::pi / 2, 1e-12);
    EXPECT_NEAR((Ellipse{0, 0, 3, 1, -0.5}.canonical().theta), std::numbers::pi - 0.5, 1e-12);
    EXPECT_NEAR((Ellipse{0, 0, 3, 1, 7.0}.canonical().theta), 7.0 - 2 * std::numbers::pi, 1e-12);
    EXPECT_THROW(Ellipse({0, 0, 3, 0, 0}).canonical(), Error);
}

TEST(Hough, FindsBrightDisc) {
    const Tensor img = disc_image(256, 100, 120, 40, 0.8f, 0.2f, 0.03, 1);
    const RoiBox box = localize_od(img, 10, 80);
    EXPECT_NEAR(box.cx, 100, 2);
    EXPECT_NEAR(box.cy, 120, 2);
    EXPECT_NEAR(box.radius, 40, 2);
    EXPECT_DOUBLE_EQ(box.side, 3 * box.radius);
}

TEST(Hough, BrighterDiscWins) {
    Tensor img = disc_image(256, 70, 70, 30, 0.55f, 0.2f, 0.0, 0);
    const Tensor other = disc_image(256, 180, 170, 30, 0.9f, 0.2f, 0.0, 0);
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = std::max(img[i], other[i]);
    const RoiBox box = localize_od(img, 10, 60);
    EXPECT_NEAR(box.cx, 180, 2);
    EXPECT_NEAR(box.cy, 170, 2);
}

TEST(Hough, InvariantToConstantOffset) {
    std::mt19937_64 rng(17);
    for (int k = 0; k < 5; ++k) {
        std::uniform_real_distribution<double> u(50, 200);
        Tensor img = disc_image(256, u(rng), u(rng), 25 + k * 4, 0.7f, 0.1f, 0.02, 100 + k);
        const RoiBox a = localize_od(img, 10, 70);
        for (auto& v : img.data()) v += 0.25f;
        const RoiBox b = localize_od(img, 10, 70);
        EXPECT_EQ(a.cx, b.cx);
        EXPECT_EQ(a.cy, b.cy);
        EXPECT_EQ(a.radius, b.radius);
    }
}

TEST(Hough, UniformImageHasNoCircle) {
    EXPECT_THROW(localize_od(Tensor(Shape{1, 1, 64, 64}, 0.4f), 5, 20), Error);
    EXPECT_THROW(localize_od(Tensor(Shape{1, 1, 64, 64}, 0.4f), 20, 5), Error);
}

TEST(Roi, IdentityWhenSideMatchesOutput) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<float> u(0, 1);
    Tensor img(Shape{1, 1, 200, 200});
    for (auto& v : img.data()) v = u(rng);
    const RoiBox box{100, 90, 40, 120};
    const Tensor roi = extract_roi(img, box, 120);
    ASSERT_EQ(roi.shape(), (Shape{1, 1, 120, 120}));
    for (int i = 0; i < 120; ++i)
        for (int j = 0; j < 120; ++j) EXPECT_NEAR(roi(0, 0, i, j), img(0, 0, 30 + i, 40 + j), 1e-6);
}

TEST(Roi, CornerIsZeroPadded) {
    const Tensor img(Shape{1, 3, 64, 64}, 1.0f);
    const Tensor roi = extract_roi(img, RoiBox{0, 0, 10, 30}, 30);
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 30; ++i)
            for (int j = 0; j < 30; ++j) {
                const bool outside = i < 15 || j < 15;
                EXPECT_EQ(roi(0, c, i, j), outside ? 0.0f : 1.0f) << i << "," << j;
            }
    EXPECT_THROW(extract_roi(img, RoiBox{0, 0, 0, 0}, 30), Error);
    EXPECT_THROW(extract_roi(img, RoiBox{500, 500, 10, 30}, 30), Error);
}

TEST(Roi, SyntheticFundusKeepsDisc) {
    const auto samples = generate_synthetic(Task::fundus, 12, 5, 256);
    for (const auto& s : samples) {
        const RoiBox box = localize_od(s.image, 10, 80);
        std::size_t inside = 0;
        for (int y = 0; y < 256; ++y)
            for (int x = 0; x < 256; ++x)
                if (s.mask.at(y, x) && std::abs(x - box.cx) <= box.side / 2 && std::abs(y - box.cy) <= box.side / 2) ++inside;
        EXPECT_GE(static_cast<double>(inside), 0.99 * static_cast<double>(s.mask.count())) << s.id;
    }
}

TEST(Synthetic, DeterministicAndWellFormed) {
    for (Task task : {Task::fundus, Task::ultrasound}) {
        const auto a = generate_synthetic(task, 6, 99, 64);
        const auto b = generate_synthetic(task, 6, 99, 64);
        const auto c = generate_synthetic(task, 6, 100, 64);
        ASSERT_EQ(a.size(), 6u);
        for (std::size_t i = 0; i < a.size(); ++i) {
            EXPECT_EQ(a[i].image, b[i].image);
            EXPECT_EQ(a[i].mask, b[i].mask);
            EXPECT_GT(a[i].mask.count(), 0u);
            EXPECT_EQ(a[i].mask, rasterize_ellipse_mask(a[i].disc_or_head, 64, 64));
            for (float v : a[i].image.data()) {
                EXPECT_GE(v, 0.0f);
                EXPECT_LE(v, 1.0f);
                EXPECT_EQ(std::round(v * 255.0f), v * 255.0f);
            }
        }
        EXPECT_FALSE(a[0].image == c[0].image);
    }
}

TEST(Synthetic, PrefixStableInN) {
    const auto a = generate_synthetic(Task::ultrasound, 3, 7, 64);
    const auto b = generate_synthetic(Task::ultrasound, 8, 7, 64);
    for (int i = 0; i < 3; ++i) EXPECT_EQ(a[i].image, b[i].image);
}

TEST(Synthetic, CupInsideDisc) {
    for (const auto& s : generate_synthetic(Task::fundus, 64, 3, 64)) {
        EXPECT_GT(s.cup.count(), 0u) << s.id;
        for (std::size_t i = 0; i < s.cup.bits.size(); ++i)
            if (s.cup.bits[i]) ASSERT_TRUE(s.mask.bits[i]) << s.id;
    }
}

TEST(Synthetic, DiscIsBrighterThanBackgroundAndCupDarkerThanRim) {
    for (const auto& s : generate_synthetic(Task::fundus, 8, 4, 128)) {
        double rim = 0, cup = 0, bg = 0;
        std::size_t nr = 0, nc = 0, nb = 0;
        for (std::size_t i = 0; i < s.mask.bits.size(); ++i) {
            const double v = s.image[i];
            if (s.cup.bits[i]) {
                cup += v;
                ++nc;
            } else if (s.mask.bits[i]) {
                rim += v;
                ++nr;
            } else {
                bg += v;
                ++nb;
            }
        }
        EXPECT_GT(rim / nr, cup / nc);
        EXPECT_GT(cup / nc, bg / nb);
    }
}

TEST(Manifest, RoundTrip) {
    const fs::path dir = scratch("manifest");
    std::vector<SampleRecord> recs;
    recs.push_back({"a", dir / "images/a.png", dir / "masks/a.png", MaskEncoding::binary, {}, {}, Split::train});
    recs.push_back({"b", dir / "images/b.png", {}, MaskEncoding::binary, Ellipse{10.5, 20.25, 7, 3, 0.1}, 0.1, Split::test});
    write_manifest(dir / "manifest.csv", recs, {"seed=1"});
    const auto back = read_manifest(dir / "manifest.csv");
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].id, "a");
    EXPECT_EQ(fs::weakly_canonical(back[0].image), fs::weakly_canonical(recs[0].image));
    EXPECT_EQ(fs::weakly_canonical(*back[0].mask), fs::weakly_canonical(*recs[0].mask));
    EXPECT_FALSE(back[0].ellipse.has_value());
    EXPECT_EQ(back[1].ellipse->cy, 20.25);
    EXPECT_EQ(*back[1].pixel_size_mm, 0.1);
    EXPECT_EQ(back[1].split, Split::test);

    std::ofstream(dir / "bad.csv") << "path,maskPath,cx,cy,a,b,theta,pixelSizeMm,split\nx.png,m.png,1,2,3,4,5,,train\n";
    EXPECT_THROW(read_manifest(dir / "bad.csv"), Error);
}

TEST(Dataset, SyntheticRoundTrip) {
    const fs::path dir = scratch("synthetic_ds");
    const auto samples = generate_synthetic(Task::fundus, 10, 12, 64);
    write_synthetic_dataset(dir, samples, Task::fundus, 3, 12);
    const auto res = load_dataset(dir, {Layout::synthetic, "disc", 0.2});
    ASSERT_EQ(res.records.size(), 10u);
    EXPECT_TRUE(res.errors.empty());
    int tests = 0;
    for (std::size_t i = 0; i < 10; ++i) {
        const auto& r = res.records[i];
        EXPECT_EQ(r.id, samples[i].id);
        EXPECT_EQ(read_png(r.image), samples[i].image);
        EXPECT_EQ(load_mask(r, 64, 64), samples[i].mask);
        tests += r.split == Split::test;
    }
    EXPECT_EQ(tests, 3);
    const auto cups = load_dataset(dir, {Layout::synthetic, "cup", 0.2});
    ASSERT_EQ(cups.records.size(), 10u);
    EXPECT_EQ(load_mask(cups.records[4], 64, 64), samples[4].cup);

    fs::remove(dir / "images" / (samples[2].id + ".png"));
    const auto partial = load_dataset(dir, {Layout::synthetic, "disc", 0.2});
    EXPECT_EQ(partial.records.size(), 9u);
    EXPECT_EQ(partial.errors.size(), 1u);
}

TEST(Dataset, UltrasoundRecordsCarryEllipseAndPixelSize) {
    const fs::path dir = scratch("us_ds");
    const auto samples = generate_synthetic(Task::ultrasound, 4, 1, 64);
    write_synthetic_dataset(dir, samples, Task::ultrasound, 1, 1);
    const auto res = load_dataset(dir, {});
    ASSERT_EQ(res.records.size(), 4u);
    for (std::size_t i = 0; i < 4; ++i) {
        ASSERT_TRUE(res.records[i].ellipse.has_value());
        EXPECT_FALSE(res.records[i].mask.has_value());
        EXPECT_EQ(*res.records[i].pixel_size_mm, samples[i].pixel_size_mm);
        EXPECT_EQ(load_mask(res.records[i], 64, 64), samples[i].mask);
    }
}

TEST(Dataset, EmptyDirectoryWarns) {
    const fs::path dir = scratch("empty_ds");
    for (Layout l : {Layout::synthetic, Layout::refuge, Layout::drishti, Layout::rimone, Layout::hc18}) {
        const auto res = load_dataset(dir, {l, "disc", 0.2});
        EXPECT_TRUE(res.records.empty());
        EXPECT_FALSE(res.warnings.empty()) << to_string(l);
    }
    EXPECT_THROW(load_dataset(dir / "nope", {}), Error);
}

TEST(Dataset, RefugeGrayLevels) {
    const fs::path dir = scratch("refuge");
    fs::create_directories(dir / "Images");
    fs::create_directories(dir / "Masks");
    Tensor img(Shape{1, 3, 4, 4}, 0.5f);
    Tensor mask(Shape{1, 1, 4, 4}, 1.0f);
    mask(0, 0, 1, 1) = 0.0f;
    mask(0, 0, 1, 2) = 128.0f / 255.0f;
    for (const char* id : {"g0001", "g0002"}) {
        write_png(dir / "Images" / (std::string(id) + ".png"), img);
        write_png(dir / "Masks" / (std::string(id) + ".png"), mask);
    }
    write_png(dir / "Images" / "g0003.png", img);  // no mask
    const auto disc = load_dataset(dir, {Layout::refuge, "disc", 0.5});
    ASSERT_EQ(disc.records.size(), 2u);
    EXPECT_EQ(disc.errors.size(), 1u);
    EXPECT_EQ(disc.records[1].split, Split::test);
    EXPECT_EQ(load_mask(disc.records[0], 4, 4).count(), 2u);
    const auto cup = load_dataset(dir, {Layout::refuge, "cup", 0.5});
    EXPECT_EQ(load_mask(cup.records[0], 4, 4).count(), 1u);
}

TEST(Dataset, Hc18PixelSizeAndEllipse) {
    const fs::path dir = scratch("hc18");
    fs::create_directories(dir / "training_set");
    const Ellipse e{40, 32, 25, 15, 0.4};
    const BinaryMask filled = rasterize_ellipse_mask(e, 64, 80);
    BinaryMask outline(64, 80);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 80; ++x) {
            if (!filled.at(y, x)) continue;
            const bool edge = y == 0 || x == 0 || !filled.at(y - 1, x) || !filled.at(y + 1, x) || !filled.at(y, x - 1) ||
                              !filled.at(y, x + 1);
            outline.at(y, x) = edge;
        }
    write_png(dir / "training_set" / "000_HC.png", Tensor(Shape{1, 1, 64, 80}, 0.3f));
    write_mask_png(dir / "training_set" / "000_HC_Annotation.png", outline);
    std::ofstream(dir / "training_set_pixel_size_and_HC.csv")
        << "filename,pixel size(mm),head circumference (mm)\n000_HC.png,0.1,80.0\n001_HC.png,0.2,90.0\n";
    const auto res = load_dataset(dir, {Layout::hc18, "disc", 0.0});
    ASSERT_EQ(res.records.size(), 1u);
    EXPECT_EQ(res.errors.size(), 1u);
    EXPECT_EQ(*res.records[0].pixel_size_mm, 0.1);
    const Ellipse f = *res.records[0].ellipse;
    EXPECT_NEAR(f.cx, 40, 0.5);
    EXPECT_NEAR(f.cy, 32, 0.5);
    EXPECT_NEAR(f.a, 25, 1.0);
    EXPECT_NEAR(f.b, 15, 1.0);
}
