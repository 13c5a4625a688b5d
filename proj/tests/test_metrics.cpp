#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "dunet/metrics.hpp"
#include "support/mask_oracles.hpp"

using namespace dunet;
using namespace dunet::metrics;
namespace oracle = dunet::testing;
using dunet::pipeline::rasterize_ellipse_mask;
namespace fs = std::filesystem;

namespace {

BinaryMask from_pixels(int h, int w, std::initializer_list<std::pair<int, int>> yx) {
    BinaryMask m(h, w);
    for (auto [y, x] : yx) m.at(y, x) = 1;
    return m;
}

BinaryMask embed(const BinaryMask& m, int h, int w, int dy, int dx) {
    BinaryMask out(h, w);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) out.at(y + dy, x + dx) = m.at(y, x);
    return out;
}

double angle_diff(double a, double b) { return std::abs(std::remainder(a - b, std::numbers::pi)); }

}  // namespace

TEST(Dice, HandValues) {
    const BinaryMask a = from_pixels(4, 4, {{0, 0}, {0, 1}, {1, 0}, {1, 1}});
    const BinaryMask b = from_pixels(4, 4, {{0, 0}, {1, 1}});
    EXPECT_NEAR(dice(a, b), 0.6667, 5e-5);
    EXPECT_EQ(dice(a, a), 1.0);
    EXPECT_EQ(dice(a, from_pixels(4, 4, {{3, 3}})), 0.0);
    EXPECT_EQ(dice(BinaryMask(4, 4), BinaryMask(4, 4)), 1.0);
    EXPECT_EQ(dice(a, BinaryMask(4, 4)), 0.0);
    EXPECT_THROW(dice(a, BinaryMask(4, 5)), ShapeError);
}

TEST(Dice, MatchesOraclesAndIouIdentity) {
    std::mt19937_64 rng(11);
    for (int k = 0; k < 200; ++k) {
        const BinaryMask a = oracle::random_mask(16, 16, rng), b = oracle::random_mask(16, 16, rng);
        const double d = dice(a, b), j = iou(a, b);
        EXPECT_EQ(d, oracle::dice_oracle(a, b));
        EXPECT_EQ(j, oracle::iou_oracle(a, b));
        EXPECT_NEAR(d, 2 * j / (1 + j), 1e-9);
        EXPECT_GE(d, 0.0);
        EXPECT_LE(d, 1.0);
    }
}

TEST(Miou, HandComputedFourByFour) {
    const BinaryMask a = from_pixels(4, 4, {{0, 0}, {0, 1}});
    const BinaryMask b = from_pixels(4, 4, {{0, 0}});
    const double fg = oracle::iou_oracle(a, b);
    const double bg = oracle::iou_oracle(oracle::complement(a), oracle::complement(b));
    EXPECT_EQ(fg, 0.5);
    EXPECT_NEAR(bg, 14.0 / 15.0, 1e-15);
    const std::vector<std::pair<BinaryMask, BinaryMask>> one{{a, b}};
    EXPECT_NEAR(miou(one), 0.5 * (fg + bg), 1e-15);
    const std::vector<std::pair<BinaryMask, BinaryMask>> two{{a, b}, {a, a}};
    EXPECT_NEAR(miou(two), 0.5 * (0.5 * (fg + bg) + 1.0), 1e-15);
    EXPECT_THROW(miou(std::vector<std::pair<BinaryMask, BinaryMask>>{}), Error);
}

TEST(Miou, MatchesBruteForceOnRandomMasks) {
    std::mt19937_64 rng(12);
    for (int k = 0; k < 100; ++k) {
        const BinaryMask a = oracle::random_mask(4, 4, rng), b = oracle::random_mask(4, 4, rng);
        const double expect =
            0.5 * (oracle::iou_oracle(a, b) + oracle::iou_oracle(oracle::complement(a), oracle::complement(b)));
        EXPECT_NEAR(binary_miou(a, b), expect, 1e-15);
    }
}

TEST(Hausdorff, ThreeFourFive) {
    const BinaryMask a = from_pixels(8, 8, {{0, 0}});
    const BinaryMask b = from_pixels(8, 8, {{4, 3}});
    EXPECT_DOUBLE_EQ(hausdorff(a, b, 1.0), 5.0);
    EXPECT_DOUBLE_EQ(hausdorff(a, b, 0.5), 2.5);
    EXPECT_EQ(hausdorff(a, a, 1.0), 0.0);
}

TEST(Hausdorff, EmptyMaskIsUndefined) {
    const BinaryMask a = from_pixels(8, 8, {{1, 1}});
    try {
        hausdorff(a, BinaryMask(8, 8), 1.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("undefined Hausdorff"), std::string::npos);
    }
}

TEST(Hausdorff, MatchesBruteForceOracle) {
    std::mt19937_64 rng(13);
    for (int k = 0; k < 200; ++k) {
        const BinaryMask a = oracle::random_mask(16, 16, rng), b = oracle::random_mask(16, 16, rng);
        EXPECT_NEAR(hausdorff(a, b, 0.3), oracle::hausdorff_oracle(a, b, 0.3), 1e-9);
        EXPECT_NEAR(hausdorff(a, b, 0.3, HausdorffVariant::mean), oracle::hausdorff_oracle(a, b, 0.3, true), 1e-9);
    }
}

TEST(Hausdorff, SymmetricAndTranslationEquivariant) {
    std::mt19937_64 rng(14);
    std::uniform_int_distribution<int> off(0, 8);
    for (int k = 0; k < 50; ++k) {
        const BinaryMask a = oracle::random_mask(16, 16, rng), b = oracle::random_mask(16, 16, rng);
        EXPECT_EQ(hausdorff(a, b, 1.0), hausdorff(b, a, 1.0));
        const int dy = off(rng), dx = off(rng);
        EXPECT_NEAR(hausdorff(embed(a, 24, 24, dy, dx), embed(b, 24, 24, dy, dx), 1.0), hausdorff(a, b, 1.0), 1e-12);
    }
}

TEST(Hausdorff, VariantStrings) {
    EXPECT_EQ(hausdorff_variant_from_string(to_string(HausdorffVariant::mean)), HausdorffVariant::mean);
    EXPECT_EQ(hausdorff_variant_from_string("max"), HausdorffVariant::max);
    EXPECT_THROW(hausdorff_variant_from_string("avg"), Error);
}

TEST(Boundary, MatchesOracle) {
    std::mt19937_64 rng(15);
    for (int k = 0; k < 50; ++k) {
        const BinaryMask m = oracle::random_mask(12, 9, rng);
        EXPECT_EQ(oracle::pixel_set(boundary(m)), oracle::boundary_set(m));
    }
}

TEST(FitEllipse, RasterRoundTrip) {
    const Ellipse truth{100.3, 95.7, 60, 40, 0.5};
    const Ellipse f = fit_ellipse(rasterize_ellipse_mask(truth, 200, 200));
    EXPECT_NEAR(f.a / truth.a, 1.0, 0.02);
    EXPECT_NEAR(f.b / truth.b, 1.0, 0.02);
    EXPECT_LE(angle_diff(f.theta, truth.theta), 0.05);
    EXPECT_NEAR(f.cx, truth.cx, 0.5);
    EXPECT_NEAR(f.cy, truth.cy, 0.5);
}

TEST(FitEllipse, RandomEllipsesRoundTrip) {
    std::mt19937_64 rng(16);
    std::uniform_real_distribution<double> ub(30, 60), ratio(1.1, 1.8), th(0, std::numbers::pi), c(-5, 5);
    for (int k = 0; k < 10; ++k) {
        const double b = ub(rng);
        const Ellipse truth{128 + c(rng), 128 + c(rng), b * ratio(rng), b, th(rng)};
        const Ellipse f = fit_ellipse(rasterize_ellipse_mask(truth, 256, 256));
        EXPECT_NEAR(f.a / truth.a, 1.0, 0.02);
        EXPECT_NEAR(f.b / truth.b, 1.0, 0.02);
        EXPECT_LE(angle_diff(f.theta, truth.theta), 0.05);
    }
}

TEST(FitEllipse, CircleAndLargestComponent) {
    BinaryMask m = rasterize_ellipse_mask(Ellipse{40, 40, 25, 25, 0}, 100, 100);
    m.at(95, 95) = 1;  // speck that must be ignored
    m.at(95, 96) = 1;
    const Ellipse f = fit_ellipse(m);
    EXPECT_NEAR(f.a / f.b, 1.0, 0.01);
    EXPECT_NEAR(f.a, 25, 0.25);
    EXPECT_NEAR(f.cx, 40, 0.1);
}

TEST(FitEllipse, Errors) {
    EXPECT_THROW(fit_ellipse(from_pixels(8, 8, {{1, 1}, {1, 2}, {2, 2}})), Error);
    EXPECT_THROW(fit_ellipse(BinaryMask(8, 8)), Error);
    std::vector<Point> line;
    for (int i = 0; i < 10; ++i) line.push_back({double(i), 2.0 * i});
    EXPECT_THROW(fit_ellipse(line), Error);
}

TEST(FitEllipse, ExactConicPoints) {
    const Ellipse truth{3, -2, 7, 2, 1.1};
    std::vector<Point> pts;
    for (int i = 0; i < 12; ++i) {
        const double t = 2 * std::numbers::pi * i / 12;
        const double u = truth.a * std::cos(t), v = truth.b * std::sin(t);
        pts.push_back({truth.cx + u * std::cos(truth.theta) - v * std::sin(truth.theta),
                       truth.cy + u * std::sin(truth.theta) + v * std::cos(truth.theta)});
    }
    const Ellipse f = fit_ellipse(pts);
    EXPECT_NEAR(f.cx, 3, 1e-9);
    EXPECT_NEAR(f.cy, -2, 1e-9);
    EXPECT_NEAR(f.a, 7, 1e-9);
    EXPECT_NEAR(f.b, 2, 1e-9);
    EXPECT_NEAR(f.theta, 1.1, 1e-9);
}

TEST(HeadCircumference, HandValues) {
    EXPECT_NEAR(head_circumference(Ellipse{0, 0, 10, 10, 0}, 0.1), 6.2832, 5e-5);
    EXPECT_NEAR(head_circumference(Ellipse{0, 0, 2, 1, 0}, 1.0), std::numbers::pi * (9 - std::sqrt(35.0)), 1e-12);
    EXPECT_NEAR(head_circumference(Ellipse{0, 0, 2, 1, 0}, 1.0), 9.6884, 5e-5);
    EXPECT_NEAR(head_circumference(Ellipse{0, 0, 6, 3, 0}, 1.0), 3 * head_circumference(Ellipse{0, 0, 2, 1, 0}, 1.0), 1e-12);
    EXPECT_THROW(head_circumference(Ellipse{0, 0, 2, 1, 0}, 0.0), Error);
}

TEST(HeadCircumference, AgreesWithPerimeterIntegral) {
    EXPECT_NEAR(head_circumference(Ellipse{0, 0, 2, 1, 0}, 1.0) / oracle::perimeter_integral(2, 1), 1.0, 2e-4);
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(5, 100), r(0.5, 1.0);
    for (int k = 0; k < 20; ++k) {
        const double a = u(rng), b = a * r(rng);
        EXPECT_NEAR(head_circumference(Ellipse{0, 0, a, b, 0}, 1.0) / oracle::perimeter_integral(a, b), 1.0, 1e-3);
    }
}

TEST(Report, AggregatesWithPopulationStd) {
    const BinaryMask full = from_pixels(4, 4, {{0, 0}, {0, 1}});
    const BinaryMask half = from_pixels(4, 4, {{0, 1}, {1, 1}});
    const MetricsReport r = report({"s0", "s1"}, {full, full}, {full, half}, {1.0, 1.0});
    ASSERT_EQ(r.per_sample.size(), 2u);
    EXPECT_EQ(r.per_sample[0].dice, 1.0);
    EXPECT_EQ(r.per_sample[1].dice, 0.5);
    EXPECT_DOUBLE_EQ(r.aggregate.at("dice").mean, 0.75);
    EXPECT_DOUBLE_EQ(r.aggregate.at("dice").std, 0.25);
    EXPECT_EQ(r.aggregate.at("dice").count, 2);
    EXPECT_TRUE(std::isnan(r.per_sample[0].hc_mm));
    EXPECT_EQ(r.aggregate.at("hc_mm").count, 0);

    const MetricsReport one = report({"x"}, {half}, {full}, {0.2});
    EXPECT_EQ(one.aggregate.at("iou").mean, one.per_sample[0].iou);
    EXPECT_EQ(one.aggregate.at("iou").std, 0.0);
    EXPECT_EQ(one.aggregate.at("hausdorff_mm").mean, one.per_sample[0].hausdorff_mm);

    EXPECT_THROW(report({"a", "b"}, {full}, {full}, {1.0}), Error);
}

TEST(Report, EmptyPredictionHasNoHausdorffAndHeadCircumferenceFromPrediction) {
    const BinaryMask gt = rasterize_ellipse_mask(Ellipse{32, 32, 20, 14, 0.3}, 64, 64);
    ReportOptions opt;
    opt.head_circumference = true;
    const MetricsReport r = report({"a", "b"}, {gt, BinaryMask(64, 64)}, {gt, gt}, {0.1, 0.1}, opt);
    EXPECT_EQ(r.per_sample[0].hausdorff_mm, 0.0);
    EXPECT_NEAR(r.per_sample[0].hc_mm, head_circumference(Ellipse{0, 0, 20, 14, 0}, 0.1), 0.01 * r.per_sample[0].hc_mm);
    EXPECT_TRUE(std::isnan(r.per_sample[1].hausdorff_mm));
    EXPECT_TRUE(std::isnan(r.per_sample[1].hc_mm));
    EXPECT_EQ(r.per_sample[1].dice, 0.0);
    EXPECT_EQ(r.aggregate.at("hausdorff_mm").count, 1);
}

TEST(Report, CsvRoundTrip) {
    std::mt19937_64 rng(18);
    std::vector<std::string> ids;
    std::vector<BinaryMask> p, g;
    for (int k = 0; k < 6; ++k) {
        ids.push_back("s" + std::to_string(k));
        p.push_back(oracle::random_mask(16, 16, rng));
        g.push_back(oracle::random_mask(16, 16, rng));
    }
    p[2] = BinaryMask(16, 16);
    ReportOptions opt;
    opt.head_circumference = true;
    const MetricsReport r = report(ids, p, g, std::vector<double>(6, 0.15), opt);
    const fs::path path = fs::temp_directory_path() / "dunet_test_metrics.csv";
    write_metrics_csv(path, r, {"seed=18"});
    const MetricsReport back = read_metrics_csv(path);
    ASSERT_EQ(back.per_sample.size(), r.per_sample.size());
    auto same = [](double x, double y) { return (std::isnan(x) && std::isnan(y)) || x == y; };
    for (std::size_t i = 0; i < r.per_sample.size(); ++i) {
        EXPECT_EQ(back.per_sample[i].id, r.per_sample[i].id);
        EXPECT_TRUE(same(back.per_sample[i].dice, r.per_sample[i].dice));
        EXPECT_TRUE(same(back.per_sample[i].iou, r.per_sample[i].iou));
        EXPECT_TRUE(same(back.per_sample[i].hausdorff_mm, r.per_sample[i].hausdorff_mm));
        EXPECT_TRUE(same(back.per_sample[i].hc_mm, r.per_sample[i].hc_mm));
    }
    for (const auto& [k, a] : r.aggregate) {
        EXPECT_TRUE(same(back.aggregate.at(k).mean, a.mean)) << k;
        EXPECT_TRUE(same(back.aggregate.at(k).std, a.std)) << k;
        EXPECT_EQ(back.aggregate.at(k).count, a.count) << k;
    }
}
