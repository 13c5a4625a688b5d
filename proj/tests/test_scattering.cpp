#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>
#include <random>

#include "dunet/scattering.hpp"
#include "images.hpp"

using namespace dunet;
using namespace dunet::scattering;
using dunet::testing::circular_shift;
using dunet::testing::l2_distance;
using dunet::testing::l2_norm;
using dunet::testing::natural_image;
using cplx = std::complex<double>;

namespace {

ScatteringConfig config(int J, int L, int order, int size) {
    ScatteringConfig c;
    c.J = J;
    c.L = L;
    c.order = order;
    c.height = size;
    c.width = size;
    return c;
}

// Direct 2D DFT, used as an oracle for the FFT path.
std::vector<cplx> dft2(const std::vector<cplx>& a, int H, int W, bool inverse) {
    std::vector<cplx> out(a.size());
    const double sgn = inverse ? 1.0 : -1.0;
    for (int u = 0; u < H; ++u)
        for (int v = 0; v < W; ++v) {
            cplx s = 0;
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    s += a[y * W + x] *
                         std::polar(1.0, sgn * 2 * std::numbers::pi * (double(u) * y / H + double(v) * x / W));
            out[u * W + v] = inverse ? s / double(H * W) : s;
        }
    return out;
}

std::vector<cplx> circular_conv(const std::vector<cplx>& a, const std::vector<cplx>& k, int H, int W) {
    std::vector<cplx> out(a.size());
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            cplx s = 0;
            for (int u = 0; u < H; ++u)
                for (int v = 0; v < W; ++v) s += k[u * W + v] * a[((y - u + H) % H) * W + (x - v + W) % W];
            out[y * W + x] = s;
        }
    return out;
}

std::vector<cplx> gaussian_lowpass(int H, int W, double sigma) {
    std::vector<cplx> g(static_cast<std::size_t>(H) * W, 0.0);
    double total = 0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double s = 0;
            for (int ey = -2; ey <= 2; ++ey)
                for (int ex = -2; ex <= 2; ++ex) {
                    const double dy = y + ey * H, dx = x + ex * W;
                    s += std::exp(-(dy * dy + dx * dx) / (2 * sigma * sigma));
                }
            g[y * W + x] = s;
            total += s;
        }
    for (auto& v : g) v /= total;
    return g;
}

}  // namespace

TEST(Scattering, PathCounts) {
    EXPECT_EQ(count_paths(config(2, 4, 2, 64)), 1 + 8 + 16);
    EXPECT_EQ(count_paths(config(3, 8, 2, 64)), 217);
    EXPECT_EQ(count_paths(config(3, 8, 1, 64)), 25);
    EXPECT_EQ(count_paths(config(3, 8, 0, 64)), 1);
    EXPECT_EQ(count_paths(config(4, 8, 2, 64)), 1 + 32 + 64 * 6);
    for (int J = 1; J <= 5; ++J)
        for (int L = 1; L <= 8; ++L)
            for (int order = 0; order <= 2; ++order) {
                const auto cfg = config(J, L, order, 64);
                EXPECT_EQ(static_cast<int>(enumerate_paths(cfg).size()), count_paths(cfg));
            }
}

TEST(Scattering, PathOrderIsLexicographic) {
    const auto paths = enumerate_paths(config(3, 2, 2, 32));
    ASSERT_EQ(paths.size(), 1u + 6u + 12u);
    EXPECT_EQ(paths[0], (Path{0, -1, -1, -1, -1}));
    EXPECT_EQ(paths[1], (Path{1, 0, 0, -1, -1}));
    EXPECT_EQ(paths[2], (Path{1, 0, 1, -1, -1}));
    EXPECT_EQ(paths[7], (Path{2, 0, 0, 1, 0}));
    EXPECT_EQ(paths[8], (Path{2, 0, 0, 1, 1}));
    EXPECT_EQ(paths[9], (Path{2, 0, 0, 2, 0}));
    EXPECT_EQ(paths.back(), (Path{2, 1, 1, 2, 1}));
}

TEST(Scattering, SingleScaleSingleOrientation) {
    const auto fb = build_filter_bank(config(1, 1, 2, 16));
    EXPECT_EQ(fb.psi.size(), 1u);
    EXPECT_EQ(fb.phi.size(), 256u);
    EXPECT_EQ(count_paths(fb.config), 2);
}

TEST(Scattering, WaveletsHaveZeroMean) {
    const auto fb = build_filter_bank(config(3, 8, 2, 64));
    for (const auto& p : fb.psi) EXPECT_LE(std::abs(p[0]), 1e-6);
    EXPECT_NEAR(fb.phi[0], 1.0, 1e-12);
}

TEST(Scattering, FilterSpectraMatchDirectDft) {
    const int n = 16;
    const auto fb = build_filter_bank(config(2, 2, 2, n));
    const double slant = 4.0 / 2;
    for (int j = 0; j < 2; ++j)
        for (int l = 0; l < 2; ++l) {
            const auto spatial = morlet_2d(n, n, 0.8 * (1 << j), std::numbers::pi * l / 2, 0.75 * std::numbers::pi / (1 << j), slant);
            const auto spec = dft2(spatial, n, n, false);
            for (int i = 0; i < n * n; ++i) {
                EXPECT_NEAR(fb.band(j, l)[i], spec[i].real(), 1e-9);
                EXPECT_NEAR(spec[i].imag(), 0.0, 1e-9);
            }
        }
}

TEST(Scattering, LittlewoodPaleyBound) {
    const auto fb = build_filter_bank(config(3, 8, 2, 256));
    const int H = 256, W = 256;
    double sup = 0;
    for (int r = 0; r < H; ++r)
        for (int q = 0; q < W; ++q) {
            const int i = r * W + q, m = ((H - r) % H) * W + (W - q) % W;
            double a = fb.phi[i] * fb.phi[i];
            for (const auto& p : fb.psi) a += 0.5 * (p[i] * p[i] + p[m] * p[m]);
            sup = std::max(sup, a);
        }
    EXPECT_LE(sup, 1.2);
    EXPECT_NEAR(fb.littlewood_paley_bound, sup - 1.0, 1e-12);
    const auto lp = littlewood_paley_sum(fb);
    EXPECT_NEAR(*std::max_element(lp.begin(), lp.end()), sup, 1e-12);
}

TEST(Scattering, CascadeMatchesSpatialOracle) {
    const int n = 16, J = 2, L = 2;
    const auto cfg = config(J, L, 2, n);
    const auto fb = build_filter_bank(cfg);
    std::mt19937_64 rng(5);
    const Tensor x = dunet::testing::uniform_image(n, rng);
    const auto got = scattering_transform(x, fb);

    std::vector<cplx> img(n * n);
    for (int i = 0; i < n * n; ++i) img[i] = x[i];
    const auto phi = gaussian_lowpass(n, n, 0.8 * (1 << J));
    std::vector<std::vector<cplx>> psi;
    for (int j = 0; j < J; ++j)
        for (int l = 0; l < L; ++l)
            psi.push_back(morlet_2d(n, n, 0.8 * (1 << j), std::numbers::pi * l / L, 0.75 * std::numbers::pi / (1 << j), 4.0 / L));
    auto modulus = [](std::vector<cplx> v) {
        for (auto& e : v) e = std::abs(e);
        return v;
    };
    std::vector<std::vector<cplx>> fields{img};
    for (int k = 0; k < J * L; ++k) fields.push_back(modulus(circular_conv(img, psi[k], n, n)));
    for (int j1 = 0; j1 < J; ++j1)
        for (int l1 = 0; l1 < L; ++l1)
            for (int j2 = j1 + 1; j2 < J; ++j2)
                for (int l2 = 0; l2 < L; ++l2)
                    fields.push_back(modulus(circular_conv(fields[1 + j1 * L + l1], psi[j2 * L + l2], n, n)));
    ASSERT_EQ(static_cast<int>(fields.size()), got.coeffs.c());
    const int step = 1 << J;
    for (std::size_t ch = 0; ch < fields.size(); ++ch) {
        const auto smooth = circular_conv(fields[ch], phi, n, n);
        for (int a = 0; a < n / step; ++a)
            for (int b = 0; b < n / step; ++b)
                EXPECT_NEAR(got.coeffs(0, static_cast<int>(ch), a, b), smooth[a * step * n + b * step].real(), 1e-5)
                    << "channel " << ch;
    }
}

TEST(Scattering, OutputShapeAndNonNegativity) {
    const auto fb = build_filter_bank(config(3, 8, 2, 256));
    std::mt19937_64 rng(1);
    const auto out = scattering_transform(natural_image(256, rng), fb);
    EXPECT_EQ(out.coeffs.shape(), (Shape{1, 217, 32, 32}));
    EXPECT_EQ(out.paths.size(), 217u);
    for (int ch = 1; ch < 217; ++ch)
        for (int i = 0; i < 32 * 32; ++i) EXPECT_GE(out.coeffs.plane(0, ch)[i], -1e-6f);
}

TEST(Scattering, ConstantImageHasOnlyOrderZeroEnergy) {
    const auto fb = build_filter_bank(config(3, 8, 2, 64));
    const Tensor x(Shape{1, 1, 64, 64}, 0.6f);
    const auto out = scattering_transform(x, fb);
    for (int i = 0; i < 64; ++i) EXPECT_NEAR(out.coeffs.plane(0, 0)[i], 0.6f, 1e-6);
    double high = 0;
    for (int ch = 1; ch < out.coeffs.c(); ++ch)
        for (int i = 0; i < 64; ++i) high = std::max(high, std::abs(double(out.coeffs.plane(0, ch)[i])));
    EXPECT_LE(high, 1e-5 * 0.6);
}

TEST(Scattering, MultiChannelIsChannelMajor) {
    const auto fb = build_filter_bank(config(2, 4, 2, 32));
    std::mt19937_64 rng(3);
    const Tensor a = natural_image(32, rng), b = natural_image(32, rng);
    Tensor two(Shape{1, 2, 32, 32});
    std::copy(a.data().begin(), a.data().end(), two.plane(0, 0));
    std::copy(b.data().begin(), b.data().end(), two.plane(0, 1));
    const auto sa = scattering_transform(a, fb), sb = scattering_transform(b, fb), s2 = scattering_transform(two, fb);
    const int P = count_paths(fb.config);
    ASSERT_EQ(s2.coeffs.c(), 2 * P);
    EXPECT_EQ(s2.paths[P], sa.paths[0]);
    for (int ch = 0; ch < P; ++ch)
        for (int i = 0; i < 64; ++i) {
            EXPECT_EQ(s2.coeffs.plane(0, ch)[i], sa.coeffs.plane(0, ch)[i]);
            EXPECT_EQ(s2.coeffs.plane(0, P + ch)[i], sb.coeffs.plane(0, ch)[i]);
        }
}

TEST(Scattering, BatchMatchesSingleImages) {
    const auto fb = build_filter_bank(config(2, 4, 2, 32));
    std::mt19937_64 rng(9);
    std::vector<Tensor> imgs;
    for (int i = 0; i < 3; ++i) imgs.push_back(natural_image(32, rng));
    const Tensor batch = scatter_batch(stack_batch(imgs), fb);
    for (int i = 0; i < 3; ++i) EXPECT_EQ(batch.sample(i), scattering_transform(imgs[i], fb).coeffs);
}

// Threshold fixed from the oracle run: the worst of 8 images measured 0.065 at
// 64 px and 0.063 at 128 px (a 4 px shift is half the 8 px output stride).
TEST(Scattering, FourPixelShiftRobustness) {
    std::mt19937_64 rng(11);
    std::vector<Tensor> imgs;
    for (int i = 0; i < 6; ++i) imgs.push_back(natural_image(64, rng));
    std::vector<double> mean_ratio;
    for (int J = 1; J <= 3; ++J) {
        const auto fb = build_filter_bank(config(J, 8, 2, 64));
        double sum = 0;
        for (const auto& x : imgs) {
            const auto s = scattering_transform(x, fb).coeffs;
            const auto t = scattering_transform(circular_shift(x, 4, 4), fb).coeffs;
            sum += l2_distance(s, t) / l2_norm(x);
            if (J == 3) EXPECT_LE(l2_distance(s, t) / l2_norm(s), 0.08);
        }
        mean_ratio.push_back(sum / imgs.size());
    }
    EXPECT_GT(mean_ratio[0], mean_ratio[1]);
    EXPECT_GT(mean_ratio[1], mean_ratio[2]);
}

TEST(Scattering, NonExpansive) {
    const auto fb = build_filter_bank(config(2, 8, 2, 32));
    std::mt19937_64 rng(21);
    for (int k = 0; k < 10; ++k) {
        const Tensor x = k % 2 ? natural_image(32, rng) : dunet::testing::uniform_image(32, rng);
        const Tensor y = dunet::testing::uniform_image(32, rng);
        const auto sx = scattering_transform(x, fb).coeffs, sy = scattering_transform(y, fb).coeffs;
        EXPECT_LE(l2_distance(sx, sy), 1.05 * l2_distance(x, y));
    }
}

TEST(Scattering, Sct1RoundTrip) {
    const auto fb = build_filter_bank(config(2, 4, 2, 32));
    std::mt19937_64 rng(4);
    const auto out = scattering_transform(natural_image(32, rng), fb);
    const auto path = std::filesystem::temp_directory_path() / "dunet_sct1_roundtrip.sct";
    write_sct1(path, out);
    const auto back = read_sct1(path);
    EXPECT_EQ(back.coeffs, out.coeffs);
    EXPECT_EQ(back.paths, out.paths);
    EXPECT_EQ(std::filesystem::file_size(path), 4 + 4 + 16 + out.paths.size() * 20 + out.coeffs.size() * 4);
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 3);
    EXPECT_THROW(read_sct1(path), Error);
    std::filesystem::remove(path);
}

TEST(Scattering, InvalidConfigurations) {
    EXPECT_THROW(build_filter_bank(config(7, 8, 2, 64)), Error);
    EXPECT_THROW(build_filter_bank(config(0, 8, 2, 64)), Error);
    EXPECT_THROW(build_filter_bank(config(2, 0, 2, 64)), Error);
    EXPECT_THROW(build_filter_bank(config(2, 8, 3, 64)), Error);
    EXPECT_THROW(build_filter_bank(config(2, 8, 2, 48)), Error);
    const auto fb = build_filter_bank(config(2, 4, 2, 32));
    EXPECT_THROW(scattering_transform(Tensor(Shape{1, 1, 16, 16}), fb), ShapeError);
    EXPECT_THROW(scattering_transform(Tensor(Shape{2, 1, 32, 32}), fb), ShapeError);
}
