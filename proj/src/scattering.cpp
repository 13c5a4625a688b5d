#include "dunet/scattering.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>

#include "fft.hpp"

namespace dunet::scattering {

using cplx = std::complex<double>;

namespace {

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

// Periodized anisotropic Gabor filter, normalized by 2 pi sigma^2 / slant.
std::vector<cplx> gabor_2d(int H, int W, double sigma, double theta, double xi, double slant) {
    const double c = std::cos(theta), s = std::sin(theta);
    const double sl2 = slant * slant;
    const double k = 1.0 / (2.0 * sigma * sigma);
    const double a00 = (c * c + s * s * sl2) * k;
    const double a01 = c * s * (1.0 - sl2) * k;
    const double a11 = (s * s + c * c * sl2) * k;
    const double lmin = std::min(1.0, sl2) * k;

    std::vector<cplx> g(static_cast<std::size_t>(H) * W, 0.0);
    for (int ex = -2; ex <= 2; ++ex) {
        const double dx = std::min(std::abs(ex * H), std::abs(ex * H + H - 1));
        for (int ey = -2; ey <= 2; ++ey) {
            const double dy = std::min(std::abs(ey * W), std::abs(ey * W + W - 1));
            const bool near_origin = (ex == 0 || ex == -1) && (ey == 0 || ey == -1);
            if (!near_origin && lmin * (dx * dx + dy * dy) > 745.0) {
                continue;  // exp underflows everywhere in this tile
            }
            for (int r = 0; r < H; ++r) {
                const double x = r + ex * H;
                for (int q = 0; q < W; ++q) {
                    const double y = q + ey * W;
                    const double quad = a00 * x * x + 2.0 * a01 * x * y + a11 * y * y;
                    const double phase = xi * (x * c + y * s);
                    g[static_cast<std::size_t>(r) * W + q] += std::exp(cplx(-quad, phase));
                }
            }
        }
    }
    const double norm = 2.0 * std::numbers::pi * sigma * sigma / slant;
    for (auto& v : g) v /= norm;
    return g;
}

std::vector<double> real_spectrum(std::vector<cplx> spatial, int H, int W) {
    detail::fft2d(spatial, H, W, false);
    std::vector<double> out(spatial.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = spatial[i].real();
    return out;
}

}  // namespace

void ScatteringConfig::validate() const {
    if (J < 1) throw Error("scattering: J must be >= 1, got " + std::to_string(J));
    if (L < 1) throw Error("scattering: L must be >= 1, got " + std::to_string(L));
    if (order < 0 || order > 2) throw Error("scattering: order must be 0, 1 or 2, got " + std::to_string(order));
    if (!is_power_of_two(height) || !is_power_of_two(width)) {
        throw Error("scattering: input size " + std::to_string(height) + "x" + std::to_string(width) +
                    " must be powers of two");
    }
    if ((1 << J) > std::min(height, width)) {
        throw Error("scattering: 2^J = " + std::to_string(1 << J) + " exceeds min(H, W) = " +
                    std::to_string(std::min(height, width)));
    }
}

std::vector<cplx> morlet_2d(int height, int width, double sigma, double theta, double xi, double slant) {
    auto wave = gabor_2d(height, width, sigma, theta, xi, slant);
    const auto envelope = gabor_2d(height, width, sigma, theta, 0.0, slant);
    cplx sw = 0, se = 0;
    for (std::size_t i = 0; i < wave.size(); ++i) {
        sw += wave[i];
        se += envelope[i];
    }
    const cplx beta = sw / se;
    for (std::size_t i = 0; i < wave.size(); ++i) wave[i] -= beta * envelope[i];
    return wave;
}

FilterBank build_filter_bank(const ScatteringConfig& cfg, const MorletParams& morlet) {
    cfg.validate();
    FilterBank fb;
    fb.config = cfg;
    fb.morlet = morlet;
    const double slant = morlet.slant > 0 ? morlet.slant : 4.0 / cfg.L;
    fb.morlet.slant = slant;
    const int H = cfg.height, W = cfg.width;
    for (int j = 0; j < cfg.J; ++j) {
        for (int l = 0; l < cfg.L; ++l) {
            const double sigma = morlet.sigma0 * std::ldexp(1.0, j);
            const double xi = morlet.xi0 * std::ldexp(1.0, -j);
            const double theta = std::numbers::pi * l / cfg.L;
            fb.psi.push_back(real_spectrum(morlet_2d(H, W, sigma, theta, xi, slant), H, W));
        }
    }
    fb.phi = real_spectrum(gabor_2d(H, W, morlet.sigma0 * std::ldexp(1.0, cfg.J), 0.0, 0.0, 1.0), H, W);
    const double dc = fb.phi[0];
    for (auto& v : fb.phi) v /= dc;  // unit gain at zero frequency

    const auto lp = littlewood_paley_sum(fb);
    fb.littlewood_paley_bound = *std::max_element(lp.begin(), lp.end()) - 1.0;
    return fb;
}

std::vector<double> littlewood_paley_sum(const FilterBank& fb) {
    const int H = fb.config.height, W = fb.config.width;
    std::vector<double> a(static_cast<std::size_t>(H) * W);
    for (int r = 0; r < H; ++r) {
        for (int q = 0; q < W; ++q) {
            const std::size_t i = static_cast<std::size_t>(r) * W + q;
            const std::size_t mirror = static_cast<std::size_t>((H - r) % H) * W + (W - q) % W;
            double s = fb.phi[i] * fb.phi[i];
            for (const auto& p : fb.psi) s += 0.5 * (p[i] * p[i] + p[mirror] * p[mirror]);
            a[i] = s;
        }
    }
    return a;
}

std::vector<Path> enumerate_paths(const ScatteringConfig& cfg) {
    std::vector<Path> paths{Path{0, -1, -1, -1, -1}};
    if (cfg.order >= 1) {
        for (int j1 = 0; j1 < cfg.J; ++j1)
            for (int l1 = 0; l1 < cfg.L; ++l1) paths.push_back({1, j1, l1, -1, -1});
    }
    if (cfg.order >= 2) {
        for (int j1 = 0; j1 < cfg.J; ++j1)
            for (int l1 = 0; l1 < cfg.L; ++l1)
                for (int j2 = j1 + 1; j2 < cfg.J; ++j2)
                    for (int l2 = 0; l2 < cfg.L; ++l2) paths.push_back({2, j1, l1, j2, l2});
    }
    return paths;
}

int count_paths(const ScatteringConfig& cfg) {
    int p = 1;
    if (cfg.order >= 1) p += cfg.J * cfg.L;
    if (cfg.order >= 2) p += cfg.L * cfg.L * cfg.J * (cfg.J - 1) / 2;
    return p;
}

ScatteringOutput scattering_transform(const Tensor& x, const FilterBank& fb) {
    const auto& cfg = fb.config;
    if (x.n() != 1) throw ShapeError("scattering_transform: expects one image, got " + x.shape().str());
    if (x.h() != cfg.height || x.w() != cfg.width) {
        throw ShapeError("scattering_transform: image " + x.shape().str() + " does not match filter bank size " +
                         std::to_string(cfg.height) + "x" + std::to_string(cfg.width));
    }
    const int H = cfg.height, W = cfg.width, J = cfg.J, L = cfg.L;
    const int step = 1 << J;
    const int oh = H / step, ow = W / step;
    const auto paths = enumerate_paths(cfg);
    const int P = static_cast<int>(paths.size());
    const std::size_t N = static_cast<std::size_t>(H) * W;

    ScatteringOutput out;
    out.coeffs = Tensor(Shape{1, P * x.c(), oh, ow});
    for (int c = 0; c < x.c(); ++c) out.paths.insert(out.paths.end(), paths.begin(), paths.end());

    // Low-pass, subsample and store into output channel `ch`.
    auto store = [&](const std::vector<cplx>& spectrum, int ch, std::vector<cplx>& tmp) {
        for (std::size_t i = 0; i < N; ++i) tmp[i] = spectrum[i] * fb.phi[i];
        detail::fft2d(tmp, H, W, true);
        float* dst = out.coeffs.plane(0, ch);
        for (int a = 0; a < oh; ++a)
            for (int b = 0; b < ow; ++b)
                dst[a * ow + b] = static_cast<float>(tmp[static_cast<std::size_t>(a * step) * W + b * step].real());
    };
    // |ifft(spectrum * psi)|, returned as the spectrum of the modulus.
    auto wavelet_modulus = [&](const std::vector<cplx>& spectrum, const std::vector<double>& psi,
                               std::vector<cplx>& dst) {
        for (std::size_t i = 0; i < N; ++i) dst[i] = spectrum[i] * psi[i];
        detail::fft2d(dst, H, W, true);
        for (auto& v : dst) v = std::abs(v);
        detail::fft2d(dst, H, W, false);
    };

    for (int c = 0; c < x.c(); ++c) {
        const int base = c * P;
        std::vector<cplx> xhat(N);
        const float* src = x.plane(0, c);
        for (std::size_t i = 0; i < N; ++i) xhat[i] = src[i];
        detail::fft2d(xhat, H, W, false);
        {
            std::vector<cplx> tmp(N);
            store(xhat, base, tmp);
        }
        if (cfg.order < 1) continue;

        const int first = J * L;
#pragma omp parallel for schedule(dynamic)
        for (int k = 0; k < first; ++k) {
            const int j1 = k / L, l1 = k % L;
            std::vector<cplx> u1(N), u2(N), tmp(N);
            wavelet_modulus(xhat, fb.band(j1, l1), u1);
            store(u1, base + 1 + k, tmp);
            if (cfg.order < 2) continue;
            // Second-order paths preceding (j1, l1) in lexicographic order.
            int offset = 1 + first;
            for (int j = 0; j < j1; ++j) offset += L * L * (J - 1 - j);
            offset += l1 * L * (J - 1 - j1);
            for (int j2 = j1 + 1; j2 < J; ++j2) {
                for (int l2 = 0; l2 < L; ++l2) {
                    wavelet_modulus(u1, fb.band(j2, l2), u2);
                    store(u2, base + offset++, tmp);
                }
            }
        }
    }
    return out;
}

Tensor scatter_batch(const Tensor& images, const FilterBank& fb) {
    const int P = count_paths(fb.config);
    const int step = 1 << fb.config.J;
    Tensor out(Shape{images.n(), P * images.c(), images.h() / step, images.w() / step});
    for (int n = 0; n < images.n(); ++n) {
        const auto s = scattering_transform(images.sample(n), fb);
        std::copy(s.coeffs.data().begin(), s.coeffs.data().end(),
                  out.data().begin() + static_cast<std::ptrdiff_t>(s.coeffs.size() * static_cast<std::size_t>(n)));
    }
    return out;
}

namespace {

void put_u32(std::vector<char>& out, std::uint32_t v) {
    for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xffu));
}

std::uint32_t get_u32(const std::vector<char>& b, std::size_t& pos) {
    if (b.size() < pos + 4) throw Error("SCT1 file truncated");
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[pos + k])) << (8 * k);
    pos += 4;
    return v;
}

}  // namespace

void write_sct1(const std::filesystem::path& path, const ScatteringOutput& out) {
    const auto& t = out.coeffs;
    if (out.paths.size() != static_cast<std::size_t>(t.c())) {
        throw Error("SCT1: path table has " + std::to_string(out.paths.size()) + " entries for " +
                    std::to_string(t.c()) + " channels");
    }
    std::vector<char> b{'S', 'C', 'T', '1'};
    put_u32(b, 4);
    for (int e : t.shape().extents()) put_u32(b, static_cast<std::uint32_t>(e));
    for (const auto& p : out.paths) {
        for (int v : {p.order, p.j1, p.l1, p.j2, p.l2}) put_u32(b, static_cast<std::uint32_t>(v));
    }
    for (float f : t.data()) put_u32(b, std::bit_cast<std::uint32_t>(f));
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot open " + path.string() + " for writing");
    f.write(b.data(), static_cast<std::streamsize>(b.size()));
}

ScatteringOutput read_sct1(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open " + path.string());
    std::vector<char> b((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (b.size() < 8 || std::memcmp(b.data(), "SCT1", 4) != 0) throw Error(path.string() + ": not an SCT1 file");
    std::size_t pos = 4;
    const std::uint32_t rank = get_u32(b, pos);
    if (rank != 4) throw Error(path.string() + ": unsupported SCT1 rank " + std::to_string(rank));
    Shape s;
    s.n = static_cast<int>(get_u32(b, pos));
    s.c = static_cast<int>(get_u32(b, pos));
    s.h = static_cast<int>(get_u32(b, pos));
    s.w = static_cast<int>(get_u32(b, pos));
    if (!s.valid()) throw Error(path.string() + ": invalid extents " + s.str());
    ScatteringOutput out;
    for (int c = 0; c < s.c; ++c) {
        Path p;
        p.order = static_cast<std::int32_t>(get_u32(b, pos));
        p.j1 = static_cast<std::int32_t>(get_u32(b, pos));
        p.l1 = static_cast<std::int32_t>(get_u32(b, pos));
        p.j2 = static_cast<std::int32_t>(get_u32(b, pos));
        p.l2 = static_cast<std::int32_t>(get_u32(b, pos));
        out.paths.push_back(p);
    }
    std::vector<float> data(s.size());
    for (auto& v : data) v = std::bit_cast<float>(get_u32(b, pos));
    if (pos != b.size()) throw Error(path.string() + ": trailing bytes in SCT1 file");
    out.coeffs = Tensor(s, std::move(data));
    return out;
}

}  // namespace dunet::scattering
