#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "dunet/pipeline.hpp"

namespace dunet::pipeline {

std::string to_string(Task t) { return t == Task::fundus ? "fundus" : "ultrasound"; }

Task task_from_string(const std::string& s) {
    if (s == "fundus") return Task::fundus;
    if (s == "ultrasound") return Task::ultrasound;
    throw Error("unknown task '" + s + "' (expected fundus or ultrasound)");
}

namespace {

constexpr double kPi = std::numbers::pi;

// Portable draws: the standard distributions are implementation-defined.
struct Rng {
    std::mt19937_64 gen;
    explicit Rng(std::uint64_t seed) : gen(seed) {}
    double uniform() { return static_cast<double>(gen() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    int integer(int lo, int hi) { return lo + static_cast<int>(uniform() * (hi - lo + 1)); }
    double normal() {
        const double u = std::max(uniform(), 1e-300), v = uniform();
        return std::sqrt(-2.0 * std::log(u)) * std::cos(2 * kPi * v);
    }
};

std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

using Grid = std::vector<double>;

Grid blur(const Grid& in, int S, double sigma) {
    const int r = static_cast<int>(std::ceil(3 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
    double sum = 0;
    for (int i = -r; i <= r; ++i) sum += k[static_cast<std::size_t>(i + r)] = std::exp(-i * i / (2 * sigma * sigma));
    for (auto& v : k) v /= sum;
    Grid tmp(in.size()), out(in.size());
    auto idx = [S](int y, int x) { return static_cast<std::size_t>(y) * S + x; };
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
            double s = 0;
            for (int i = -r; i <= r; ++i) s += k[static_cast<std::size_t>(i + r)] * in[idx(y, std::clamp(x + i, 0, S - 1))];
            tmp[idx(y, x)] = s;
        }
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
            double s = 0;
            for (int i = -r; i <= r; ++i) s += k[static_cast<std::size_t>(i + r)] * tmp[idx(std::clamp(y + i, 0, S - 1), x)];
            out[idx(y, x)] = s;
        }
    return out;
}

// Zero-mean, unit-ish smooth noise field.
Grid smooth_noise(Rng& rng, int S, double sigma) {
    Grid g(static_cast<std::size_t>(S) * S);
    for (auto& v : g) v = rng.normal();
    g = blur(g, S, sigma);
    double ss = 0;
    for (double v : g) ss += v * v;
    const double sd = std::sqrt(ss / static_cast<double>(g.size()));
    for (auto& v : g) v /= sd > 0 ? sd : 1;
    return g;
}

Tensor quantize(const Grid& g, int S) {
    Tensor t(Shape{1, 1, S, S});
    for (std::size_t i = 0; i < g.size(); ++i) t[i] = static_cast<float>(std::lround(std::clamp(g[i], 0.0, 1.0) * 255.0)) / 255.0f;
    return t;
}

// Darkens a quadratic Bezier curve of the given width by `factor`.
void draw_vessel(Grid& g, int S, double x0, double y0, double x1, double y1, double x2, double y2, double width,
                 double factor) {
    const double len = std::hypot(x1 - x0, y1 - y0) + std::hypot(x2 - x1, y2 - y1);
    const int steps = std::max(8, static_cast<int>(len * 2));
    const double r = width / 2;
    std::vector<char> hit(g.size(), 0);
    for (int k = 0; k <= steps; ++k) {
        const double t = static_cast<double>(k) / steps;
        const double px = (1 - t) * (1 - t) * x0 + 2 * (1 - t) * t * x1 + t * t * x2;
        const double py = (1 - t) * (1 - t) * y0 + 2 * (1 - t) * t * y1 + t * t * y2;
        for (int y = static_cast<int>(std::floor(py - r)); y <= static_cast<int>(std::ceil(py + r)); ++y)
            for (int x = static_cast<int>(std::floor(px - r)); x <= static_cast<int>(std::ceil(px + r)); ++x) {
                if (x < 0 || y < 0 || x >= S || y >= S) continue;
                if (std::hypot(x - px, y - py) <= r) hit[static_cast<std::size_t>(y) * S + x] = 1;
            }
    }
    for (std::size_t i = 0; i < g.size(); ++i)
        if (hit[i]) g[i] *= factor;
}

SyntheticSample fundus(Rng& rng, int S) {
    SyntheticSample s;
    const double r = S * rng.uniform(0.14, 0.2);
    Ellipse disc{S / 2.0 + S * rng.uniform(-0.15, 0.15), S / 2.0 + S * rng.uniform(-0.15, 0.15), r * rng.uniform(1.0, 1.15), r,
                 rng.uniform(0, kPi)};
    disc = disc.canonical();
    Ellipse cup{disc.cx + disc.b * rng.uniform(-0.12, 0.12), disc.cy + disc.b * rng.uniform(-0.12, 0.12),
                disc.a * rng.uniform(0.35, 0.6), disc.b * rng.uniform(0.35, 0.6), disc.theta + rng.uniform(-0.3, 0.3)};
    cup = cup.canonical();
    s.disc_or_head = disc;
    s.cup_ellipse = cup;
    s.mask = rasterize_ellipse_mask(disc, S, S);
    s.cup = rasterize_ellipse_mask(cup, S, S);
    for (std::size_t i = 0; i < s.cup.bits.size(); ++i) s.cup.bits[i] &= s.mask.bits[i];

    const double fx = rng.uniform(0.3, 1.0), fy = rng.uniform(0.3, 1.0), ph = rng.uniform(0, 2 * kPi);
    const Grid texture = smooth_noise(rng, S, 2.0);
    const double rim = rng.uniform(0.72, 0.82), cup_level = rim - rng.uniform(0.12, 0.2);
    Grid g(static_cast<std::size_t>(S) * S);
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * S + x;
            double v = 0.24 + 0.05 * std::cos(2 * kPi * (fx * x + fy * y) / S + ph) + 0.03 * texture[i];
            if (s.mask.bits[i]) v = s.cup.bits[i] ? cup_level : rim;
            g[i] = v;
        }
    g = blur(g, S, 0.8);
    const int vessels = rng.integer(4, 7);
    for (int k = 0; k < vessels; ++k) {
        const double a = rng.uniform(0, 2 * kPi), len = S * rng.uniform(0.4, 0.7);
        const double x0 = disc.cx + disc.b * rng.uniform(-0.3, 0.3), y0 = disc.cy + disc.b * rng.uniform(-0.3, 0.3);
        const double x2 = x0 + len * std::cos(a), y2 = y0 + len * std::sin(a);
        const double bend = len * rng.uniform(-0.3, 0.3);
        const double x1 = (x0 + x2) / 2 - bend * std::sin(a), y1 = (y0 + y2) / 2 + bend * std::cos(a);
        draw_vessel(g, S, x0, y0, x1, y1, x2, y2, rng.uniform(1.0, 2.5), 1.0 - rng.uniform(0.25, 0.4));
    }
    for (auto& v : g) v += 0.02 * rng.normal();
    s.image = quantize(g, S);
    return s;
}

SyntheticSample ultrasound(Rng& rng, int S) {
    SyntheticSample s;
    const double a = S * rng.uniform(0.26, 0.36);
    Ellipse head{S / 2.0 + S * rng.uniform(-0.08, 0.08), S / 2.0 + S * rng.uniform(-0.08, 0.08), a,
                 a * rng.uniform(0.72, 0.92), rng.uniform(0, kPi)};
    head = head.canonical();
    s.disc_or_head = head;
    s.mask = rasterize_ellipse_mask(head, S, S);
    s.pixel_size_mm = rng.uniform(0.08, 0.2);

    // Rayleigh speckle: magnitude of a smoothed complex Gaussian field.
    const Grid re = smooth_noise(rng, S, 1.0), im = smooth_noise(rng, S, 1.0);
    const int gaps = rng.integer(2, 4);
    std::vector<std::pair<double, double>> gap;
    for (int k = 0; k < gaps; ++k) {
        const double c = rng.uniform(0, 2 * kPi);
        gap.emplace_back(c, rng.uniform(0.15, 0.4) / 2);
    }
    const double thickness = rng.uniform(2.0, 3.5);
    const double cth = std::cos(head.theta), sth = std::sin(head.theta);
    Grid g(static_cast<std::size_t>(S) * S);
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * S + x;
            const double speckle = std::hypot(re[i], im[i]) / std::sqrt(2.0);
            const double dx = x - head.cx, dy = y - head.cy;
            const double u = (dx * cth + dy * sth) / head.a, v = (-dx * sth + dy * cth) / head.b;
            const double rho = std::hypot(u, v);
            double level = s.mask.bits[i] ? 0.1 : 0.22;
            if (s.mask.bits[i] && std::abs(v * head.b) < 1.0 && std::abs(u) < 0.6) level = 0.3;  // midline echo
            const double dist = std::abs(rho - 1.0) * head.b;
            if (dist < thickness) {
                const double ang = std::atan2(v, u);
                bool open = false;
                for (const auto& [c, half] : gap) {
                    const double d = std::remainder(ang - c, 2 * kPi);
                    open = open || std::abs(d) < half;
                }
                if (!open) level = 0.8;
            }
            g[i] = level * (0.5 + 0.5 * speckle);
        }
    for (auto& v : g) v += 0.02 * rng.normal();
    s.image = quantize(g, S);
    return s;
}

}  // namespace

std::vector<SyntheticSample> generate_synthetic(Task task, int n, std::uint64_t seed, int size) {
    if (n < 1) throw Error("generate_synthetic: n must be >= 1");
    if (size < 32) throw Error("generate_synthetic: size must be >= 32");
    std::vector<SyntheticSample> out;
    for (int i = 0; i < n; ++i) {
        Rng rng(mix(seed ^ mix(static_cast<std::uint64_t>(i) + 1)));
        SyntheticSample s = task == Task::fundus ? fundus(rng, size) : ultrasound(rng, size);
        char id[32];
        std::snprintf(id, sizeof id, "%s_%04d", task == Task::fundus ? "fundus" : "us", i);
        s.id = id;
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace dunet::pipeline
