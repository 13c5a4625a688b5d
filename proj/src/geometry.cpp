#include <algorithm>
#include <cmath>
#include <numbers>

#include "dunet/pipeline.hpp"

namespace dunet::pipeline {

Ellipse Ellipse::canonical() const {
    if (!(a > 0) || !(b > 0)) throw Error("ellipse: semi-axes must be positive");
    Ellipse e = *this;
    if (e.b > e.a) {
        std::swap(e.a, e.b);
        e.theta += std::numbers::pi / 2;
    }
    e.theta = std::fmod(e.theta, std::numbers::pi);
    if (e.theta < 0) e.theta += std::numbers::pi;
    if (e.theta >= std::numbers::pi) e.theta = 0;
    return e;
}

double Ellipse::area() const { return std::numbers::pi * a * b; }

BinaryMask rasterize_ellipse_mask(const Ellipse& e, int height, int width) {
    BinaryMask m(height, width);
    const double c = std::cos(e.theta), s = std::sin(e.theta);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const double dx = x - e.cx, dy = y - e.cy;
            const double u = (dx * c + dy * s) / e.a;
            const double v = (-dx * s + dy * c) / e.b;
            m.at(y, x) = u * u + v * v <= 1.0 + 1e-12 ? 1 : 0;
        }
    }
    return m;
}

namespace {

using Grid = std::vector<double>;

Grid gaussian_blur(const Grid& in, int H, int W, double sigma) {
    const int r = static_cast<int>(std::ceil(3 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
    double sum = 0;
    for (int i = -r; i <= r; ++i) sum += k[static_cast<std::size_t>(i + r)] = std::exp(-i * i / (2 * sigma * sigma));
    for (auto& v : k) v /= sum;
    Grid tmp(in.size()), out(in.size());
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double s = 0;
            for (int i = -r; i <= r; ++i) s += k[static_cast<std::size_t>(i + r)] * in[static_cast<std::size_t>(y) * W + std::clamp(x + i, 0, W - 1)];
            tmp[static_cast<std::size_t>(y) * W + x] = s;
        }
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double s = 0;
            for (int i = -r; i <= r; ++i) s += k[static_cast<std::size_t>(i + r)] * tmp[static_cast<std::size_t>(std::clamp(y + i, 0, H - 1)) * W + x];
            out[static_cast<std::size_t>(y) * W + x] = s;
        }
    return out;
}

// Threshold maximizing the between-class variance of a 256-bin histogram over [0, hi].
double otsu(const Grid& v, double hi) {
    std::vector<double> hist(256, 0.0);
    for (double x : v) hist[static_cast<std::size_t>(std::min(255.0, x / hi * 255.0))] += 1;
    const double total = static_cast<double>(v.size());
    double sum_all = 0;
    for (int i = 0; i < 256; ++i) sum_all += i * hist[static_cast<std::size_t>(i)];
    double w0 = 0, sum0 = 0, best = -1;
    int at = 0;
    for (int t = 0; t < 255; ++t) {
        w0 += hist[static_cast<std::size_t>(t)];
        sum0 += t * hist[static_cast<std::size_t>(t)];
        const double w1 = total - w0;
        if (w0 == 0 || w1 == 0) continue;
        const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
        const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if (between > best) {
            best = between;
            at = t;
        }
    }
    return (at + 1) * hi / 255.0;
}

}  // namespace

RoiBox localize_od(const Tensor& gray, int r_min, int r_max) {
    if (gray.n() != 1 || gray.c() != 1) throw ShapeError("localize_od: expects 1x1xHxW, got " + gray.shape().str());
    const int H = gray.h(), W = gray.w();
    if (r_min < 1 || r_min >= r_max || r_max > std::min(H, W) / 2) {
        throw Error("localize_od: need 1 <= r_min < r_max <= min(H, W) / 2, got " + std::to_string(r_min) + ", " +
                    std::to_string(r_max));
    }
    Grid img(gray.data().begin(), gray.data().end());
    const Grid s = gaussian_blur(img, H, W, 2.5);
    auto at = [&](int y, int x) { return s[static_cast<std::size_t>(std::clamp(y, 0, H - 1)) * W + std::clamp(x, 0, W - 1)]; };
    Grid gx(s.size()), gy(s.size()), mag(s.size());
    double hi = 0, lo = s[0];
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * W + x;
            gx[i] = (at(y - 1, x + 1) + 2 * at(y, x + 1) + at(y + 1, x + 1)) - (at(y - 1, x - 1) + 2 * at(y, x - 1) + at(y + 1, x - 1));
            gy[i] = (at(y + 1, x - 1) + 2 * at(y + 1, x) + at(y + 1, x + 1)) - (at(y - 1, x - 1) + 2 * at(y - 1, x) + at(y - 1, x + 1));
            mag[i] = std::hypot(gx[i], gy[i]);
            hi = std::max(hi, mag[i]);
            lo = std::min(lo, s[i]);
        }
    if (hi < 1e-9) throw Error("localize_od: no circular structure (empty edge map)");
    const double thr = otsu(mag, hi);

    const int nr = r_max - r_min + 1;
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    std::vector<double> acc(static_cast<std::size_t>(nr) * plane, 0.0);
    std::size_t edges = 0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * W + x;
            if (mag[i] <= thr) continue;
            // keep only local maxima along the gradient direction
            const double ux = gx[i] / mag[i], uy = gy[i] / mag[i];
            const int sx = static_cast<int>(std::lround(ux)), sy = static_cast<int>(std::lround(uy));
            auto m_at = [&](int yy, int xx) {
                return mag[static_cast<std::size_t>(std::clamp(yy, 0, H - 1)) * W + std::clamp(xx, 0, W - 1)];
            };
            if (mag[i] < m_at(y + sy, x + sx) || mag[i] <= m_at(y - sy, x - sx)) continue;
            ++edges;
            const double dx = gx[i] / mag[i], dy = gy[i] / mag[i];
            const double weight = at(static_cast<int>(std::lround(y + 2 * dy)), static_cast<int>(std::lround(x + 2 * dx))) - lo;
            const double vote = weight * mag[i];
            for (int r = r_min; r <= r_max; ++r) {
                const int cx = static_cast<int>(std::lround(x + r * dx));
                const int cy = static_cast<int>(std::lround(y + r * dy));
                if (cx < 0 || cx >= W || cy < 0 || cy >= H) continue;
                acc[static_cast<std::size_t>(r - r_min) * plane + static_cast<std::size_t>(cy) * W + cx] += vote;
            }
        }
    if (edges == 0) throw Error("localize_od: no circular structure (empty edge map)");

    double best = -1;
    RoiBox box;
    for (int r = r_min; r <= r_max; ++r) {
        const double* a = acc.data() + static_cast<std::size_t>(r - r_min) * plane;
        const double norm = 1.0 / (2 * std::numbers::pi * r);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                // 3x3 box sum absorbs rounding of the vote positions
                double v = 0;
                for (int u = std::max(0, y - 1); u <= std::min(H - 1, y + 1); ++u)
                    for (int w = std::max(0, x - 1); w <= std::min(W - 1, x + 1); ++w) v += a[static_cast<std::size_t>(u) * W + w];
                v *= norm;
                if (v > best) {
                    best = v;
                    box.cx = x;
                    box.cy = y;
                    box.radius = r;
                }
            }
    }
    if (best <= 0) throw Error("localize_od: no circular structure (no votes)");
    box.side = std::min(3.0 * box.radius, static_cast<double>(std::max(H, W)));
    return box;
}

namespace {

// Bilinear sample of channel c; `zero` selects zero padding, otherwise clamped edges.
float sample(const Tensor& t, int c, double y, double x, bool zero) {
    const int H = t.h(), W = t.w();
    const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
    const double fy = y - y0, fx = x - x0;
    auto px = [&](int yy, int xx) -> double {
        if (zero && (yy < 0 || yy >= H || xx < 0 || xx >= W)) return 0.0;
        return t(0, c, std::clamp(yy, 0, H - 1), std::clamp(xx, 0, W - 1));
    };
    double v = (1 - fy) * (1 - fx) * px(y0, x0);
    if (fx != 0) v += (1 - fy) * fx * px(y0, x0 + 1);
    if (fy != 0) v += fy * (1 - fx) * px(y0 + 1, x0);
    if (fx != 0 && fy != 0) v += fy * fx * px(y0 + 1, x0 + 1);
    return static_cast<float>(v);
}

}  // namespace

Tensor extract_roi(const Tensor& image, const RoiBox& box, int out_size) {
    if (image.n() != 1) throw ShapeError("extract_roi: expects one image, got " + image.shape().str());
    if (!(box.side > 0) || out_size < 1) throw Error("extract_roi: degenerate box or output size");
    const double x0 = box.cx - box.side / 2, y0 = box.cy - box.side / 2;
    if (x0 >= image.w() || y0 >= image.h() || x0 + box.side <= 0 || y0 + box.side <= 0) {
        throw Error("extract_roi: box does not intersect the image");
    }
    const double scale = box.side / out_size;
    Tensor out(Shape{1, image.c(), out_size, out_size});
    for (int c = 0; c < image.c(); ++c)
        for (int i = 0; i < out_size; ++i)
            for (int j = 0; j < out_size; ++j)
                out(0, c, i, j) = sample(image, c, y0 + (i + 0.5) * scale - 0.5, x0 + (j + 0.5) * scale - 0.5, true);
    return out;
}

Tensor resize_bilinear(const Tensor& image, int height, int width) {
    if (image.n() != 1) throw ShapeError("resize_bilinear: expects one image, got " + image.shape().str());
    if (height == image.h() && width == image.w()) return image;
    const double sy = static_cast<double>(image.h()) / height, sx = static_cast<double>(image.w()) / width;
    Tensor out(Shape{1, image.c(), height, width});
    for (int c = 0; c < image.c(); ++c)
        for (int i = 0; i < height; ++i)
            for (int j = 0; j < width; ++j) out(0, c, i, j) = sample(image, c, (i + 0.5) * sy - 0.5, (j + 0.5) * sx - 0.5, false);
    return out;
}

}  // namespace dunet::pipeline
