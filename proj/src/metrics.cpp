#include "dunet/metrics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

namespace dunet::metrics {

namespace {

void same_extents(const BinaryMask& a, const BinaryMask& b, const char* what) {
    if (a.height != b.height || a.width != b.width) {
        throw ShapeError(std::string(what) + ": mask extents differ (" + std::to_string(a.height) + "x" +
                         std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" + std::to_string(b.width) + ")");
    }
}

struct Counts {
    std::size_t a = 0, b = 0, both = 0, n = 0;
};

Counts count(const BinaryMask& a, const BinaryMask& b, const char* what) {
    same_extents(a, b, what);
    Counts c;
    c.n = a.bits.size();
    for (std::size_t i = 0; i < c.n; ++i) {
        const bool x = a.bits[i] != 0, y = b.bits[i] != 0;
        c.a += x;
        c.b += y;
        c.both += x && y;
    }
    return c;
}

}  // namespace

double dice(const BinaryMask& a, const BinaryMask& b) {
    const Counts c = count(a, b, "dice");
    if (c.a + c.b == 0) return 1.0;
    return 2.0 * static_cast<double>(c.both) / static_cast<double>(c.a + c.b);
}

double iou(const BinaryMask& a, const BinaryMask& b) {
    const Counts c = count(a, b, "iou");
    const std::size_t uni = c.a + c.b - c.both;
    return uni == 0 ? 1.0 : static_cast<double>(c.both) / static_cast<double>(uni);
}

double binary_miou(const BinaryMask& a, const BinaryMask& b) {
    const Counts c = count(a, b, "miou");
    const std::size_t fg_union = c.a + c.b - c.both;
    const std::size_t bg_both = c.n - fg_union;
    const std::size_t bg_union = c.n - c.both;
    const double fg = fg_union == 0 ? 1.0 : static_cast<double>(c.both) / static_cast<double>(fg_union);
    const double bg = bg_union == 0 ? 1.0 : static_cast<double>(bg_both) / static_cast<double>(bg_union);
    return 0.5 * (fg + bg);
}

double miou(std::span<const std::pair<BinaryMask, BinaryMask>> pairs) {
    if (pairs.empty()) throw Error("miou: no mask pairs");
    double s = 0;
    for (const auto& [a, b] : pairs) s += binary_miou(a, b);
    return s / static_cast<double>(pairs.size());
}

BinaryMask boundary(const BinaryMask& m) {
    BinaryMask out(m.height, m.width);
    auto bg = [&](int y, int x) { return y < 0 || x < 0 || y >= m.height || x >= m.width || !m.at(y, x); };
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x)
            if (m.at(y, x) && (bg(y - 1, x) || bg(y + 1, x) || bg(y, x - 1) || bg(y, x + 1))) out.at(y, x) = 1;
    return out;
}

std::string to_string(HausdorffVariant v) { return v == HausdorffVariant::max ? "max" : "mean"; }

HausdorffVariant hausdorff_variant_from_string(const std::string& s) {
    if (s == "max") return HausdorffVariant::max;
    if (s == "mean") return HausdorffVariant::mean;
    throw Error("unknown Hausdorff variant '" + s + "' (expected max or mean)");
}

namespace {

// 1D squared-distance transform of a sampled function (Felzenszwalb & Huttenlocher).
void dt1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v, std::vector<double>& z) {
    const int n = static_cast<int>(f.size());
    constexpr double inf = std::numeric_limits<double>::infinity();
    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (f[static_cast<std::size_t>(q)] == inf) continue;
        while (k >= 0) {
            const int p = v[static_cast<std::size_t>(k)];
            const double s = ((f[static_cast<std::size_t>(q)] + q * q) - (f[static_cast<std::size_t>(p)] + p * p)) / (2.0 * (q - p));
            if (s <= z[static_cast<std::size_t>(k)]) {
                --k;
            } else {
                break;
            }
        }
        ++k;
        v[static_cast<std::size_t>(k)] = q;
        z[static_cast<std::size_t>(k)] = k == 0 ? -inf
                                                : ((f[static_cast<std::size_t>(q)] + q * q) -
                                                   (f[static_cast<std::size_t>(v[static_cast<std::size_t>(k - 1)])] +
                                                    v[static_cast<std::size_t>(k - 1)] * v[static_cast<std::size_t>(k - 1)])) /
                                                      (2.0 * (q - v[static_cast<std::size_t>(k - 1)]));
    }
    if (k < 0) {
        std::fill(d.begin(), d.end(), inf);
        return;
    }
    z[static_cast<std::size_t>(k + 1)] = inf;
    int j = 0;
    for (int q = 0; q < n; ++q) {
        while (z[static_cast<std::size_t>(j + 1)] < q) ++j;
        const int p = v[static_cast<std::size_t>(j)];
        d[static_cast<std::size_t>(q)] = (q - p) * (q - p) + f[static_cast<std::size_t>(p)];
    }
}

// Exact squared Euclidean distance to the nearest set pixel.
std::vector<double> squared_edt(const BinaryMask& m) {
    const int H = m.height, W = m.width;
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> g(static_cast<std::size_t>(H) * W);
    const int n = std::max(H, W);
    std::vector<double> f, d;
    std::vector<int> v(static_cast<std::size_t>(n));
    std::vector<double> z(static_cast<std::size_t>(n) + 1);
    f.resize(static_cast<std::size_t>(H));
    d.resize(static_cast<std::size_t>(H));
    for (int x = 0; x < W; ++x) {
        for (int y = 0; y < H; ++y) f[static_cast<std::size_t>(y)] = m.at(y, x) ? 0.0 : inf;
        dt1d(f, d, v, z);
        for (int y = 0; y < H; ++y) g[static_cast<std::size_t>(y) * W + x] = d[static_cast<std::size_t>(y)];
    }
    f.resize(static_cast<std::size_t>(W));
    d.resize(static_cast<std::size_t>(W));
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) f[static_cast<std::size_t>(x)] = g[static_cast<std::size_t>(y) * W + x];
        dt1d(f, d, v, z);
        for (int x = 0; x < W; ++x) g[static_cast<std::size_t>(y) * W + x] = d[static_cast<std::size_t>(x)];
    }
    return g;
}

// max (or mean) over set pixels of `from` of the distance to `to`.
double directed(const BinaryMask& from, const std::vector<double>& dist_to, HausdorffVariant v) {
    double mx = 0, sum = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < from.bits.size(); ++i) {
        if (!from.bits[i]) continue;
        const double d = std::sqrt(dist_to[i]);
        mx = std::max(mx, d);
        sum += d;
        ++n;
    }
    return v == HausdorffVariant::max ? mx : sum / static_cast<double>(n);
}

}  // namespace

double hausdorff(const BinaryMask& a, const BinaryMask& b, double pixel_size_mm, HausdorffVariant variant) {
    same_extents(a, b, "hausdorff");
    if (a.count() == 0 || b.count() == 0) throw Error("undefined Hausdorff: empty mask");
    if (!(pixel_size_mm > 0)) throw Error("hausdorff: pixel size must be positive");
    const BinaryMask ba = boundary(a), bb = boundary(b);
    const double ab = directed(ba, squared_edt(bb), variant);
    const double ba_ = directed(bb, squared_edt(ba), variant);
    return std::max(ab, ba_) * pixel_size_mm;
}

Ellipse fit_ellipse(std::span<const Point> points) {
    const auto n = static_cast<Eigen::Index>(points.size());
    if (n < 5) throw Error("fit_ellipse: need at least 5 points, got " + std::to_string(n));
    double mx = 0, my = 0;
    for (const auto& p : points) {
        mx += p.x;
        my += p.y;
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double scale = 0;
    for (const auto& p : points) scale = std::max({scale, std::abs(p.x - mx), std::abs(p.y - my)});
    if (scale == 0) throw Error("fit_ellipse: degenerate point set");

    Eigen::MatrixXd D1(n, 3), D2(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double x = (points[static_cast<std::size_t>(i)].x - mx) / scale;
        const double y = (points[static_cast<std::size_t>(i)].y - my) / scale;
        D1.row(i) << x * x, x * y, y * y;
        D2.row(i) << x, y, 1.0;
    }
    const Eigen::Matrix3d S1 = D1.transpose() * D1, S2 = D1.transpose() * D2, S3 = D2.transpose() * D2;
    const Eigen::FullPivLU<Eigen::Matrix3d> lu(S3);
    if (!lu.isInvertible()) throw Error("fit_ellipse: degenerate point set (collinear)");
    const Eigen::Matrix3d T = -lu.inverse() * S2.transpose();
    const Eigen::Matrix3d M = S1 + S2 * T;
    Eigen::Matrix3d R;
    R.row(0) = M.row(2) / 2;
    R.row(1) = -M.row(1);
    R.row(2) = M.row(0) / 2;
    const Eigen::EigenSolver<Eigen::Matrix3d> es(R);
    int pick = -1;
    double best = 0;
    for (int k = 0; k < 3; ++k) {
        const Eigen::Vector3d v = es.eigenvectors().col(k).real();
        const double cond = 4 * v(0) * v(2) - v(1) * v(1);
        if (cond > best) {
            best = cond;
            pick = k;
        }
    }
    if (pick < 0) throw Error("fit_ellipse: no elliptic solution");
    const Eigen::Vector3d a1 = es.eigenvectors().col(pick).real();
    const Eigen::Vector3d a2 = T * a1;
    const double A = a1(0), B = a1(1), C = a1(2), Dc = a2(0), E = a2(1), F = a2(2);

    const double den = B * B - 4 * A * C;
    const double x0 = (2 * C * Dc - B * E) / den, y0 = (2 * A * E - B * Dc) / den;
    const double F0 = A * x0 * x0 + B * x0 * y0 + C * y0 * y0 + Dc * x0 + E * y0 + F;
    Eigen::Matrix2d Q;
    Q << A, B / 2, B / 2, C;
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> qs(Q);
    const double l0 = qs.eigenvalues()(0), l1 = qs.eigenvalues()(1);
    const double r0 = -F0 / l0, r1 = -F0 / l1;
    if (!(r0 > 0) || !(r1 > 0)) throw Error("fit_ellipse: degenerate conic");
    // The larger semi-axis belongs to the eigenvalue with the smaller magnitude.
    const bool first_major = std::abs(l0) < std::abs(l1);
    const Eigen::Vector2d dir = qs.eigenvectors().col(first_major ? 0 : 1);
    Ellipse e;
    e.cx = mx + scale * x0;
    e.cy = my + scale * y0;
    e.a = scale * std::sqrt(first_major ? r0 : r1);
    e.b = scale * std::sqrt(first_major ? r1 : r0);
    e.theta = std::atan2(dir(1), dir(0));
    if (!std::isfinite(e.cx) || !std::isfinite(e.a) || !std::isfinite(e.b)) throw Error("fit_ellipse: degenerate conic");
    return e.canonical();
}

Ellipse fit_ellipse(const BinaryMask& m) {
    const int H = m.height, W = m.width;
    std::vector<int> label(m.bits.size(), 0);
    int best_label = 0;
    std::size_t best_size = 0;
    int next = 0;
    std::vector<int> stack;
    for (int start = 0; start < H * W; ++start) {
        if (!m.bits[static_cast<std::size_t>(start)] || label[static_cast<std::size_t>(start)]) continue;
        ++next;
        std::size_t size = 0;
        stack.push_back(start);
        label[static_cast<std::size_t>(start)] = next;
        while (!stack.empty()) {
            const int p = stack.back();
            stack.pop_back();
            ++size;
            const int y = p / W, x = p % W;
            const int nb[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
            for (const auto& q : nb) {
                if (q[0] < 0 || q[1] < 0 || q[0] >= H || q[1] >= W) continue;
                const int qi = q[0] * W + q[1];
                if (m.bits[static_cast<std::size_t>(qi)] && !label[static_cast<std::size_t>(qi)]) {
                    label[static_cast<std::size_t>(qi)] = next;
                    stack.push_back(qi);
                }
            }
        }
        if (size > best_size) {
            best_size = size;
            best_label = next;
        }
    }
    std::vector<Point> pts;
    auto inside = [&](int y, int x) {
        return y >= 0 && x >= 0 && y < H && x < W && label[static_cast<std::size_t>(y) * W + x] == best_label;
    };
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (!inside(y, x)) continue;
            if (!inside(y - 1, x)) pts.push_back({double(x), y - 0.5});
            if (!inside(y + 1, x)) pts.push_back({double(x), y + 0.5});
            if (!inside(y, x - 1)) pts.push_back({x - 0.5, double(y)});
            if (!inside(y, x + 1)) pts.push_back({x + 0.5, double(y)});
        }
    if (best_size < 5) throw Error("fit_ellipse: mask has fewer than 5 pixels in its largest component");
    return fit_ellipse(pts);
}

double head_circumference(const Ellipse& e, double pixel_size_mm) {
    if (!(e.a > 0) || !(e.b > 0) || !(pixel_size_mm > 0)) throw Error("head_circumference: invalid ellipse or pixel size");
    const double a = e.a, b = e.b;
    return std::numbers::pi * (3 * (a + b) - std::sqrt((3 * a + b) * (a + 3 * b))) * pixel_size_mm;
}

void aggregate(MetricsReport& r) {
    auto agg = [&](auto field) {
        Aggregate a;
        double s = 0;
        for (const auto& m : r.per_sample) {
            const double v = field(m);
            if (std::isfinite(v)) {
                s += v;
                ++a.count;
            }
        }
        if (a.count == 0) {
            a.mean = a.std = std::numeric_limits<double>::quiet_NaN();
            return a;
        }
        a.mean = s / a.count;
        double ss = 0;
        for (const auto& m : r.per_sample) {
            const double v = field(m);
            if (std::isfinite(v)) ss += (v - a.mean) * (v - a.mean);
        }
        a.std = std::sqrt(ss / a.count);
        return a;
    };
    r.aggregate["dice"] = agg([](const SampleMetrics& m) { return m.dice; });
    r.aggregate["iou"] = agg([](const SampleMetrics& m) { return m.iou; });
    r.aggregate["hausdorff_mm"] = agg([](const SampleMetrics& m) { return m.hausdorff_mm; });
    r.aggregate["hc_mm"] = agg([](const SampleMetrics& m) { return m.hc_mm; });
}

MetricsReport report(const std::vector<std::string>& ids, const std::vector<BinaryMask>& predictions,
                     const std::vector<BinaryMask>& ground_truth, const std::vector<double>& pixel_size_mm,
                     const ReportOptions& opt) {
    const std::size_t n = ids.size();
    if (predictions.size() != n || ground_truth.size() != n || pixel_size_mm.size() != n) {
        throw Error("report: lists differ in length (" + std::to_string(n) + " ids, " + std::to_string(predictions.size()) +
                    " predictions, " + std::to_string(ground_truth.size()) + " ground truths, " +
                    std::to_string(pixel_size_mm.size()) + " pixel sizes)");
    }
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    MetricsReport r;
    double miou_sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
        SampleMetrics m;
        m.id = ids[i];
        m.dice = dice(predictions[i], ground_truth[i]);
        m.iou = iou(predictions[i], ground_truth[i]);
        miou_sum += binary_miou(predictions[i], ground_truth[i]);
        m.hausdorff_mm = predictions[i].count() && ground_truth[i].count()
                             ? hausdorff(predictions[i], ground_truth[i], pixel_size_mm[i], opt.variant)
                             : nan;
        m.hc_mm = nan;
        if (opt.head_circumference) {
            try {
                m.hc_mm = head_circumference(fit_ellipse(predictions[i]), pixel_size_mm[i]);
            } catch (const Error&) {
                // no usable outline in the prediction
            }
        }
        r.per_sample.push_back(std::move(m));
    }
    r.miou = n ? miou_sum / static_cast<double>(n) : nan;
    aggregate(r);
    return r;
}

namespace {

std::string cell(double v) {
    if (!std::isfinite(v)) return "";
    char buf[64];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

double parse_cell(const std::string& s) {
    if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
    double v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw Error("metrics CSV: bad number '" + s + "'");
    return v;
}

}  // namespace

void write_metrics_csv(const std::filesystem::path& path, const MetricsReport& r, const std::vector<std::string>& comments) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw Error("cannot open " + path.string() + " for writing");
    for (const auto& c : comments) f << "# " << c << "\n";
    f << "id,dice,iou,hausdorff_mm,hc_mm\n";
    for (const auto& m : r.per_sample) {
        f << m.id << "," << cell(m.dice) << "," << cell(m.iou) << "," << cell(m.hausdorff_mm) << "," << cell(m.hc_mm) << "\n";
    }
}

MetricsReport read_metrics_csv(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw Error("cannot open " + path.string());
    MetricsReport r;
    std::string line;
    bool header = false;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        if (!header) {
            if (line != "id,dice,iou,hausdorff_mm,hc_mm") throw Error(path.string() + ": unexpected header '" + line + "'");
            header = true;
            continue;
        }
        std::vector<std::string> cells;
        std::string c;
        std::istringstream ss(line);
        while (std::getline(ss, c, ',')) cells.push_back(c);
        if (line.back() == ',') cells.emplace_back();
        if (cells.size() != 5) throw Error(path.string() + ": expected 5 columns in '" + line + "'");
        r.per_sample.push_back({cells[0], parse_cell(cells[1]), parse_cell(cells[2]), parse_cell(cells[3]), parse_cell(cells[4])});
    }
    if (!header) throw Error(path.string() + ": missing header");
    r.miou = std::numeric_limits<double>::quiet_NaN();
    aggregate(r);
    return r;
}

}  // namespace dunet::metrics
