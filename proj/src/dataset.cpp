#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "dunet/metrics.hpp"
#include "dunet/pipeline.hpp"

namespace dunet::pipeline {

namespace fs = std::filesystem;

std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw Error("unknown split '" + s + "'");
}

std::string to_string(Layout l) {
    switch (l) {
        case Layout::synthetic: return "synthetic";
        case Layout::refuge: return "refuge";
        case Layout::drishti: return "drishti";
        case Layout::rimone: return "rimone";
        case Layout::hc18: return "hc18";
    }
    return "?";
}

Layout layout_from_string(const std::string& s) {
    for (auto l : {Layout::synthetic, Layout::refuge, Layout::drishti, Layout::rimone, Layout::hc18})
        if (s == to_string(l)) return l;
    throw Error("unknown dataset layout '" + s + "' (expected synthetic, refuge, drishti, rimone or hc18)");
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

double parse_double(const std::string& s, const std::string& what) {
    double v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw Error("bad number '" + s + "' in " + what);
    return v;
}

std::string fmt(double v) {
    char buf[64];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

fs::path relative_to(const fs::path& p, const fs::path& dir) {
    const fs::path r = fs::relative(fs::absolute(p), fs::absolute(dir));
    return r.empty() ? p : r;
}

}  // namespace

void write_manifest(const fs::path& path, const std::vector<SampleRecord>& records, const std::vector<std::string>& comments) {
    const fs::path dir = path.parent_path().empty() ? fs::path(".") : path.parent_path();
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw Error("cannot open " + path.string() + " for writing");
    for (const auto& c : comments) f << "# " << c << "\n";
    f << "path,maskPath,cx,cy,a,b,theta,pixelSizeMm,split\n";
    for (const auto& r : records) {
        if (r.mask.has_value() == r.ellipse.has_value()) {
            throw Error("manifest: record " + r.id + " must have exactly one of mask and ellipse");
        }
        f << relative_to(r.image, dir).generic_string() << ",";
        if (r.mask) f << relative_to(*r.mask, dir).generic_string();
        f << ",";
        if (r.ellipse) {
            f << fmt(r.ellipse->cx) << "," << fmt(r.ellipse->cy) << "," << fmt(r.ellipse->a) << "," << fmt(r.ellipse->b)
              << "," << fmt(r.ellipse->theta);
        } else {
            f << ",,,,";
        }
        f << "," << (r.pixel_size_mm ? fmt(*r.pixel_size_mm) : "") << "," << to_string(r.split) << "\n";
    }
}

std::vector<SampleRecord> read_manifest(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw Error("cannot open manifest " + path.string());
    const fs::path dir = path.parent_path();
    std::vector<SampleRecord> out;
    std::string line;
    bool header = false;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        if (!header) {
            if (line != "path,maskPath,cx,cy,a,b,theta,pixelSizeMm,split") {
                throw Error(path.string() + ": unexpected manifest header '" + line + "'");
            }
            header = true;
            continue;
        }
        const auto cells = split_csv(line);
        const std::string where = path.string() + ":" + std::to_string(lineno);
        if (cells.size() != 9) throw Error(where + ": expected 9 columns, got " + std::to_string(cells.size()));
        SampleRecord r;
        r.image = dir / cells[0];
        r.id = fs::path(cells[0]).stem().string();
        if (!cells[1].empty()) {
            r.mask = dir / cells[1];
        }
        if (!cells[2].empty()) {
            Ellipse e;
            e.cx = parse_double(cells[2], where);
            e.cy = parse_double(cells[3], where);
            e.a = parse_double(cells[4], where);
            e.b = parse_double(cells[5], where);
            e.theta = parse_double(cells[6], where);
            r.ellipse = e;
        }
        if (r.mask.has_value() == r.ellipse.has_value()) {
            throw Error(where + ": exactly one of maskPath and ellipse must be present");
        }
        if (!cells[7].empty()) r.pixel_size_mm = parse_double(cells[7], where);
        r.split = split_from_string(cells[8]);
        out.push_back(std::move(r));
    }
    if (!header) throw Error(path.string() + ": missing manifest header");
    return out;
}

std::vector<SampleRecord> write_synthetic_dataset(const fs::path& dir, const std::vector<SyntheticSample>& samples, Task task,
                                                  int test_count, std::uint64_t seed) {
    if (test_count < 0 || test_count > static_cast<int>(samples.size())) {
        throw Error("synthetic dataset: test count " + std::to_string(test_count) + " out of range");
    }
    fs::create_directories(dir / "images");
    const std::map<std::string, std::string> text{{"seed", std::to_string(seed)}, {"task", to_string(task)}};
    std::vector<SampleRecord> records, cups;
    const int first_test = static_cast<int>(samples.size()) - test_count;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        SampleRecord r;
        r.id = s.id;
        r.image = dir / "images" / (s.id + ".png");
        r.split = static_cast<int>(i) >= first_test ? Split::test : Split::train;
        write_png(r.image, s.image, text);
        if (task == Task::fundus) {
            fs::create_directories(dir / "masks");
            fs::create_directories(dir / "cups");
            r.mask = dir / "masks" / (s.id + ".png");
            write_mask_png(*r.mask, s.mask, text);
            SampleRecord c = r;
            c.mask = dir / "cups" / (s.id + ".png");
            write_mask_png(*c.mask, s.cup, text);
            cups.push_back(std::move(c));
        } else {
            r.ellipse = s.disc_or_head;
            r.pixel_size_mm = s.pixel_size_mm;
        }
        records.push_back(std::move(r));
    }
    const std::vector<std::string> comments{"seed=" + std::to_string(seed), "task=" + to_string(task)};
    write_manifest(dir / "manifest.csv", records, comments);
    if (task == Task::fundus) write_manifest(dir / "manifest_cup.csv", cups, comments);
    return records;
}

namespace {

std::vector<std::string> png_stems(const fs::path& dir) {
    std::vector<std::string> ids;
    if (!fs::is_directory(dir)) return ids;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".png") ids.push_back(e.path().stem().string());
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

void assign_splits(std::vector<SampleRecord>& recs, double test_fraction) {
    const auto n = recs.size();
    const auto test = static_cast<std::size_t>(std::floor(static_cast<double>(n) * test_fraction + 0.5));
    for (std::size_t i = 0; i < n; ++i) recs[i].split = i + test >= n ? Split::test : Split::train;
}

// HC18 annotations are thin ellipse outlines; fit the outline pixel centres.
Ellipse fit_outline(const fs::path& p) {
    const BinaryMask m = read_mask_png(p);
    std::vector<metrics::Point> pts;
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x)
            if (m.at(y, x)) pts.push_back({static_cast<double>(x), static_cast<double>(y)});
    return metrics::fit_ellipse(pts);
}

}  // namespace

LoadResult load_dataset(const fs::path& root, const LoadOptions& opt) {
    if (!fs::is_directory(root)) throw Error("dataset root " + root.string() + " is not a directory");
    if (opt.target != "disc" && opt.target != "cup") throw Error("dataset target must be disc or cup, got " + opt.target);
    const bool cup = opt.target == "cup";
    LoadResult res;
    auto need = [&](const std::string& id, const fs::path& p) {
        if (fs::exists(p)) return true;
        res.errors.push_back(id + ": missing " + p.string());
        return false;
    };
    auto need_gt = [&](const std::string& id, const fs::path& p) {
        if (fs::exists(p)) return true;
        if (!opt.allow_missing_mask) return need(id, p);
        res.warnings.push_back(id + ": no ground truth at " + p.string());
        return true;
    };

    switch (opt.layout) {
        case Layout::synthetic: {
            const fs::path m = root / (cup ? "manifest_cup.csv" : "manifest.csv");
            if (!fs::exists(m)) {
                res.warnings.push_back("no " + m.filename().string() + " under " + root.string() + "; dataset is empty");
                return res;
            }
            for (auto& r : read_manifest(m)) {
                if (!need(r.id, r.image) || (r.mask && !need_gt(r.id, *r.mask))) continue;
                res.records.push_back(std::move(r));
            }
            return res;
        }
        case Layout::refuge:
            for (const auto& id : png_stems(root / "Images")) {
                SampleRecord r{id, root / "Images" / (id + ".png"), root / "Masks" / (id + ".png"),
                               cup ? MaskEncoding::refuge_cup : MaskEncoding::refuge_disc, {}, {}, Split::train};
                if (need_gt(id, *r.mask)) res.records.push_back(std::move(r));
            }
            break;
        case Layout::drishti:
            for (const auto& id : png_stems(root / "Images")) {
                const fs::path m = root / "GT" / id / "SoftMap" / (id + (cup ? "_cupsegSoftmap.png" : "_ODsegSoftmap.png"));
                SampleRecord r{id, root / "Images" / (id + ".png"), m, MaskEncoding::binary, {}, {}, Split::train};
                if (need_gt(id, m)) res.records.push_back(std::move(r));
            }
            break;
        case Layout::rimone:
            for (const auto& id : png_stems(root / "images")) {
                const fs::path m = root / "masks" / (id + (cup ? "_cup.png" : "_disc.png"));
                SampleRecord r{id, root / "images" / (id + ".png"), m, MaskEncoding::binary, {}, {}, Split::train};
                if (need_gt(id, m)) res.records.push_back(std::move(r));
            }
            break;
        case Layout::hc18: {
            const fs::path csv = root / "training_set_pixel_size_and_HC.csv";
            if (!fs::exists(csv)) {
                res.warnings.push_back("no training_set_pixel_size_and_HC.csv under " + root.string() + "; dataset is empty");
                return res;
            }
            std::ifstream f(csv);
            std::string line;
            std::getline(f, line);  // header
            while (std::getline(f, line)) {
                line = trim(line);
                if (line.empty()) continue;
                const auto cells = split_csv(line);
                if (cells.size() < 2) {
                    res.errors.push_back("malformed row '" + line + "'");
                    continue;
                }
                const std::string file = trim(cells[0]);
                const std::string id = fs::path(file).stem().string();
                SampleRecord r;
                r.id = id;
                r.image = root / "training_set" / file;
                const fs::path ann = root / "training_set" / (id + "_Annotation.png");
                if (!need(id, r.image) || !need_gt(id, ann)) continue;
                try {
                    r.pixel_size_mm = parse_double(trim(cells[1]), csv.string());
                    if (fs::exists(ann)) r.ellipse = fit_outline(ann);
                } catch (const std::exception& e) {
                    res.errors.push_back(id + ": " + e.what());
                    continue;
                }
                res.records.push_back(std::move(r));
            }
            break;
        }
    }
    if (res.records.empty()) res.warnings.push_back("no samples found under " + root.string());
    assign_splits(res.records, opt.test_fraction);
    return res;
}

BinaryMask load_mask(const SampleRecord& r, int height, int width) {
    if (r.ellipse) return rasterize_ellipse_mask(*r.ellipse, height, width);
    if (!r.mask) throw Error(r.id + ": record has neither mask nor ellipse");
    const Tensor g = to_grayscale(read_png(*r.mask));
    if (g.h() != height || g.w() != width) {
        throw ShapeError(r.id + ": mask is " + std::to_string(g.h()) + "x" + std::to_string(g.w()) + ", image is " +
                         std::to_string(height) + "x" + std::to_string(width));
    }
    BinaryMask m(height, width);
    for (std::size_t i = 0; i < m.bits.size(); ++i) {
        const float v = g[i] * 255.0f;
        switch (r.encoding) {
            case MaskEncoding::binary: m.bits[i] = v >= 127.5f; break;
            case MaskEncoding::refuge_disc: m.bits[i] = v < 192.0f; break;
            case MaskEncoding::refuge_cup: m.bits[i] = v < 64.0f; break;
        }
    }
    return m;
}

}  // namespace dunet::pipeline
