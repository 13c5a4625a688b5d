#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dunet/pipeline.hpp"

namespace dunet::metrics {

using pipeline::BinaryMask;
using pipeline::Ellipse;

/// 2|A n B| / (|A| + |B|); 1 when both masks are empty.
double dice(const BinaryMask& a, const BinaryMask& b);
/// Foreground |A n B| / |A u B|; 1 when both masks are empty.
double iou(const BinaryMask& a, const BinaryMask& b);
/// Mean of foreground and background IoU for one pair.
double binary_miou(const BinaryMask& a, const BinaryMask& b);
/// binary_miou averaged over pairs.
double miou(std::span<const std::pair<BinaryMask, BinaryMask>> pairs);

/// Foreground pixels with at least one 4-neighbour that is background or
/// outside the frame.
BinaryMask boundary(const BinaryMask& m);

enum class HausdorffVariant {
    max,   ///< max of the two directed Hausdorff distances
    mean,  ///< max of the two mean directed distances (modified Hausdorff)
};
std::string to_string(HausdorffVariant v);
HausdorffVariant hausdorff_variant_from_string(const std::string& s);

/// Distance between the boundary pixel sets of a and b, times pixel_size_mm.
/// Throws "undefined Hausdorff" if either mask is empty.
double hausdorff(const BinaryMask& a, const BinaryMask& b, double pixel_size_mm,
                 HausdorffVariant variant = HausdorffVariant::max);

struct Point {
    double x = 0, y = 0;
};

/// Direct least-squares ellipse fit (Fitzgibbon, numerically stable
/// Halir-Flusser form). Throws on fewer than 5 points or a non-elliptic conic.
Ellipse fit_ellipse(std::span<const Point> points);

/// Fits the outline of the largest 4-connected component, sampled at the
/// midpoints of the pixel edges separating it from the background.
Ellipse fit_ellipse(const BinaryMask& m);

/// Ramanujan's first approximation of the perimeter, in mm.
double head_circumference(const Ellipse& e, double pixel_size_mm);

struct SampleMetrics {
    std::string id;
    double dice = 0;
    double iou = 0;
    double hausdorff_mm = 0;  ///< NaN when undefined
    double hc_mm = 0;         ///< NaN when not applicable
};

struct Aggregate {
    double mean = 0;
    double std = 0;  ///< population standard deviation
    int count = 0;   ///< finite values used
};

struct MetricsReport {
    std::vector<SampleMetrics> per_sample;
    std::map<std::string, Aggregate> aggregate;  ///< keys: dice, iou, hausdorff_mm, hc_mm
    double miou = 0;                             ///< mean binary (fg/bg) IoU
};

/// Fills `aggregate` from `per_sample`, skipping NaN entries.
void aggregate(MetricsReport& r);

struct ReportOptions {
    HausdorffVariant variant = HausdorffVariant::max;
    bool head_circumference = false;  ///< fit ellipses and report hc_mm
};

/// Per-sample metrics of aligned prediction / ground-truth lists.
MetricsReport report(const std::vector<std::string>& ids, const std::vector<BinaryMask>& predictions,
                     const std::vector<BinaryMask>& ground_truth, const std::vector<double>& pixel_size_mm,
                     const ReportOptions& opt = {});

/// Columns id,dice,iou,hausdorff_mm,hc_mm; NaN cells are left empty.
void write_metrics_csv(const std::filesystem::path& path, const MetricsReport& r,
                       const std::vector<std::string>& comments = {});
/// Reads per-sample rows and recomputes the aggregate (miou is not stored in the CSV).
MetricsReport read_metrics_csv(const std::filesystem::path& path);

}  // namespace dunet::metrics
