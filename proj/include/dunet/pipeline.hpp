#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dunet/tensor.hpp"

namespace dunet::pipeline {

/// Row-major H x W mask of 0/1 bytes.
struct BinaryMask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> bits;

    BinaryMask() = default;
    BinaryMask(int h, int w) : height(h), width(w), bits(static_cast<std::size_t>(h) * w, 0) {}

    std::uint8_t& at(int y, int x) { return bits[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int y, int x) const { return bits[static_cast<std::size_t>(y) * width + x]; }
    std::size_t count() const;
    /// 1 x 1 x H x W tensor of 0.0 / 1.0.
    Tensor to_tensor() const;
    /// Pixels with value >= threshold.
    static BinaryMask from_tensor(const Tensor& t, float threshold = 0.5f);
    friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

/// Centre (cx, cy) in pixels with x along columns, semi-axes a >= b > 0, and
/// the angle of the a-axis from the +x axis, in [0, pi).
struct Ellipse {
    double cx = 0, cy = 0, a = 1, b = 1, theta = 0;

    /// Swaps axes when b > a and wraps theta into [0, pi). Throws on b <= 0.
    Ellipse canonical() const;
    double area() const;
};

struct RoiBox {
    double cx = 0, cy = 0;
    double radius = 0;  ///< estimated disc radius
    double side = 0;    ///< 3 * radius, clamped to the larger image extent
};

// ---------------------------------------------------------------- images

/// 8-bit PNG as 1 x C x H x W in [0, 1]; C is 1 for gray, 3 for colour.
/// Alpha is dropped, palettes expanded, 16-bit reduced to 8.
Tensor read_png(const std::filesystem::path& path);
/// Writes 1 x {1,3} x H x W, rounding [0, 1] to 8 bits. `text` adds tEXt chunks.
void write_png(const std::filesystem::path& path, const Tensor& image,
               const std::map<std::string, std::string>& text = {});
/// Mask pixel values >= 128 become 1.
BinaryMask read_mask_png(const std::filesystem::path& path);
/// Writes {0, 255}.
void write_mask_png(const std::filesystem::path& path, const BinaryMask& mask,
                    const std::map<std::string, std::string>& text = {});
/// tEXt chunks of a PNG file.
std::map<std::string, std::string> read_png_text(const std::filesystem::path& path);

/// ITU-R 601 luma for 3-channel images; single-channel input is returned as is.
Tensor to_grayscale(const Tensor& image);

// ---------------------------------------------------------------- geometry

/// Pixel (x, y) is set iff its centre satisfies the ellipse inequality <= 1.
BinaryMask rasterize_ellipse_mask(const Ellipse& e, int height, int width);

/// Weighted circular Hough transform for a bright disc on a darker field.
/// Edges: Gaussian-smoothed Sobel magnitude above the Otsu threshold. Each edge
/// pixel votes along its gradient (toward the brighter side) for every radius,
/// weighted by the local intensity above the image minimum; votes per radius
/// are normalized by the circumference. Throws "no circular structure" when
/// the edge map is empty.
RoiBox localize_od(const Tensor& gray, int r_min, int r_max);

/// Square crop of `box.side` around the box centre, zero outside the image,
/// bilinearly resized to out_size x out_size. Works on any channel count.
Tensor extract_roi(const Tensor& image, const RoiBox& box, int out_size);

/// Bilinear resize with pixel-centre alignment, edges clamped.
Tensor resize_bilinear(const Tensor& image, int height, int width);

// ---------------------------------------------------------------- data

enum class Task { fundus, ultrasound };
std::string to_string(Task t);
Task task_from_string(const std::string& s);

struct SyntheticSample {
    std::string id;
    Tensor image;            ///< 1 x 1 x S x S, quantized to 8 bits
    BinaryMask mask;         ///< optic disc or head
    BinaryMask cup;          ///< fundus only, subset of mask
    Ellipse disc_or_head;    ///< the ellipse mask was rasterized from
    Ellipse cup_ellipse;     ///< fundus only
    double pixel_size_mm = 0.0;  ///< ultrasound only
};

/// Fundus: textured dark field, bright elliptical disc, darker cup inside it,
/// dark vessel curves. Ultrasound: speckle background, bright elliptical rim
/// with gaps around a darker head. Deterministic per seed.
std::vector<SyntheticSample> generate_synthetic(Task task, int n, std::uint64_t seed, int size = 128);

enum class Split { train, val, test };
std::string to_string(Split s);
Split split_from_string(const std::string& s);

/// How a record's mask file is turned into a binary mask.
enum class MaskEncoding {
    binary,      ///< >= 128 is foreground
    refuge_disc, ///< 0 cup, 128 rim, 255 background: disc = value < 192
    refuge_cup,  ///< cup = value < 64
};

struct SampleRecord {
    std::string id;
    std::filesystem::path image;
    std::optional<std::filesystem::path> mask;
    MaskEncoding encoding = MaskEncoding::binary;
    std::optional<Ellipse> ellipse;
    std::optional<double> pixel_size_mm;
    Split split = Split::train;
};

/// Columns: path,maskPath,cx,cy,a,b,theta,pixelSizeMm,split. Paths are
/// written relative to the manifest's directory. Leading "#" lines are comments.
void write_manifest(const std::filesystem::path& path, const std::vector<SampleRecord>& records,
                    const std::vector<std::string>& comments = {});
std::vector<SampleRecord> read_manifest(const std::filesystem::path& path);

/// Writes images/, masks/ and manifest.csv (plus manifest_cup.csv and cups/
/// for fundus) under `dir`. The last `test_count` samples form the test split.
std::vector<SampleRecord> write_synthetic_dataset(const std::filesystem::path& dir,
                                                  const std::vector<SyntheticSample>& samples, Task task,
                                                  int test_count, std::uint64_t seed);

enum class Layout { synthetic, refuge, drishti, rimone, hc18 };
std::string to_string(Layout l);
Layout layout_from_string(const std::string& s);

struct LoadOptions {
    Layout layout = Layout::synthetic;
    std::string target = "disc";  ///< disc or cup for fundus layouts
    double test_fraction = 0.2;   ///< layouts without their own split
    /// Keep samples whose ground truth is missing (with a warning) instead of
    /// dropping them with an error.
    bool allow_missing_mask = false;
};

struct LoadResult {
    std::vector<SampleRecord> records;
    std::vector<std::string> errors;    ///< one per skipped sample
    std::vector<std::string> warnings;
};

// On-disk conventions (images must be PNG):
//   synthetic  manifest.csv, or manifest_cup.csv for target "cup"
//   refuge     Images/<id>.png, Masks/<id>.png with 0 cup / 128 rim / 255 background
//   drishti    Images/<id>.png, GT/<id>/SoftMap/<id>_ODsegSoftmap.png (or _cupsegSoftmap), >= 128 is foreground
//   rimone     images/<id>.png, masks/<id>_disc.png or masks/<id>_cup.png
//   hc18       training_set/<id>_HC.png, training_set/<id>_HC_Annotation.png (ellipse outline),
//              training_set_pixel_size_and_HC.csv (filename,pixel size(mm),head circumference (mm))
// Without a manifest, ids are sorted and the last test_fraction become the test split.
LoadResult load_dataset(const std::filesystem::path& root, const LoadOptions& opt);

/// Ground-truth mask of a record at the given extents (from the mask file or
/// by rasterizing the ellipse).
BinaryMask load_mask(const SampleRecord& r, int height, int width);

}  // namespace dunet::pipeline
