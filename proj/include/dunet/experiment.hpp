#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dunet/metrics.hpp"
#include "dunet/nets.hpp"
#include "dunet/pipeline.hpp"
#include "dunet/scattering.hpp"

// Experiment runs driven by one JSON document:
//
//   {
//     "seed": 7,
//     "output_dir": "runs/dunet",
//     "dataset": {"layout": "synthetic", "root": "data/fundus", "target": "disc",
//                 "image_size": 128, "channels": 1, "test_fraction": 0.2,
//                 "roi": {"r_min": 10, "r_max": 80}},
//     "scattering": {"J": 3, "L": 8, "order": 2},
//     "model": {"kind": "dunet", "depth": 3, "base_channels": 8},
//     "train": {"lr": 0.001, "epochs": 50, "batch_size": 4, "loss": "bce_dice",
//               "split": "train", "warm_start": null, "checkpoint_every": 0},
//     "eval": {"threshold": 0.5, "hausdorff": "max", "split": "test",
//              "head_circumference": false}
//   }
//
// Instead of "root", "dataset" may hold
//   "synthetic": {"task": "fundus", "n": 80, "test": 16, "seed": 7}
// to generate the samples in memory. Relative paths resolve against the
// directory of the config file. Only "output_dir" and a dataset source are
// required.

namespace dunet::experiment {

class ConfigError : public Error {
   public:
    using Error::Error;
};

struct SyntheticSource {
    pipeline::Task task = pipeline::Task::fundus;
    int n = 80;
    int test = 16;
    std::uint64_t seed = 0;
};

struct DatasetSection {
    pipeline::Layout layout = pipeline::Layout::synthetic;
    std::filesystem::path root;
    std::optional<SyntheticSource> synthetic;
    std::string target = "disc";
    int image_size = 128;  ///< samples are resized (or cropped by the ROI) to this square size
    int channels = 1;      ///< 1 = luma, 3 = RGB
    double test_fraction = 0.2;
    bool roi = false;      ///< crop a 3R box around the Hough-localized disc
    int roi_r_min = 10;
    int roi_r_max = 80;
};

struct EvalSection {
    double threshold = 0.5;
    metrics::HausdorffVariant hausdorff = metrics::HausdorffVariant::max;
    std::string split = "test";  ///< train, test or all
    bool head_circumference = false;
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::filesystem::path output_dir;
    DatasetSection dataset;
    scattering::ScatteringConfig scattering;
    nets::ModelSpec model;
    nets::TrainConfig train;
    std::string train_split = "train";
    int checkpoint_every = 0;
    EvalSection eval;
};

/// Parses and validates a config document, reporting every problem at once.
/// Relative paths are resolved against `base_dir`.
ExperimentConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Sets the seed everywhere it is used (train, and a synthetic source without its own seed).
void override_seed(ExperimentConfig& cfg, std::uint64_t seed);
/// The fully resolved config as JSON text.
std::string to_json(const ExperimentConfig& cfg);
/// The resolved dataset section only; equal strings mean the same samples.
std::string dataset_fingerprint(const ExperimentConfig& cfg);

/// One sample at network resolution, plus its ground truth in evaluation
/// space: the ROI crop when the ROI is on, else the original image grid.
struct PreparedSample {
    std::string id;
    Tensor image;                                ///< 1 x channels x S x S
    std::optional<pipeline::BinaryMask> mask;    ///< S x S training target
    std::optional<pipeline::BinaryMask> eval_gt;
    int eval_height = 0, eval_width = 0;
    double pixel_size_mm = 1.0;                  ///< mm per evaluation pixel; 1 when unknown
    pipeline::Split split = pipeline::Split::train;
};

struct PreparedDataset {
    std::vector<PreparedSample> samples;
    std::vector<std::string> warnings;
};

PreparedDataset prepare_dataset(const ExperimentConfig& cfg, bool allow_missing_gt = false);

/// Samples of `split` ("train", "test" or "all").
std::vector<const PreparedSample*> select_split(const PreparedDataset& d, const std::string& split);

/// Stacks images and masks and, for SC models, computes scattering coefficients.
nets::TrainData make_train_data(const ExperimentConfig& cfg, const std::vector<const PreparedSample*>& samples);

/// Model spec completed from the dataset and scattering sections.
nets::ModelSpec resolved_model(const ExperimentConfig& cfg);

struct TrainRun {
    nets::Model model;
    nets::TrainResult result;
};

/// Trains and writes model.sgw, loss.csv, train.log and config.json under
/// output_dir. Progress lines go to `log` when given.
TrainRun run_train(const ExperimentConfig& cfg, std::ostream* log = nullptr);

struct EvalRun {
    metrics::MetricsReport report;
    std::vector<double> entropy_bits;  ///< per sample, aligned with report.per_sample
    std::vector<std::string> warnings;
};

/// Evaluates `checkpoint` on the eval split and writes, under
/// output_dir/eval/<split>/, masks/ and prob/ PNGs, metrics.csv, sharpness.csv
/// and summary.json.
EvalRun run_eval(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint, std::ostream* log = nullptr);

std::filesystem::path eval_dir(const ExperimentConfig& cfg);

struct CompareRow {
    nets::ModelKind kind;
    int runs = 0;
    int count = 0;
    metrics::Aggregate dice, iou, hausdorff_mm, hc_mm, entropy_bits;
    double miou = 0;
};

/// Pools the summary.json reports of the given runs, one row per model kind
/// in the order unet, scunet, latefusion, dunet. Throws when the runs used
/// different datasets or a summary is missing.
std::vector<CompareRow> compare(const std::vector<ExperimentConfig>& runs);
void write_compare_csv(const std::filesystem::path& path, const std::vector<CompareRow>& rows);
/// Human-readable table with mean±std cells.
std::string format_compare_table(const std::vector<CompareRow>& rows);

/// Writes a synthetic dataset directory; returns the number of samples.
int synth(pipeline::Task task, int n, int test, std::uint64_t seed, int size, const std::filesystem::path& out);

/// Scattering coefficients of one PNG (luma, or RGB with `color`), written as SCT1.
scattering::ScatteringOutput scatter_png(const std::filesystem::path& input, const scattering::ScatteringConfig& cfg,
                                         bool color, const std::filesystem::path& out);

}  // namespace dunet::experiment
