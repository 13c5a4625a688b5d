#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dunet/graph.hpp"
#include "dunet/scattering.hpp"

// Segmentation networks built on the autodiff graph.
//
//   unet        image encoder-decoder with skip connections
//   scunet      scattering encoder + decoder, no image input, no skips
//   latefusion  unet and an SC encoder-decoder side by side, final feature
//               maps concatenated and fused by a 1x1 conv
//   dunet       image encoder and SC encoder concatenated at the bottleneck,
//               one decoder using the image skips
//
// Every model maps to a 1-channel sigmoid probability map at input resolution.
// Graph inputs are named "image" (N x in x H x W), "sc" (N x sc x H/2^d x W/2^d)
// and "target" (N x 1 x H x W).

namespace dunet::nets {

enum class ModelKind { unet, scunet, latefusion, dunet };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& s);
bool uses_image(ModelKind kind);
bool uses_sc(ModelKind kind);

struct ModelSpec {
    ModelKind kind = ModelKind::dunet;
    int depth = 3;           ///< downsampling levels
    int base_channels = 16;  ///< width of the first level, doubled per level
    int in_channels = 1;
    int sc_channels = 0;     ///< count_paths(cfg) * in_channels for SC models
    int height = 256;
    int width = 256;

    void validate() const;
};

/// Throws when an SC-consuming spec does not match the scattering setup
/// (channel count, or bottleneck resolution when depth != J).
void check_pairing(const ModelSpec& spec, const scattering::ScatteringConfig& cfg);

struct Model {
    ModelSpec spec;
    Graph graph;
    NodeId image;   ///< invalid for scunet
    NodeId sc;      ///< invalid for unet
    NodeId target;
    NodeId prob;
};

Model build_unet(const ModelSpec& spec);
Model build_scunet(const ModelSpec& spec);
Model build_latefusion(const ModelSpec& spec);
Model build_dunet(const ModelSpec& spec);
/// Dispatches on spec.kind.
Model build_model(const ModelSpec& spec);

/// He-uniform weights (bound sqrt(6 / fan_in)), zero biases.
void init_parameters(Model& model, std::uint64_t seed);

/// Samples stacked along the batch axis. `sc` is empty for unet.
struct TrainData {
    Tensor images;
    Tensor sc;
    Tensor masks;

    int size() const { return masks.n(); }
};

struct TrainConfig {
    double lr = 1e-3;
    int epochs = 50;
    int batch_size = 4;
    LossKind loss = LossKind::bce_dice;
    std::uint64_t seed = 0;
    std::optional<std::filesystem::path> warm_start;

    void validate() const;
};

struct TrainResult {
    std::vector<double> epoch_loss;  ///< sample-weighted mean of batch losses
    bool stopped_early = false;
};

class TrainingError : public Error {
   public:
    using Error::Error;
};

/// Called after every epoch (1-based); returning false stops training.
using EpochHook = std::function<bool(int epoch, double loss, Model& model)>;

/// Initializes from `cfg.seed` (or loads `cfg.warm_start`), then runs Adam on
/// shuffled mini-batches. Deterministic given the seed. Throws TrainingError on
/// a non-finite loss and CheckpointError on an incompatible warm start.
TrainResult train(Model& model, const TrainData& data, const TrainConfig& cfg, const EpochHook& hook = {});

/// Probability maps N x 1 x H x W, computed one sample at a time.
Tensor infer(Model& model, const Tensor& images, const Tensor* sc);

/// Mean binary entropy in bits of a probability map.
double mean_entropy(const Tensor& prob);

/// "epoch,loss" rows preceded by a "# seed=<n>" comment.
void write_loss_csv(const std::filesystem::path& path, const TrainResult& result, std::uint64_t seed);

}  // namespace dunet::nets
