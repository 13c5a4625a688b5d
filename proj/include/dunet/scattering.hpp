#pragma once

#include <complex>
#include <filesystem>
#include <string>
#include <vector>

#include "dunet/tensor.hpp"

// 2D scattering transform with Morlet wavelets.
//
// Order 0:  x * phi                      (subsampled by 2^J)
// Order 1:  |x * psi_{j1,l1}| * phi
// Order 2:  ||x * psi_{j1,l1}| * psi_{j2,l2}| * phi,  j1 < j2
//
// All convolutions are circular and computed as products in the Fourier
// domain (true convolution, unlike the cross-correlation used by the network
// layers). Output channels are ordered input-channel major; within a channel
// the order-0 path comes first, then order-1 paths by (j1, l1), then order-2
// paths by (j1, l1, j2, l2), each lexicographically.

namespace dunet::scattering {

struct ScatteringConfig {
    int J = 3;      ///< number of dyadic scales
    int L = 8;      ///< orientations per scale
    int order = 2;  ///< maximum scattering order, 0..2
    int height = 256;
    int width = 256;

    /// Throws Error when the configuration is unusable.
    void validate() const;
};

/// Morlet shape parameters at scale j: sigma0 * 2^j, xi0 / 2^j, slant.
struct MorletParams {
    double sigma0 = 0.8;
    double xi0 = 3.0 * 3.14159265358979323846 / 4.0;
    /// Ellipticity; negative selects the 4 / L default.
    double slant = -1.0;
};

/// Frequency-domain filters, each a real-valued H x W grid.
struct FilterBank {
    ScatteringConfig config;
    MorletParams morlet;
    std::vector<std::vector<double>> psi;  ///< index j * L + l
    std::vector<double> phi;
    /// sup over frequencies of the Littlewood-Paley sum, minus one.
    double littlewood_paley_bound = 0.0;

    const std::vector<double>& band(int j, int l) const {
        return psi[static_cast<std::size_t>(j * config.L + l)];
    }
};

FilterBank build_filter_bank(const ScatteringConfig& cfg, const MorletParams& morlet = {});

/// |phi(w)|^2 + 1/2 sum_{j,l} (|psi_{j,l}(w)|^2 + |psi_{j,l}(-w)|^2) on the full frequency grid.
std::vector<double> littlewood_paley_sum(const FilterBank& fb);

/// Spatial-domain Morlet wavelet (complex, periodized onto the H x W grid)
/// at scale sigma, orientation theta and centre frequency xi.
std::vector<std::complex<double>> morlet_2d(int height, int width, double sigma, double theta, double xi,
                                            double slant);

struct Path {
    int order = 0;
    int j1 = -1, l1 = -1, j2 = -1, l2 = -1;
    friend bool operator==(const Path&, const Path&) = default;
};

/// Paths of one input channel in output order.
std::vector<Path> enumerate_paths(const ScatteringConfig& cfg);

/// 1 + J L + L^2 C(J, 2) at order 2 (fewer at lower orders).
int count_paths(const ScatteringConfig& cfg);

struct ScatteringOutput {
    Tensor coeffs;             ///< 1 x (P C_in) x H/2^J x W/2^J
    std::vector<Path> paths;   ///< one entry per output channel
};

/// Scattering coefficients of a single image (1 x C x H x W), each input channel independently.
ScatteringOutput scattering_transform(const Tensor& x, const FilterBank& fb);

/// Batched map of scattering_transform over N images.
Tensor scatter_batch(const Tensor& images, const FilterBank& fb);

// SCT1 coefficient dump, all integers little-endian:
//   "SCT1", u32 rank, u32 extents[rank],
//   extents[1] x {i32 order, j1, l1, j2, l2} (-1 when absent),
//   f32 payload in row-major order.
void write_sct1(const std::filesystem::path& path, const ScatteringOutput& out);
ScatteringOutput read_sct1(const std::filesystem::path& path);

}  // namespace dunet::scattering
