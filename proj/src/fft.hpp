#pragma once

#include <complex>
#include <vector>

namespace dunet::detail {

/// In-place unnormalized 2D DFT of a row-major height x width grid.
/// `inverse` applies the conjugate transform and divides by height * width.
void fft2d(std::vector<std::complex<double>>& data, int height, int width, bool inverse);

}  // namespace dunet::detail
