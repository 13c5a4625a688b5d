#include "fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>
#include <tuple>

namespace dunet::detail {

namespace {

// FFTW planning is not thread-safe; execution with the new-array interface is.
class PlanCache {
   public:
    fftw_plan get(int h, int w, bool inverse) {
        std::lock_guard lock(mutex_);
        const auto key = std::make_tuple(h, w, inverse);
        if (auto it = plans_.find(key); it != plans_.end()) return it->second;
        std::vector<std::complex<double>> scratch(static_cast<std::size_t>(h) * w);
        auto* buf = reinterpret_cast<fftw_complex*>(scratch.data());
        fftw_plan p = fftw_plan_dft_2d(h, w, buf, buf, inverse ? FFTW_BACKWARD : FFTW_FORWARD,
                                       FFTW_ESTIMATE | FFTW_UNALIGNED);
        plans_.emplace(key, p);
        return p;
    }
    ~PlanCache() {
        for (auto& [k, p] : plans_) fftw_destroy_plan(p);
    }

   private:
    std::mutex mutex_;
    std::map<std::tuple<int, int, bool>, fftw_plan> plans_;
};

PlanCache& cache() {
    static PlanCache c;
    return c;
}

}  // namespace

void fft2d(std::vector<std::complex<double>>& data, int height, int width, bool inverse) {
    auto* buf = reinterpret_cast<fftw_complex*>(data.data());
    fftw_execute_dft(cache().get(height, width, inverse), buf, buf);
    if (inverse) {
        const double s = 1.0 / (static_cast<double>(height) * width);
        for (auto& v : data) v *= s;
    }
}

}  // namespace dunet::detail
