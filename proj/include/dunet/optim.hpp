#pragma once

#include <span>
#include <vector>

#include "dunet/graph.hpp"

namespace dunet {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with bias correction. Moments are kept in double precision and
/// indexed by parameter position, so the same optimizer must always be
/// stepped with the same parameter list.
template <typename T>
class Adam {
   public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    void step(std::span<BasicTensor<T>* const> params, std::span<const BasicTensor<T>* const> grads);
    /// Steps every parameter of `g` using the gradients of its last backward pass.
    void step(BasicGraph<T>& g);

    long steps() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

   private:
    AdamConfig cfg_;
    long t_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

}  // namespace dunet
