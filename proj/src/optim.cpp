#include "dunet/optim.hpp"

#include <cmath>

namespace dunet {

template <typename T>
void Adam<T>::step(std::span<BasicTensor<T>* const> params, std::span<const BasicTensor<T>* const> grads) {
    if (params.size() != grads.size()) {
        throw Error("adam: " + std::to_string(params.size()) + " parameters but " + std::to_string(grads.size()) +
                    " gradients");
    }
    if (m_.empty()) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (std::size_t k = 0; k < params.size(); ++k) {
            m_[k].assign(params[k]->size(), 0.0);
            v_[k].assign(params[k]->size(), 0.0);
        }
    }
    if (m_.size() != params.size()) {
        throw Error("adam: parameter list changed between steps");
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
        BasicTensor<T>& p = *params[k];
        const BasicTensor<T>& g = *grads[k];
        if (p.shape() != g.shape() || m_[k].size() != p.size()) {
            throw ShapeError("adam: parameter " + p.shape().str() + " vs gradient " + g.shape().str());
        }
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = g[i];
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
            const double mh = m[i] / c1;
            const double vh = v[i] / c2;
            p[i] = static_cast<T>(p[i] - cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps));
        }
    }
}

template <typename T>
void Adam<T>::step(BasicGraph<T>& g) {
    std::vector<BasicTensor<T>*> params;
    std::vector<const BasicTensor<T>*> grads;
    for (NodeId id : g.parameters()) {
        params.push_back(&g.parameter_value(id));
        grads.push_back(&g.grad(id));
    }
    step(params, grads);
}

template class Adam<float>;
template class Adam<double>;

}  // namespace dunet
