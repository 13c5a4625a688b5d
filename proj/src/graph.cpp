#include "dunet/graph.hpp"

#include <algorithm>
#include <cmath>

namespace dunet {

std::string to_string(LossKind kind) {
    switch (kind) {
        case LossKind::bce:
            return "bce";
        case LossKind::dice:
            return "dice";
        case LossKind::bce_dice:
            return "bce+dice";
    }
    return "bce+dice";
}

LossKind loss_kind_from_string(const std::string& s) {
    if (s == "bce") return LossKind::bce;
    if (s == "dice") return LossKind::dice;
    if (s == "bce+dice" || s == "bce_dice") return LossKind::bce_dice;
    throw Error("unknown loss kind '" + s + "' (expected bce, dice or bce+dice)");
}

namespace {

constexpr double kBceEps = 1e-7;

template <typename T>
void check_loss_operands(const BasicTensor<T>& pred, const BasicTensor<T>& target) {
    if (pred.shape() != target.shape()) {
        throw ShapeError("loss: prediction " + pred.shape().str() + " and target " + target.shape().str() +
                         " differ");
    }
    if (pred.c() != 1) {
        throw ShapeError("loss: prediction must have one channel, got " + pred.shape().str());
    }
    for (T p : pred.data()) {
        if (!(p >= T(0) && p <= T(1))) {
            throw Error("loss: prediction outside [0, 1]; apply sigmoid first");
        }
    }
    for (T t : target.data()) {
        if (t != T(0) && t != T(1)) {
            throw Error("loss: target must be binary {0, 1}");
        }
    }
}

template <typename T>
T clamp_prob(T p) {
    return std::clamp(p, T(kBceEps), T(1) - T(kBceEps));
}

struct DiceSums {
    double inter = 0, pred = 0, target = 0;
};

template <typename T>
std::vector<DiceSums> dice_sums(const BasicTensor<T>& pred, const BasicTensor<T>& target) {
    std::vector<DiceSums> out(static_cast<std::size_t>(pred.n()));
    const std::size_t per = pred.shape().plane();
    for (int n = 0; n < pred.n(); ++n) {
        const T* p = pred.plane(n, 0);
        const T* t = target.plane(n, 0);
        DiceSums s;
        for (std::size_t k = 0; k < per; ++k) {
            s.inter += static_cast<double>(p[k]) * t[k];
            s.pred += p[k];
            s.target += t[k];
        }
        out[static_cast<std::size_t>(n)] = s;
    }
    return out;
}

bool uses_bce(LossKind k) { return k == LossKind::bce || k == LossKind::bce_dice; }
bool uses_dice(LossKind k) { return k == LossKind::dice || k == LossKind::bce_dice; }

}  // namespace

template <typename T>
T loss_value(const BasicTensor<T>& pred, const BasicTensor<T>& target, LossKind kind) {
    check_loss_operands(pred, target);
    double total = 0;
    if (uses_bce(kind)) {
        double acc = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const double p = clamp_prob(pred[i]);
            const double t = target[i];
            acc -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
        }
        total += acc / static_cast<double>(pred.size());
    }
    if (uses_dice(kind)) {
        double acc = 0;
        for (const auto& s : dice_sums(pred, target)) {
            acc += 1.0 - (2.0 * s.inter + kDiceSmoothing) / (s.pred + s.target + kDiceSmoothing);
        }
        total += acc / pred.n();
    }
    return static_cast<T>(total);
}

template <typename T>
typename BasicGraph<T>::Node& BasicGraph<T>::node(NodeId id) {
    if (id.index < 0 || static_cast<std::size_t>(id.index) >= nodes_.size()) {
        throw Error("graph: invalid node id " + std::to_string(id.index));
    }
    return nodes_[static_cast<std::size_t>(id.index)];
}

template <typename T>
const typename BasicGraph<T>::Node& BasicGraph<T>::node(NodeId id) const {
    if (id.index < 0 || static_cast<std::size_t>(id.index) >= nodes_.size()) {
        throw Error("graph: invalid node id " + std::to_string(id.index));
    }
    return nodes_[static_cast<std::size_t>(id.index)];
}

template <typename T>
NodeId BasicGraph<T>::append(Node n) {
    for (int i : n.in) {
        if (i < 0 || static_cast<std::size_t>(i) >= nodes_.size()) {
            throw Error("graph: operand " + std::to_string(i) + " does not exist");
        }
    }
    nodes_.push_back(std::move(n));
    return NodeId{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
NodeId BasicGraph<T>::input(const std::string& name) {
    if (find(name)) {
        throw Error("graph: duplicate node name '" + name + "'");
    }
    Node n;
    n.op = OpKind::input;
    n.name = name;
    return append(std::move(n));
}

template <typename T>
NodeId BasicGraph<T>::parameter(const std::string& name, Shape shape) {
    if (find(name)) {
        throw Error("graph: duplicate node name '" + name + "'");
    }
    Node n;
    n.op = OpKind::parameter;
    n.name = name;
    n.value = BasicTensor<T>(shape);
    n.has_value = true;
    return append(std::move(n));
}

template <typename T>
NodeId BasicGraph<T>::conv2d(NodeId x, NodeId w, NodeId b, Padding pad, int stride) {
    Node n;
    n.op = OpKind::conv2d;
    n.in = {x.index, w.index, b.index};
    n.pad = pad;
    n.stride = stride;
    return append(std::move(n));
}

template <typename T>
NodeId BasicGraph<T>::max_pool(NodeId x) {
    Node n;
    n.op = OpKind::max_pool;
    n.in = {x.index};
    return append(std::move(n));
}

template <typename T>
NodeId BasicGraph<T>::avg_pool(NodeId x) {
    Node n;
    n.op = OpKind::avg_pool;
    n.in = {x.index};
    return append(std::move(n));
}

template <typename T>
NodeId BasicGraph<T>::relu(NodeId x) {
    Node n;
    n.op = OpKind::relu;
    n.in = {x.index};
    return append(std::move(n));
}

template <typename T>
NodeId BasicGraph<T>::sigmoid(NodeId x) {
    Node n;
    n.op = OpKind::sigmoid;
    n.in = {x.index};
    return append(std::move(n));
}

template <typename T>
NodeId BasicGraph<T>::concat(NodeId a, NodeId b) {
    Node n;
    n.op = OpKind::concat;
    n.in = {a.index, b.index};
    return append(std::move(n));
}

template <typename T>
NodeId BasicGraph<T>::upsample2x(NodeId x, NodeId w, NodeId b) {
    Node n;
    n.op = OpKind::upsample2x;
    n.in = {x.index, w.index, b.index};
    return append(std::move(n));
}

template <typename T>
NodeId BasicGraph<T>::loss(NodeId pred, NodeId target, LossKind kind) {
    Node n;
    n.op = OpKind::loss;
    n.in = {pred.index, target.index};
    n.loss = kind;
    return append(std::move(n));
}

template <typename T>
void BasicGraph<T>::mark_output(NodeId id) {
    node(id);
    if (std::find(outputs_.begin(), outputs_.end(), id) == outputs_.end()) {
        outputs_.push_back(id);
    }
}

template <typename T>
void BasicGraph<T>::set_input(const std::string& name, BasicTensor<T> value) {
    auto id = find(name);
    if (!id || node(*id).op != OpKind::input) {
        throw Error("graph: no input named '" + name + "'");
    }
    Node& n = node(*id);
    n.value = std::move(value);
    n.has_value = true;
}

template <typename T>
std::vector<char> BasicGraph<T>::ancestors(std::span<const NodeId> roots) const {
    std::vector<char> need(nodes_.size(), 0);
    for (NodeId r : roots) {
        node(r);
        need[static_cast<std::size_t>(r.index)] = 1;
    }
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        if (!need[i]) continue;
        for (int j : nodes_[i].in) {
            need[static_cast<std::size_t>(j)] = 1;
        }
    }
    return need;
}

template <typename T>
void BasicGraph<T>::forward(std::span<const NodeId> targets) {
    const auto need = ancestors(targets);
    ++pass_;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (!need[i]) continue;
        Node& n = nodes_[i];
        if (n.op == OpKind::input || n.op == OpKind::parameter) {
            if (!n.has_value) {
                throw Error("graph: input '" + n.name + "' was not set before forward");
            }
            n.pass = pass_;
            continue;
        }
        evaluate(n);
        n.pass = pass_;
        if (check_finite_ && !n.value.all_finite()) {
            throw Error("graph: non-finite value produced by node " + std::to_string(i));
        }
    }
}

template <typename T>
void BasicGraph<T>::evaluate(Node& n) {
    auto in = [&](std::size_t k) -> const BasicTensor<T>& { return nodes_[static_cast<std::size_t>(n.in[k])].value; };
    switch (n.op) {
        case OpKind::conv2d: {
            const auto& b = in(2);
            if (b.size() != static_cast<std::size_t>(in(1).n())) {
                throw ShapeError("conv2d: bias " + b.shape().str() + " does not match weight " + in(1).shape().str());
            }
            kernels::conv2d_forward(in(0), in(1), &b, n.pad, n.stride, n.value);
            break;
        }
        case OpKind::max_pool:
            kernels::max_pool2x2_forward(in(0), n.value, n.argmax);
            break;
        case OpKind::avg_pool:
            kernels::avg_pool2x2_forward(in(0), n.value);
            break;
        case OpKind::relu: {
            const auto& x = in(0);
            if (n.value.shape() != x.shape()) n.value = BasicTensor<T>(x.shape());
            for (std::size_t i = 0; i < x.size(); ++i) n.value[i] = x[i] > T(0) ? x[i] : T(0);
            break;
        }
        case OpKind::sigmoid: {
            const auto& x = in(0);
            if (n.value.shape() != x.shape()) n.value = BasicTensor<T>(x.shape());
            for (std::size_t i = 0; i < x.size(); ++i) n.value[i] = T(1) / (T(1) + std::exp(-x[i]));
            break;
        }
        case OpKind::concat: {
            const auto& a = in(0);
            const auto& b = in(1);
            if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w()) {
                throw ShapeError("concat: batch/spatial extents differ (" + a.shape().str() + " vs " +
                                 b.shape().str() + ")");
            }
            const Shape s{a.n(), a.c() + b.c(), a.h(), a.w()};
            if (n.value.shape() != s) n.value = BasicTensor<T>(s);
            const std::size_t ca = static_cast<std::size_t>(a.c()) * a.shape().plane();
            const std::size_t cb = static_cast<std::size_t>(b.c()) * b.shape().plane();
            for (int k = 0; k < a.n(); ++k) {
                std::copy_n(a.raw() + k * ca, ca, n.value.raw() + k * (ca + cb));
                std::copy_n(b.raw() + k * cb, cb, n.value.raw() + k * (ca + cb) + ca);
            }
            break;
        }
        case OpKind::upsample2x: {
            const auto& b = in(2);
            if (b.size() != static_cast<std::size_t>(in(1).c())) {
                throw ShapeError("upsample2x: bias " + b.shape().str() + " does not match weight " +
                                 in(1).shape().str());
            }
            kernels::upsample2x_forward(in(0), in(1), &b, n.value);
            break;
        }
        case OpKind::loss:
            n.value = BasicTensor<T>(Shape{1, 1, 1, 1}, loss_value(in(0), in(1), n.loss));
            break;
        case OpKind::input:
        case OpKind::parameter:
            break;
    }
}

template <typename T>
const BasicTensor<T>& BasicGraph<T>::value(NodeId id) const {
    const Node& n = node(id);
    const bool ready = n.op == OpKind::parameter || (n.op == OpKind::input && n.has_value) ||
                       (n.pass == pass_ && pass_ > 0);
    if (!ready) {
        throw Error("graph: node " + std::to_string(id.index) + " has not been computed by the last forward");
    }
    return n.value;
}

template <typename T>
void BasicGraph<T>::backward(NodeId seed) {
    const Node& s = node(seed);
    if (pass_ == 0 || s.pass != pass_) {
        throw Error("graph: backward called before forward of the seed node");
    }
    if (s.value.size() != 1) {
        throw Error("graph: backward seed must be scalar, got " + s.value.shape().str());
    }
    backward(seed, BasicTensor<T>(s.value.shape(), T(1)));
}

template <typename T>
void BasicGraph<T>::backward(NodeId seed, const BasicTensor<T>& upstream) {
    const Node& s = node(seed);
    if (pass_ == 0 || s.pass != pass_) {
        throw Error("graph: backward called before forward of the seed node");
    }
    if (upstream.shape() != s.value.shape()) {
        throw ShapeError("graph: upstream gradient " + upstream.shape().str() + " does not match node value " +
                         s.value.shape().str());
    }
    const auto need = ancestors(std::span<const NodeId>(&seed, 1));
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        Node& n = nodes_[i];
        if (need[i] || n.op == OpKind::parameter) {
            n.grad = BasicTensor<T>(n.value.shape());
        }
    }
    nodes_[static_cast<std::size_t>(seed.index)].grad = upstream;
    std::vector<char> handled(nodes_.size(), 0);
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        if (need[i] && !handled[i]) {
            propagate(static_cast<int>(i), handled);
        }
    }
}

template <typename T>
void BasicGraph<T>::propagate(int index, std::vector<char>& handled) {
    Node& n = nodes_[static_cast<std::size_t>(index)];
    auto in = [&](std::size_t k) -> Node& { return nodes_[static_cast<std::size_t>(n.in[k])]; };
    const auto& g = n.grad;
    switch (n.op) {
        case OpKind::input:
        case OpKind::parameter:
            break;
        case OpKind::conv2d:
            kernels::conv2d_backward(in(0).value, in(1).value, g, n.pad, n.stride, &in(0).grad, &in(1).grad,
                                     &in(2).grad);
            break;
        case OpKind::max_pool:
            kernels::max_pool2x2_backward(g, n.argmax, in(0).grad);
            break;
        case OpKind::avg_pool:
            kernels::avg_pool2x2_backward(g, in(0).grad);
            break;
        case OpKind::relu: {
            auto& x = in(0);
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (x.value[i] > T(0)) x.grad[i] += g[i];
            }
            break;
        }
        case OpKind::sigmoid: {
            auto& x = in(0);
            for (std::size_t i = 0; i < g.size(); ++i) {
                const T p = n.value[i];
                x.grad[i] += g[i] * p * (T(1) - p);
            }
            break;
        }
        case OpKind::concat: {
            auto& a = in(0);
            auto& b = in(1);
            const std::size_t ca = static_cast<std::size_t>(a.value.c()) * a.value.shape().plane();
            const std::size_t cb = static_cast<std::size_t>(b.value.c()) * b.value.shape().plane();
            for (int k = 0; k < a.value.n(); ++k) {
                const T* src = g.raw() + k * (ca + cb);
                T* da = a.grad.raw() + k * ca;
                T* dbp = b.grad.raw() + k * cb;
                for (std::size_t i = 0; i < ca; ++i) da[i] += src[i];
                for (std::size_t i = 0; i < cb; ++i) dbp[i] += src[ca + i];
            }
            break;
        }
        case OpKind::upsample2x:
            kernels::upsample2x_backward(in(0).value, in(1).value, g, &in(0).grad, &in(1).grad, &in(2).grad);
            break;
        case OpKind::loss: {
            Node& pred = in(0);
            const Node& target = in(1);
            const T seed = g[0];
            const auto& p = pred.value;
            const auto& t = target.value;
            const std::size_t count = p.size();

            // When the prediction is a sigmoid consumed only by this loss, the BCE
            // term is differentiated with respect to the logits directly; this is
            // the same gradient, without the saturated 1 / (p (1 - p)) factor.
            const int pred_index = n.in[0];
            int consumers = 0;
            for (const auto& other : nodes_) {
                consumers += static_cast<int>(std::count(other.in.begin(), other.in.end(), pred_index));
            }
            const bool fuse = pred.op == OpKind::sigmoid && consumers == 1 && !pred.in.empty();
            Node* logits = fuse ? &nodes_[static_cast<std::size_t>(pred.in[0])] : nullptr;

            std::vector<double> dp(count, 0.0);   // d loss / d p
            std::vector<double> dz(count, 0.0);   // d loss / d logits (fused BCE only)
            if (uses_bce(n.loss)) {
                for (std::size_t i = 0; i < count; ++i) {
                    if (fuse) {
                        dz[i] = (static_cast<double>(p[i]) - t[i]) / static_cast<double>(count);
                    } else {
                        const double pc = clamp_prob(p[i]);
                        dp[i] = (pc - t[i]) / (pc * (1.0 - pc)) / static_cast<double>(count);
                    }
                }
            }
            if (uses_dice(n.loss)) {
                const auto sums = dice_sums(p, t);
                const std::size_t per = p.shape().plane();
                for (int k = 0; k < p.n(); ++k) {
                    const auto& s = sums[static_cast<std::size_t>(k)];
                    const double den = s.pred + s.target + kDiceSmoothing;
                    const double num = 2.0 * s.inter + kDiceSmoothing;
                    for (std::size_t i = k * per; i < (k + 1) * per; ++i) {
                        dp[i] -= (2.0 * t[i] * den - num) / (den * den) / p.n();
                    }
                }
            }
            if (fuse) {
                for (std::size_t i = 0; i < count; ++i) {
                    const double pi = p[i];
                    logits->grad[i] += static_cast<T>(seed * (dz[i] + dp[i] * pi * (1.0 - pi)));
                }
                handled[static_cast<std::size_t>(pred_index)] = 1;
            } else {
                for (std::size_t i = 0; i < count; ++i) {
                    pred.grad[i] += static_cast<T>(seed * dp[i]);
                }
            }
            break;
        }
    }
}

template <typename T>
const BasicTensor<T>& BasicGraph<T>::grad(NodeId id) const {
    return node(id).grad;
}

template <typename T>
std::vector<NodeId> BasicGraph<T>::parameters() const {
    std::vector<NodeId> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (nodes_[i].op == OpKind::parameter) out.push_back(NodeId{static_cast<int>(i)});
    }
    return out;
}

template <typename T>
BasicTensor<T>& BasicGraph<T>::parameter_value(NodeId id) {
    Node& n = node(id);
    if (n.op != OpKind::parameter) throw Error("graph: node '" + n.name + "' is not a parameter");
    return n.value;
}

template <typename T>
const BasicTensor<T>& BasicGraph<T>::parameter_value(NodeId id) const {
    const Node& n = node(id);
    if (n.op != OpKind::parameter) throw Error("graph: node '" + n.name + "' is not a parameter");
    return n.value;
}

template <typename T>
std::optional<NodeId> BasicGraph<T>::find(const std::string& name) const {
    if (name.empty()) return std::nullopt;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (nodes_[i].name == name) return NodeId{static_cast<int>(i)};
    }
    return std::nullopt;
}

template <typename T>
std::size_t BasicGraph<T>::parameter_scalar_count() const {
    std::size_t total = 0;
    for (const auto& n : nodes_) {
        if (n.op == OpKind::parameter) total += n.value.size();
    }
    return total;
}

template <typename T>
std::vector<std::string> BasicGraph<T>::unreachable_parameters() const {
    const auto need = ancestors(outputs_);
    std::vector<std::string> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (nodes_[i].op == OpKind::parameter && !need[i]) out.push_back(nodes_[i].name);
    }
    return out;
}

template class BasicGraph<float>;
template class BasicGraph<double>;
template float loss_value<float>(const Tensor&, const Tensor&, LossKind);
template double loss_value<double>(const TensorD&, const TensorD&, LossKind);

}  // namespace dunet
