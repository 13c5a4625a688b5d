#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dunet/kernels.hpp"
#include "dunet/tensor.hpp"

namespace dunet {

using kernels::Padding;

enum class OpKind { input, parameter, conv2d, max_pool, avg_pool, relu, sigmoid, concat, upsample2x, loss };

/// Training objective. `bce_dice` is the unweighted sum of both terms.
enum class LossKind { bce, dice, bce_dice };

std::string to_string(LossKind kind);
LossKind loss_kind_from_string(const std::string& s);

/// Smoothing added to numerator and denominator of the soft Dice term.
inline constexpr double kDiceSmoothing = 1.0;

struct NodeId {
    int index = -1;
    bool valid() const { return index >= 0; }
    friend bool operator==(NodeId, NodeId) = default;
};

/// Static computation graph with reverse-mode differentiation.
///
/// Nodes are appended in topological order (every input precedes its user), so
/// the graph is acyclic by construction. Parameters live inside the graph as
/// nodes holding their value and, after `backward`, their gradient. Shapes are
/// inferred at `forward` time from the fed inputs.
template <typename T>
class BasicGraph {
   public:
    NodeId input(const std::string& name);
    NodeId parameter(const std::string& name, Shape shape);

    NodeId conv2d(NodeId x, NodeId w, NodeId b, Padding pad = Padding::same, int stride = 1);
    NodeId max_pool(NodeId x);
    NodeId avg_pool(NodeId x);
    NodeId relu(NodeId x);
    NodeId sigmoid(NodeId x);
    /// Channels of `a` first, then `b`; batch and spatial extents must agree.
    NodeId concat(NodeId a, NodeId b);
    NodeId upsample2x(NodeId x, NodeId w, NodeId b);
    /// Scalar loss of probabilities `pred` against a {0,1} `target`.
    NodeId loss(NodeId pred, NodeId target, LossKind kind);

    void mark_output(NodeId id);
    const std::vector<NodeId>& outputs() const { return outputs_; }

    void set_input(const std::string& name, BasicTensor<T> value);
    /// Evaluates every node the targets depend on.
    void forward(std::span<const NodeId> targets);
    void forward(NodeId target) { forward(std::span<const NodeId>(&target, 1)); }
    const BasicTensor<T>& value(NodeId id) const;

    /// Gradients of the scalar `seed` with respect to every node it depends on.
    /// Parameters the seed does not reach receive zero gradients.
    void backward(NodeId seed);
    /// Vector-Jacobian product: back-propagates `upstream` (shaped like the
    /// value of `node`) instead of a unit scalar seed.
    void backward(NodeId node, const BasicTensor<T>& upstream);
    const BasicTensor<T>& grad(NodeId id) const;

    std::vector<NodeId> parameters() const;
    BasicTensor<T>& parameter_value(NodeId id);
    const BasicTensor<T>& parameter_value(NodeId id) const;
    std::optional<NodeId> find(const std::string& name) const;
    std::size_t parameter_scalar_count() const;
    /// Parameters that no marked output depends on.
    std::vector<std::string> unreachable_parameters() const;

    const std::string& name(NodeId id) const { return node(id).name; }
    OpKind kind(NodeId id) const { return node(id).op; }
    const std::vector<int>& operands(NodeId id) const { return node(id).in; }
    std::size_t size() const { return nodes_.size(); }

    /// Reject non-finite values after every forward op.
    void set_check_finite(bool on) { check_finite_ = on; }

   private:
    struct Node {
        OpKind op = OpKind::input;
        std::string name;
        std::vector<int> in;
        Padding pad = Padding::same;
        int stride = 1;
        LossKind loss = LossKind::bce_dice;
        BasicTensor<T> value;
        BasicTensor<T> grad;
        std::vector<std::int32_t> argmax;
        std::uint64_t pass = 0;
        bool has_value = false;
    };

    Node& node(NodeId id);
    const Node& node(NodeId id) const;
    NodeId append(Node n);
    std::vector<char> ancestors(std::span<const NodeId> roots) const;
    void evaluate(Node& n);
    void propagate(int index, std::vector<char>& handled);

    std::vector<Node> nodes_;
    std::vector<NodeId> outputs_;
    std::uint64_t pass_ = 0;
    bool check_finite_ =
#ifdef NDEBUG
        false;
#else
        true;
#endif
};

/// Loss of `pred` in [0, 1] against a {0, 1} target of the same extents.
/// BCE is averaged over all pixels with predictions clamped to [eps, 1 - eps];
/// the Dice term is 1 - softDice per sample, averaged over the batch.
template <typename T>
T loss_value(const BasicTensor<T>& pred, const BasicTensor<T>& target, LossKind kind);

using Graph = BasicGraph<float>;
using GraphD = BasicGraph<double>;

}  // namespace dunet
