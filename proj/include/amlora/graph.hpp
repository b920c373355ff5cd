#pragma once

#include <amlora/tensor.hpp>

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace amlora {

/// A named, persistent tensor that the optimizer may update.
///
/// `grad` is absent until a backward pass reaches the parameter. Copies get a
/// fresh id so optimizer state never aliases between the original and the copy.
class Parameter {
public:
    Parameter();
    Parameter(std::string name, Tensor value, bool trainable = true);
    Parameter(const Parameter &other);
    Parameter &operator=(const Parameter &other);
    Parameter(Parameter &&) noexcept = default;
    Parameter &operator=(Parameter &&) noexcept = default;

    std::uint64_t id() const noexcept { return id_; }

    std::string name;
    Tensor value;
    std::optional<Tensor> grad;
    bool trainable = true;

private:
    std::uint64_t id_;
};

using NodeId = std::size_t;
class Graph;

/// Handle to a node on a Graph. Cheap to copy; valid while the graph lives.
struct Var {
    Graph *graph = nullptr;
    NodeId id = 0;

    const Tensor &value() const;
    const Shape &shape() const { return value().shape(); }
};

/// Append-only reverse-mode tape, rebuilt for every forward pass.
///
/// Nodes are stored in insertion order, which is also a topological order:
/// a node's inputs are always recorded before it. backward() walks the list
/// once in reverse.
class Graph {
public:
    using BackwardFn = std::function<void(Graph &, NodeId)>;

    Graph() = default;
    Graph(const Graph &) = delete;
    Graph &operator=(const Graph &) = delete;

    Var constant(Tensor value);
    /// Leaf bound to `p`. Binding the same parameter twice returns the same node.
    Var param(Parameter &p);

    /// Records an op. `fn` is dropped when no input requires a gradient.
    Var record(std::string_view tag, std::vector<NodeId> inputs, Tensor value, BackwardFn fn);

    /// Seeds d(loss)/d(loss) = 1 and propagates. Trainable parameters reached
    /// from `loss` receive their gradient (accumulated into Parameter::grad).
    void backward(Var loss);

    const Tensor &value(NodeId id) const { return nodes_[id].value; }
    bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }
    std::string_view tag(NodeId id) const { return nodes_[id].tag; }
    const std::vector<NodeId> &inputs(NodeId id) const { return nodes_[id].inputs; }
    std::size_t size() const noexcept { return nodes_.size(); }
    bool backward_done() const noexcept { return backward_done_; }

    /// Upstream gradient of a node during backward.
    const Tensor &grad(NodeId id) const { return *nodes_[id].grad; }
    /// Gradient buffer of an input, zero-allocated on first access.
    Tensor &grad_slot(NodeId id);

private:
    struct Node {
        std::string tag;
        std::vector<NodeId> inputs;
        Tensor value;
        std::optional<Tensor> grad;
        BackwardFn backward;
        Parameter *param = nullptr;
        bool requires_grad = false;
    };

    std::deque<Node> nodes_;
    std::unordered_map<const Parameter *, NodeId> bound_;
    bool backward_done_ = false;
};

} // namespace amlora
