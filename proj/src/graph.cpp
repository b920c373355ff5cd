#include <amlora/graph.hpp>

#include <amlora/errors.hpp>

#include <atomic>

namespace amlora {

namespace {
std::uint64_t next_parameter_id()
{
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
}
} // namespace

Parameter::Parameter() : id_(next_parameter_id()) {}

Parameter::Parameter(std::string name_, Tensor value_, bool trainable_)
    : name(std::move(name_)), value(std::move(value_)), trainable(trainable_), id_(next_parameter_id())
{
}

Parameter::Parameter(const Parameter &other)
    : name(other.name), value(other.value), grad(other.grad), trainable(other.trainable), id_(next_parameter_id())
{
}

Parameter &Parameter::operator=(const Parameter &other)
{
    if (this != &other) {
        name = other.name;
        value = other.value;
        grad = other.grad;
        trainable = other.trainable;
        id_ = next_parameter_id();
    }
    return *this;
}

const Tensor &Var::value() const
{
    return graph->value(id);
}

Var Graph::constant(Tensor value)
{
    Node node;
    node.tag = "const";
    node.value = std::move(value);
    nodes_.push_back(std::move(node));
    return {this, nodes_.size() - 1};
}

Var Graph::param(Parameter &p)
{
    if (auto it = bound_.find(&p); it != bound_.end())
        return {this, it->second};
    Node node;
    node.tag = "param";
    node.value = p.value;
    node.param = &p;
    node.requires_grad = p.trainable;
    nodes_.push_back(std::move(node));
    const NodeId id = nodes_.size() - 1;
    bound_.emplace(&p, id);
    return {this, id};
}

Var Graph::record(std::string_view tag, std::vector<NodeId> inputs, Tensor value, BackwardFn fn)
{
    Node node;
    node.tag = std::string(tag);
    for (NodeId in : inputs) {
        if (in >= nodes_.size())
            throw UsageError("node input " + std::to_string(in) + " is not on this graph");
        node.requires_grad = node.requires_grad || nodes_[in].requires_grad;
    }
    node.inputs = std::move(inputs);
    node.value = std::move(value);
    if (node.requires_grad)
        node.backward = std::move(fn);
    nodes_.push_back(std::move(node));
    return {this, nodes_.size() - 1};
}

Tensor &Graph::grad_slot(NodeId id)
{
    auto &node = nodes_[id];
    if (!node.grad)
        node.grad = Tensor::zeros(node.value.shape());
    return *node.grad;
}

void Graph::backward(Var loss)
{
    if (loss.graph != this)
        throw UsageError("backward: loss is not on this graph");
    if (nodes_[loss.id].value.size() != 1)
        throw UsageError("backward: loss must be scalar, got shape " + shape_string(nodes_[loss.id].value.shape()));
    if (backward_done_)
        throw UsageError("backward: graph already differentiated");
    backward_done_ = true;
    if (!nodes_[loss.id].requires_grad)
        return;
    grad_slot(loss.id).fill(1.0);
    for (NodeId id = loss.id + 1; id-- > 0;) {
        auto &node = nodes_[id];
        if (!node.requires_grad || !node.grad)
            continue;
        if (node.param) {
            Parameter &p = *node.param;
            if (!p.grad)
                p.grad = Tensor::zeros(p.value.shape());
            auto dst = p.grad->data();
            auto src = node.grad->data();
            for (std::size_t i = 0; i < dst.size(); ++i)
                dst[i] += src[i];
            continue;
        }
        if (node.backward)
            node.backward(*this, id);
    }
}

} // namespace amlora
