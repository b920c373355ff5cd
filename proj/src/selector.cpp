#include <amlora/selector.hpp>

#include <amlora/errors.hpp>
#include <amlora/ops.hpp>

#include <cmath>
#include <string>

namespace amlora {

SelectorVariant parse_selector_variant(std::string_view text)
{
    if (text == "NR" || text == "nr")
        return SelectorVariant::nr;
    if (text == "AR" || text == "ar")
        return SelectorVariant::ar;
    throw ConfigError("unknown selector variant '" + std::string(text) + "' (expected NR or AR)");
}

std::string_view to_string(SelectorVariant variant)
{
    return variant == SelectorVariant::nr ? "NR" : "AR";
}

namespace {
Parameter make_head(std::size_t index, std::size_t d_out)
{
    return Parameter("head" + std::to_string(index), Tensor::zeros({d_out, 1}));
}
} // namespace

AttentionalSelector::AttentionalSelector(std::size_t stack_len, std::size_t d_out, SelectorVariant variant,
                                         double lambda)
    : d_out_(d_out), variant_(variant)
{
    if (stack_len < 1)
        throw ConfigError("selector needs at least the zero adapter");
    if (d_out == 0)
        throw ConfigError("selector head length must be positive");
    set_lambda(lambda);
    for (std::size_t i = 0; i < stack_len; ++i)
        heads_.push_back(make_head(i, d_out));
    refresh_trainability();
}

void AttentionalSelector::set_lambda(double lambda)
{
    if (!(lambda >= 0.0) || !std::isfinite(lambda))
        throw ConfigError("selector lambda must be finite and non-negative, got " + std::to_string(lambda));
    lambda_ = lambda;
}

void AttentionalSelector::extend_for_task(const AdapterStack &stack, std::uint64_t)
{
    if (heads_.size() == stack.size())
        throw StateError("selector already has " + std::to_string(heads_.size()) + " heads for " +
                         std::to_string(stack.size()) + " adapters");
    if (heads_.size() + 1 != stack.size())
        throw StateError("selector with " + std::to_string(heads_.size()) + " heads is stale for a stack of " +
                         std::to_string(stack.size()));
    heads_.push_back(make_head(heads_.size(), d_out_));
    refresh_trainability();
}

void AttentionalSelector::restore_head(Tensor values)
{
    if (values.size() != d_out_)
        throw DimensionError("restored head has " + std::to_string(values.size()) + " values, expected " +
                             std::to_string(d_out_));
    Parameter head = make_head(heads_.size(), d_out_);
    head.value = values.reshaped({d_out_, 1});
    head.trainable = false;
    heads_.push_back(std::move(head));
}

void AttentionalSelector::refresh_trainability() noexcept
{
    for (std::size_t i = 0; i < heads_.size(); ++i)
        heads_[i].trainable = variant_ == SelectorVariant::ar || i + 1 == heads_.size();
}

void AttentionalSelector::freeze_all() noexcept
{
    for (auto &h : heads_)
        h.trainable = false;
}

AttentionalSelector selector_init(std::size_t stack_len, std::size_t d_out, SelectorVariant variant, double lambda,
                                  std::uint64_t)
{
    return AttentionalSelector(stack_len, d_out, variant, lambda);
}

Var gate(Graph &g, AttentionalSelector &selector, std::span<const Var> adapter_outputs)
{
    if (adapter_outputs.size() != selector.size())
        throw StateError("stale selector: " + std::to_string(selector.size()) + " heads for " +
                         std::to_string(adapter_outputs.size()) + " adapter outputs");
    std::vector<Var> logits;
    logits.reserve(adapter_outputs.size());
    for (std::size_t i = 0; i < adapter_outputs.size(); ++i) {
        const Tensor &out = adapter_outputs[i].value();
        if (out.rank() != 2 || out.shape()[1] != selector.d_out())
            throw DimensionError("gate: adapter output " + shape_string(out.shape()) + " does not match head length " +
                                 std::to_string(selector.d_out()));
        logits.push_back(ops::matmul(adapter_outputs[i], g.param(selector.heads()[i])));
    }
    return ops::softmax(ops::concat_cols(logits));
}

Var gated_adapter_sum(Graph &g, AdapterStack &stack, AttentionalSelector &selector, Var x, Var *gates_out)
{
    if (stack.size() != selector.size())
        throw StateError("stale selector: " + std::to_string(selector.size()) + " heads for a stack of " +
                         std::to_string(stack.size()));
    std::vector<Var> outputs;
    outputs.reserve(stack.size());
    for (auto &adapter : stack.adapters())
        outputs.push_back(adapter_apply(g, adapter, x));
    Var gates = gate(g, selector, outputs);
    if (gates_out)
        *gates_out = gates;
    Var total = ops::row_scale(outputs[0], ops::select_column(gates, 0));
    for (std::size_t i = 1; i < outputs.size(); ++i)
        total = ops::add(total, ops::row_scale(outputs[i], ops::select_column(gates, i)));
    return total;
}

Var mixed_forward(Graph &g, Parameter &w0, AdapterStack &stack, AttentionalSelector &selector, Var x)
{
    Var base = ops::linear(x, g.param(w0));
    return ops::add(base, gated_adapter_sum(g, stack, selector, x));
}

Var sparsity_loss(Graph &g, AttentionalSelector &selector)
{
    if (selector.lambda() == 0.0 || selector.size() == 0)
        return g.constant(Tensor::scalar(0.0));
    Var total = ops::l1_norm(g.param(selector.heads()[0]));
    for (std::size_t i = 1; i < selector.size(); ++i)
        total = ops::add(total, ops::l1_norm(g.param(selector.heads()[i])));
    return ops::scale(total, selector.lambda());
}

std::vector<Parameter *> trainable_set(AttentionalSelector &selector, AdapterStack &stack)
{
    if (!stack.training() || stack.task_count() == 0)
        throw StateError("trainable_set: no task is active");
    if (stack.size() != selector.size())
        throw StateError("trainable_set: selector is stale for the adapter stack");
    LoraAdapter &active = stack.adapters().back();
    std::vector<Parameter *> out{&active.a, &active.b};
    if (selector.variant() == SelectorVariant::ar) {
        for (auto &h : selector.heads())
            out.push_back(&h);
    } else {
        out.push_back(&selector.heads().back());
    }
    return out;
}

} // namespace amlora
