#include <amlora/adapters.hpp>

#include <amlora/errors.hpp>
#include <amlora/ops.hpp>
#include <amlora/random.hpp>

#include <algorithm>
#include <string>

namespace amlora {

void LoraAdapter::freeze() noexcept
{
    frozen = true;
    a.trainable = false;
    b.trainable = false;
}

LoraAdapter new_adapter(std::size_t d_out, std::size_t d_in, std::size_t rank, double alpha, int task_id,
                        std::uint64_t seed)
{
    if (d_out == 0 || d_in == 0)
        throw ConfigError("adapter dimensions must be positive");
    if (rank < 1 || 2 * rank > std::min(d_in, d_out))
        throw ConfigError("adapter rank " + std::to_string(rank) + " must satisfy 1 <= r <= min(" +
                          std::to_string(d_in) + ", " + std::to_string(d_out) + ") / 2");
    if (!(alpha > 0.0))
        throw ConfigError("adapter alpha must be positive");
    LoraAdapter out;
    const std::string prefix = "lora" + std::to_string(task_id);
    out.a = Parameter(prefix + ".A", gaussian({rank, d_in}, 0.02, seed));
    out.b = Parameter(prefix + ".B", Tensor::zeros({d_out, rank}));
    out.rank = rank;
    out.alpha = alpha;
    out.task_id = task_id;
    out.d_in = d_in;
    out.d_out = d_out;
    return out;
}

LoraAdapter zero_adapter(std::size_t d_out, std::size_t d_in)
{
    LoraAdapter out;
    out.zero = true;
    out.frozen = true;
    out.a.trainable = false;
    out.b.trainable = false;
    out.a.name = "lora0.A";
    out.b.name = "lora0.B";
    out.d_in = d_in;
    out.d_out = d_out;
    return out;
}

Var adapter_apply(Graph &g, LoraAdapter &adapter, Var x)
{
    const Tensor &xv = x.value();
    if (xv.rank() != 2 || xv.shape()[1] != adapter.d_in)
        throw DimensionError("adapter expects [b x " + std::to_string(adapter.d_in) + "] input, got " +
                             shape_string(xv.shape()));
    if (adapter.zero)
        return g.constant(Tensor::zeros({xv.shape()[0], adapter.d_out}));
    Var low = ops::linear(x, g.param(adapter.a));
    Var up = ops::linear(low, g.param(adapter.b));
    return ops::scale(up, adapter.scale());
}

Tensor adapter_apply(const LoraAdapter &adapter, const Tensor &x)
{
    if (x.rank() != 2 || x.shape()[1] != adapter.d_in)
        throw DimensionError("adapter expects [b x " + std::to_string(adapter.d_in) + "] input, got " +
                             shape_string(x.shape()));
    if (adapter.zero)
        return Tensor::zeros({x.shape()[0], adapter.d_out});
    Tensor low = matmul_eager(x, transpose_eager(adapter.a.value));
    Tensor out = matmul_eager(low, transpose_eager(adapter.b.value));
    for (auto &v : out.data())
        v *= adapter.scale();
    return out;
}

Tensor materialize(const LoraAdapter &adapter)
{
    if (adapter.zero)
        return Tensor::zeros({adapter.d_out, adapter.d_in});
    Tensor dw = matmul_eager(adapter.b.value, adapter.a.value);
    for (auto &v : dw.data())
        v *= adapter.scale();
    return dw;
}

AdapterStack::AdapterStack(std::size_t d_out, std::size_t d_in, std::size_t rank, double alpha)
    : d_out_(d_out), d_in_(d_in), rank_(rank), alpha_(alpha)
{
    if (rank < 1 || 2 * rank > std::min(d_in, d_out))
        throw ConfigError("adapter rank " + std::to_string(rank) + " must satisfy 1 <= r <= min(" +
                          std::to_string(d_in) + ", " + std::to_string(d_out) + ") / 2");
    adapters_.push_back(zero_adapter(d_out, d_in));
}

void AdapterStack::begin_task(std::uint64_t seed)
{
    if (!configured())
        throw StateError("adapter stack is not configured");
    if (training_)
        throw StateError("begin_task called while task " + std::to_string(current_task()) + " is still training");
    for (auto &a : adapters_)
        a.freeze();
    const int task_id = static_cast<int>(adapters_.size());
    adapters_.push_back(new_adapter(d_out_, d_in_, rank_, alpha_, task_id, seed));
    training_ = true;
}

void AdapterStack::end_task()
{
    training_ = false;
}

void AdapterStack::restore(LoraAdapter adapter)
{
    if (adapter.d_in != d_in_ || adapter.d_out != d_out_)
        throw DimensionError("restored adapter shape does not match the stack");
    adapter.freeze();
    adapters_.push_back(std::move(adapter));
}

void AdapterStack::freeze_all() noexcept
{
    for (auto &a : adapters_)
        a.freeze();
}

std::size_t AdapterStack::trainable_count() const noexcept
{
    return static_cast<std::size_t>(std::count_if(adapters_.begin(), adapters_.end(), [](const LoraAdapter &a) {
        return !a.zero && (a.a.trainable || a.b.trainable);
    }));
}

std::size_t AdapterStack::parameter_count() const noexcept
{
    std::size_t total = 0;
    for (const auto &a : adapters_)
        total += a.parameter_count();
    return total;
}

Tensor merged_weight(const AdapterStack &stack, const Tensor &w0)
{
    if (w0.rank() != 2 || w0.shape()[0] != stack.d_out() || w0.shape()[1] != stack.d_in())
        throw DimensionError("merged_weight: base " + shape_string(w0.shape()) + " does not match adapters [" +
                             std::to_string(stack.d_out()) + "x" + std::to_string(stack.d_in()) + "]");
    Tensor out = w0;
    for (const auto &a : stack.adapters()) {
        if (a.zero)
            continue;
        const Tensor dw = materialize(a);
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] += dw[i];
    }
    return out;
}

} // namespace amlora
