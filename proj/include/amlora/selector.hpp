#pragma once

#include <amlora/adapters.hpp>
#include <amlora/graph.hpp>

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace amlora {

/// NR trains only the newest score head; AR trains all of them.
enum class SelectorVariant { nr, ar };

SelectorVariant parse_selector_variant(std::string_view text);
std::string_view to_string(SelectorVariant variant);

/// Attentional selector for one projection site.
///
/// Holds one score head per adapter (zero adapter included), each a d_out x 1
/// column. For an example x the logit of adapter i is <head_i, dW_i x>, and the
/// gates are the softmax of those logits across adapters.
class AttentionalSelector {
public:
    AttentionalSelector() = default;
    AttentionalSelector(std::size_t stack_len, std::size_t d_out, SelectorVariant variant, double lambda);

    /// Appends one zero head after the adapter stack has grown by one.
    void extend_for_task(const AdapterStack &stack, std::uint64_t seed);
    /// Appends a deserialized head (used by checkpoint loading).
    void restore_head(Tensor values);
    /// Re-derives head trainability from the variant: AR all heads, NR the last one.
    void refresh_trainability() noexcept;
    void freeze_all() noexcept;

    std::size_t size() const noexcept { return heads_.size(); }
    std::size_t d_out() const noexcept { return d_out_; }
    SelectorVariant variant() const noexcept { return variant_; }
    double lambda() const noexcept { return lambda_; }
    void set_lambda(double lambda);

    std::vector<Parameter> &heads() noexcept { return heads_; }
    const std::vector<Parameter> &heads() const noexcept { return heads_; }
    std::size_t parameter_count() const noexcept { return heads_.size() * d_out_; }

private:
    std::vector<Parameter> heads_;
    std::size_t d_out_ = 0;
    SelectorVariant variant_ = SelectorVariant::ar;
    double lambda_ = 0.0;
};

/// Zero-initialized heads, so every initial gate row is uniform. `seed` is
/// accepted for interface symmetry with adapter construction.
AttentionalSelector selector_init(std::size_t stack_len, std::size_t d_out, SelectorVariant variant, double lambda,
                                  std::uint64_t seed);

/// Gates [b x (n+1)] from per-adapter outputs, each [b x d_out].
Var gate(Graph &g, AttentionalSelector &selector, std::span<const Var> adapter_outputs);

/// sum_i g_i * (dW_i x), with gates written to `gates_out` when non-null.
Var gated_adapter_sum(Graph &g, AdapterStack &stack, AttentionalSelector &selector, Var x, Var *gates_out = nullptr);

/// h = W0 x + sum_i g_i * (dW_i x); W0 is d_out x d_in.
Var mixed_forward(Graph &g, Parameter &w0, AdapterStack &stack, AttentionalSelector &selector, Var x);

/// lambda * sum_i ||head_i||_1; the constant 0 when lambda == 0.
Var sparsity_loss(Graph &g, AttentionalSelector &selector);

/// Parameters updated while the current task trains: the active adapter's A and
/// B plus the heads allowed by the variant. Throws StateError with no active task.
std::vector<Parameter *> trainable_set(AttentionalSelector &selector, AdapterStack &stack);

} // namespace amlora
