#pragma once

#include <amlora/graph.hpp>

#include <cstdint>
#include <vector>

namespace amlora {

/// One task's low-rank update, applied as (alpha / r) * B * (A * x).
///
/// A is r x d_in, B is d_out x r. The zero adapter carries no buffers at all
/// and always contributes exactly zero.
struct LoraAdapter {
    Parameter a;
    Parameter b;
    std::size_t rank = 0;
    double alpha = 0.0;
    int task_id = 0;
    bool frozen = false;
    bool zero = false;
    std::size_t d_in = 0;
    std::size_t d_out = 0;

    double scale() const noexcept { return zero ? 0.0 : alpha / static_cast<double>(rank); }
    void freeze() noexcept;
    std::size_t parameter_count() const noexcept { return zero ? 0 : rank * (d_in + d_out); }
};

/// A ~ N(0, 0.02^2), B = 0. Requires 1 <= r <= min(d_in, d_out) / 2.
LoraAdapter new_adapter(std::size_t d_out, std::size_t d_in, std::size_t rank, double alpha, int task_id,
                        std::uint64_t seed);
LoraAdapter zero_adapter(std::size_t d_out, std::size_t d_in);

/// x [b x d_in] -> [b x d_out], low rank first.
Var adapter_apply(Graph &g, LoraAdapter &adapter, Var x);
Tensor adapter_apply(const LoraAdapter &adapter, const Tensor &x);
/// Dense (alpha / r) * B * A, d_out x d_in.
Tensor materialize(const LoraAdapter &adapter);

/// Ordered adapters [zero, task 1, ..., task n] for one projection site.
class AdapterStack {
public:
    AdapterStack() = default;
    AdapterStack(std::size_t d_out, std::size_t d_in, std::size_t rank, double alpha);

    /// Freezes every existing adapter and appends a trainable one for the next task.
    void begin_task(std::uint64_t seed);
    /// Closes the training window; the active adapter stays trainable until the next begin_task.
    void end_task();
    /// Appends a deserialized adapter, frozen.
    void restore(LoraAdapter adapter);
    /// Freezes everything, including the most recent adapter.
    void freeze_all() noexcept;

    bool training() const noexcept { return training_; }
    int current_task() const noexcept { return static_cast<int>(adapters_.size()) - 1; }
    std::size_t size() const noexcept { return adapters_.size(); }
    std::size_t task_count() const noexcept { return adapters_.size() - 1; }
    bool configured() const noexcept { return !adapters_.empty(); }

    LoraAdapter &operator[](std::size_t i) { return adapters_.at(i); }
    const LoraAdapter &operator[](std::size_t i) const { return adapters_.at(i); }
    std::vector<LoraAdapter> &adapters() noexcept { return adapters_; }
    const std::vector<LoraAdapter> &adapters() const noexcept { return adapters_; }

    std::size_t trainable_count() const noexcept;
    /// n * r * (d_in + d_out) for n task adapters.
    std::size_t parameter_count() const noexcept;

    std::size_t d_out() const noexcept { return d_out_; }
    std::size_t d_in() const noexcept { return d_in_; }
    std::size_t rank() const noexcept { return rank_; }
    double alpha() const noexcept { return alpha_; }

private:
    std::vector<LoraAdapter> adapters_;
    std::size_t d_out_ = 0;
    std::size_t d_in_ = 0;
    std::size_t rank_ = 0;
    double alpha_ = 0.0;
    bool training_ = false;
};

/// W0 + sum_i (alpha / r) B_i A_i over all task adapters.
Tensor merged_weight(const AdapterStack &stack, const Tensor &w0);

} // namespace amlora
