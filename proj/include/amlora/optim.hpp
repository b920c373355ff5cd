#pragma once

#include <amlora/graph.hpp>

#include <cstdint>
#include <span>
#include <string_view>
#include <unordered_map>

namespace amlora {

enum class OptimizerKind { sgd, adam };

OptimizerKind parse_optimizer_kind(std::string_view text);
std::string_view to_string(OptimizerKind kind);

/// SGD or Adam (beta1 0.9, beta2 0.999, eps 1e-8) over an explicit parameter set.
///
/// Moments are created lazily, and only for parameters that are trainable at
/// the time of the update. Non-trainable parameters passed to step() are left
/// untouched.
class Optimizer {
public:
    static constexpr double beta1 = 0.9;
    static constexpr double beta2 = 0.999;
    static constexpr double epsilon = 1e-8;

    Optimizer(OptimizerKind kind, double learning_rate);

    /// Applies one update and clears the gradients it consumed. Throws
    /// UsageError if a trainable parameter carries no gradient.
    void step(std::span<Parameter *const> params);

    OptimizerKind kind() const noexcept { return kind_; }
    double learning_rate() const noexcept { return learning_rate_; }
    std::uint64_t step_count() const noexcept { return steps_; }
    bool has_moments(const Parameter &p) const { return moments_.count(p.id()) != 0; }

private:
    struct Moments {
        Tensor first;
        Tensor second;
        std::uint64_t updates = 0;
    };

    OptimizerKind kind_;
    double learning_rate_;
    std::uint64_t steps_ = 0;
    std::unordered_map<std::uint64_t, Moments> moments_;
};

} // namespace amlora
