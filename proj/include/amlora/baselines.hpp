#pragma once

#include <amlora/config.hpp>
#include <amlora/model.hpp>
#include <amlora/optim.hpp>

#include <cstdint>
#include <span>
#include <vector>

namespace amlora {

/// A continual-learning method together with its method-specific options.
struct MethodSpec {
    Method name = Method::amlora;
    double lambda = 1e-5;
    SelectorVariant variant = SelectorVariant::ar;

    static MethodSpec from_config(Method method, const ExperimentConfig &config);
};

/// Methods that update the backbone weights themselves.
bool trains_base(Method method) noexcept;
bool uses_adapters(Method method) noexcept;
AdapterMode adapter_mode_for(Method method) noexcept;

/// Puts a freshly built backbone into the method's starting state: base
/// trainability, adapter stacks, selectors and forward rule.
void prepare_model(Backbone &model, const MethodSpec &method, const ExperimentConfig &config);

/// Task lifecycle around train_task. For incremental adapter methods this
/// freezes earlier adapters, appends the new one and (amlora) a new score head.
void begin_method_task(Backbone &model, const MethodSpec &method, std::size_t position, double lambda,
                       std::uint64_t seed);
void end_method_task(Backbone &model, const MethodSpec &method);

/// Exactly the parameters the optimizer may touch for the active task.
std::vector<Parameter *> method_trainable_set(Backbone &model, const MethodSpec &method);

/// Task loss plus, for amlora, the selector sparsity terms of every adapted site.
Var method_loss(Graph &g, Backbone &model, const MethodSpec &method, const Batch &batch,
                std::span<const std::uint32_t> labels, Rng *dropout_rng);

/// One full fine-tuning step on a backbone without adapters; returns the loss.
double seqft_step(Backbone &model, Optimizer &optimizer, const Batch &batch, std::span<const std::uint32_t> labels,
                  Rng *dropout_rng);

/// Base forward plus one shared, never-frozen adapter per site.
Var sinlora_forward(Graph &g, Backbone &model, const Batch &batch, Mode mode = Mode::eval);

/// Base forward plus the ungated sum of every task adapter.
Var inclora_forward(Graph &g, Backbone &model, const Batch &batch, Mode mode = Mode::eval);

} // namespace amlora
