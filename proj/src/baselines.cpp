#include <amlora/baselines.hpp>

#include <amlora/errors.hpp>
#include <amlora/ops.hpp>
#include <amlora/random.hpp>

namespace amlora {

MethodSpec MethodSpec::from_config(Method method, const ExperimentConfig &config)
{
    return MethodSpec{method, config.lambda, config.variant};
}

bool trains_base(Method method) noexcept
{
    return method == Method::seqft || method == Method::mtl || method == Method::pertaskft;
}

bool uses_adapters(Method method) noexcept
{
    return method == Method::sinlora || method == Method::inclora || method == Method::amlora;
}

AdapterMode adapter_mode_for(Method method) noexcept
{
    switch (method) {
    case Method::sinlora:
    case Method::inclora:
        return AdapterMode::sum;
    case Method::amlora:
        return AdapterMode::gated;
    default:
        return AdapterMode::none;
    }
}

void prepare_model(Backbone &model, const MethodSpec &method, const ExperimentConfig &config)
{
    model.set_base_trainable(trains_base(method.name));
    model.set_adapter_mode(adapter_mode_for(method.name));
    if (uses_adapters(method.name))
        model.attach_adapter_stacks(config.rank, config.alpha);
    if (method.name == Method::amlora)
        model.attach_selectors(method.variant, method.lambda);
}

void begin_method_task(Backbone &model, const MethodSpec &method, std::size_t position, double lambda,
                       std::uint64_t seed)
{
    const auto sites = model.registry();
    for (std::size_t s = 0; s < sites.size(); ++s) {
        AdaptedLinear &site = *sites[s];
        const std::uint64_t adapter_seed = mix_seed(seed, {0x6164617074ULL, position, s});
        switch (method.name) {
        case Method::sinlora:
            if (position == 0)
                site.stack.begin_task(adapter_seed);
            break;
        case Method::inclora:
            site.stack.begin_task(adapter_seed);
            break;
        case Method::amlora:
            site.stack.begin_task(adapter_seed);
            site.selector.extend_for_task(site.stack, adapter_seed);
            site.selector.set_lambda(lambda);
            break;
        default:
            break;
        }
    }
}

void end_method_task(Backbone &model, const MethodSpec &method)
{
    if (method.name == Method::inclora || method.name == Method::amlora)
        for (auto *site : model.registry())
            site->stack.end_task();
}

std::vector<Parameter *> method_trainable_set(Backbone &model, const MethodSpec &method)
{
    if (trains_base(method.name))
        return model.base_parameters();
    std::vector<Parameter *> out;
    for (auto *site : model.registry()) {
        if (method.name == Method::amlora) {
            for (auto *p : trainable_set(site->selector, site->stack))
                out.push_back(p);
        } else {
            if (site->stack.task_count() == 0)
                throw StateError("no adapter is active on " + site->name);
            LoraAdapter &active = site->stack.adapters().back();
            out.push_back(&active.a);
            out.push_back(&active.b);
        }
    }
    return out;
}

Var method_loss(Graph &g, Backbone &model, const MethodSpec &method, const Batch &batch,
                std::span<const std::uint32_t> labels, Rng *dropout_rng)
{
    Var loss = ops::cross_entropy(model.forward(g, batch, Mode::train, dropout_rng), labels);
    if (method.name == Method::amlora)
        for (auto *site : model.registry())
            loss = ops::add(loss, sparsity_loss(g, site->selector));
    return loss;
}

double seqft_step(Backbone &model, Optimizer &optimizer, const Batch &batch, std::span<const std::uint32_t> labels,
                  Rng *dropout_rng)
{
    for (auto *site : model.registry())
        if (site->stack.configured() && site->stack.task_count() > 0)
            throw ConfigError("seqft expects a backbone without adapters, found one on " + site->name);
    Graph g;
    Var loss = ops::cross_entropy(model.forward(g, batch, Mode::train, dropout_rng), labels);
    g.backward(loss);
    const auto params = model.base_parameters();
    optimizer.step(params);
    return loss.value()[0];
}

Var sinlora_forward(Graph &g, Backbone &model, const Batch &batch, Mode mode)
{
    for (auto *site : model.registry()) {
        if (site->stack.task_count() != 1)
            throw ConfigError("sinlora needs exactly one adapter on " + site->name + ", found " +
                              std::to_string(site->stack.task_count()));
        if (site->stack[1].frozen)
            throw ConfigError("sinlora adapter on " + site->name + " must never be frozen");
    }
    model.set_adapter_mode(AdapterMode::sum);
    return model.forward(g, batch, mode);
}

Var inclora_forward(Graph &g, Backbone &model, const Batch &batch, Mode mode)
{
    model.set_adapter_mode(AdapterMode::sum);
    return model.forward(g, batch, mode);
}

} // namespace amlora
