#include <amlora/optim.hpp>

#include <amlora/errors.hpp>

#include <cmath>
#include <string>

namespace amlora {

OptimizerKind parse_optimizer_kind(std::string_view text)
{
    if (text == "sgd")
        return OptimizerKind::sgd;
    if (text == "adam")
        return OptimizerKind::adam;
    throw ConfigError("unknown optimizer '" + std::string(text) + "' (expected sgd or adam)");
}

std::string_view to_string(OptimizerKind kind)
{
    return kind == OptimizerKind::sgd ? "sgd" : "adam";
}

Optimizer::Optimizer(OptimizerKind kind, double learning_rate) : kind_(kind), learning_rate_(learning_rate)
{
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
        throw ConfigError("learning rate must be finite and non-negative, got " + std::to_string(learning_rate));
}

void Optimizer::step(std::span<Parameter *const> params)
{
    for (const Parameter *p : params)
        if (p->trainable && !p->grad)
            throw UsageError("optimizer step: trainable parameter '" + p->name + "' has no gradient");

    ++steps_;
    for (Parameter *p : params) {
        if (!p->trainable)
            continue;
        auto w = p->value.data();
        auto g = p->grad->data();
        if (kind_ == OptimizerKind::sgd) {
            for (std::size_t i = 0; i < w.size(); ++i)
                w[i] -= learning_rate_ * g[i];
        } else {
            auto [it, fresh] = moments_.try_emplace(p->id());
            Moments &m = it->second;
            if (fresh) {
                m.first = Tensor::zeros(p->value.shape());
                m.second = Tensor::zeros(p->value.shape());
            }
            ++m.updates;
            const double c1 = 1.0 - std::pow(beta1, static_cast<double>(m.updates));
            const double c2 = 1.0 - std::pow(beta2, static_cast<double>(m.updates));
            auto m1 = m.first.data();
            auto m2 = m.second.data();
            for (std::size_t i = 0; i < w.size(); ++i) {
                m1[i] = beta1 * m1[i] + (1.0 - beta1) * g[i];
                m2[i] = beta2 * m2[i] + (1.0 - beta2) * g[i] * g[i];
                const double mhat = m1[i] / c1;
                const double vhat = m2[i] / c2;
                w[i] -= learning_rate_ * mhat / (std::sqrt(vhat) + epsilon);
            }
        }
        p->grad.reset();
    }
}

} // namespace amlora
