#include <amlora/gradcheck.hpp>

#include <amlora/errors.hpp>

#include <algorithm>
#include <cmath>

namespace amlora {

namespace {
double evaluate(const ScalarFn &fn)
{
    Graph g;
    return fn(g).value()[0];
}
} // namespace

GradCheckReport finite_diff_report(const ScalarFn &fn, std::span<Parameter *const> params, double eps)
{
    if (!(eps > 0.0))
        throw UsageError("finite difference step must be positive");
    for (Parameter *p : params)
        p->grad.reset();

    {
        Graph g;
        Var loss = fn(g);
        g.backward(loss);
    }

    GradCheckReport report;
    for (Parameter *p : params) {
        if (!p->trainable) {
            report.skipped += p->value.size();
            continue;
        }
        const Tensor analytic = p->grad ? *p->grad : Tensor::zeros(p->value.shape());
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double saved = p->value[i];
            p->value[i] = saved + eps;
            const double up = evaluate(fn);
            p->value[i] = saved - eps;
            const double down = evaluate(fn);
            p->value[i] = saved;
            if (!std::isfinite(up) || !std::isfinite(down))
                throw NumericError("finite difference probe of " + p->name + "[" + std::to_string(i) +
                                   "] produced a non-finite loss");
            const double numeric = (up - down) / (2.0 * eps);
            const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
            ++report.probed;
            if (err > report.max_relative_error || report.worst_coordinate.empty()) {
                report.max_relative_error = std::max(report.max_relative_error, err);
                report.worst_coordinate = p->name + "[" + std::to_string(i) + "]";
            }
        }
    }
    for (Parameter *p : params)
        p->grad.reset();
    return report;
}

} // namespace amlora
