#pragma once

#include <amlora/graph.hpp>

#include <functional>
#include <span>
#include <string>

namespace amlora {

/// Builds a scalar loss on the supplied graph from the current parameter values.
using ScalarFn = std::function<Var(Graph &)>;

struct GradCheckReport {
    double max_relative_error = 0.0;
    std::size_t probed = 0;
    std::size_t skipped = 0;     // coordinates of frozen parameters
    std::string worst_coordinate; // "name[index]"
};

/// Compares backward() against central differences (f(t+eps) - f(t-eps)) / 2eps
/// for every coordinate of every trainable parameter. Error per coordinate is
/// |analytic - numeric| / max(1, |numeric|). Parameters are restored afterwards
/// and their gradients cleared.
GradCheckReport finite_diff_report(const ScalarFn &fn, std::span<Parameter *const> params, double eps = 1e-5);

inline double finite_diff_check(const ScalarFn &fn, std::span<Parameter *const> params, double eps = 1e-5)
{
    return finite_diff_report(fn, params, eps).max_relative_error;
}

} // namespace amlora
