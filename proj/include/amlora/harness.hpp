#pragma once

#include <amlora/baselines.hpp>
#include <amlora/config.hpp>
#include <amlora/errors.hpp>
#include <amlora/gradcheck.hpp>
#include <amlora/model.hpp>
#include <amlora/tasks.hpp>

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace amlora {

struct TaskLog {
    int task_id = 0;
    std::size_t steps = 0;
    double first_loss = 0.0;
    double last_loss = 0.0;
    std::size_t trainable_params = 0;
    double seconds = 0.0;
};

/// Outcome of one (method, seed, order) run over a task stream.
struct MetricsReport {
    std::string method;
    std::uint64_t seed = 0;
    std::string order_id;
    std::string config_digest;
    /// task_ids[i] is the task trained at stream position i.
    std::vector<int> task_ids;
    /// accuracy[t][i]: accuracy on the task at position i after training position t (i <= t).
    std::vector<std::vector<double>> accuracy;
    std::vector<TaskLog> logs;

    std::size_t base_params = 0;
    std::size_t adapted_sites = 0;
    /// Selector parameters on one adapted site after the last task.
    std::size_t selector_params_per_site = 0;
    std::size_t selector_params_total = 0;
    std::size_t adapter_params_total = 0;

    bool complete = false;
    std::string error;

    double final_average() const;
    /// max over earlier checkpoints of acc(i) minus the final acc(i).
    double forgetting(std::size_t position) const;
    /// Mean forgetting over every task except the last one.
    double mean_forgetting() const;
    /// Largest per-task trainable parameter count.
    std::size_t trainable_params() const;
};

/// Thrown by run_stream when a task fails; carries everything measured before the failure.
class StreamAborted : public Error {
public:
    StreamAborted(const std::string &what, MetricsReport partial) : Error(what), partial_(std::move(partial)) {}
    const MetricsReport &partial() const noexcept { return partial_; }

private:
    MetricsReport partial_;
};

/// Shuffled mini-batch training on one dataset. Throws NumericError naming the
/// step when the loss stops being finite.
TaskLog train_task(Backbone &model, const MethodSpec &method, const Dataset &data, const ExperimentConfig &config,
                   std::size_t position, std::uint64_t seed);

/// Argmax predictions in eval mode; ties go to the lowest class index.
std::vector<std::uint32_t> predict(Backbone &model, const Batch &batch);
double evaluate(Backbone &model, const Dataset &data, GateProbe *probe = nullptr);

struct RunHooks {
    /// Called after each stream position finished training and evaluation.
    std::function<void(std::size_t position, Backbone &model)> after_task;
};

/// Runs one method over a stream. `final_model`, when given, receives the
/// model as it stands after the last task (for per-task methods, the last one).
MetricsReport run_stream(const TaskStream &stream, const MethodSpec &method, const ExperimentConfig &config,
                         std::uint64_t seed, const RunHooks &hooks = {},
                         std::unique_ptr<Backbone> *final_model = nullptr);

/// Convenience wrapper: builds the stream for (order, seed) from the config and runs it.
MetricsReport run_experiment(const ExperimentConfig &config, Method method, const std::string &order_id,
                             std::uint64_t seed, const RunHooks &hooks = {},
                             std::unique_ptr<Backbone> *final_model = nullptr);

std::vector<Dataset> generate_stream(const TaskStream &stream);

/// One-layer transformer (d=8, r=2) midway through its second amlora task, with
/// randomized adapters and heads so no L1 kink sits at the probe point.
ExperimentConfig gradcheck_toy_config();

/// Finite differences against backward() on the full amlora loss (task cross
/// entropy plus selector L1) over the active trainable set of the toy model.
GradCheckReport gradcheck_amlora_toy(std::uint64_t seed, double lambda = 1e-2);

} // namespace amlora
