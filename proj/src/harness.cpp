#include <amlora/harness.hpp>

#include <amlora/ops.hpp>
#include <amlora/optim.hpp>
#include <amlora/random.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace amlora {

double MetricsReport::final_average() const
{
    if (accuracy.empty())
        return 0.0;
    const auto &last = accuracy.back();
    return std::accumulate(last.begin(), last.end(), 0.0) / static_cast<double>(last.size());
}

double MetricsReport::forgetting(std::size_t position) const
{
    if (accuracy.empty() || position >= accuracy.back().size())
        throw UsageError("no accuracy recorded for stream position " + std::to_string(position));
    const std::size_t last = accuracy.size() - 1;
    double best = accuracy.back()[position];
    for (std::size_t t = position; t < last; ++t)
        best = std::max(best, accuracy[t][position]);
    return best - accuracy.back()[position];
}

double MetricsReport::mean_forgetting() const
{
    if (accuracy.size() < 2)
        return 0.0;
    const std::size_t n = accuracy.back().size() - 1;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        total += forgetting(i);
    return total / static_cast<double>(n);
}

std::size_t MetricsReport::trainable_params() const
{
    std::size_t most = 0;
    for (const auto &log : logs)
        most = std::max(most, log.trainable_params);
    return most;
}

namespace {

constexpr std::uint64_t kModelTag = 0x6d6f64656cULL;
constexpr std::uint64_t kShuffleTag = 0x73687566ULL;
constexpr std::uint64_t kDropoutTag = 0x64726f70ULL;
constexpr std::size_t kEvalChunk = 200;

std::size_t count_values(const std::vector<Parameter *> &params)
{
    std::size_t n = 0;
    for (const auto *p : params)
        n += p->value.size();
    return n;
}

std::unique_ptr<Backbone> fresh_model(const MethodSpec &method, const ExperimentConfig &config, std::uint64_t seed)
{
    auto model = build_model(config.model, mix_seed(seed, {kModelTag}));
    prepare_model(*model, method, config);
    return model;
}

void record_sizes(MetricsReport &report, Backbone &model)
{
    report.base_params = model.base_parameter_count();
    const auto sites = model.registry();
    report.adapted_sites = sites.size();
    report.selector_params_total = 0;
    report.adapter_params_total = 0;
    for (auto *site : sites) {
        report.selector_params_total += site->selector.parameter_count();
        if (site->stack.configured())
            report.adapter_params_total += site->stack.parameter_count();
    }
    report.selector_params_per_site = sites.empty() ? 0 : sites.front()->selector.parameter_count();
}

} // namespace

TaskLog train_task(Backbone &model, const MethodSpec &method, const Dataset &data, const ExperimentConfig &config,
                   std::size_t position, std::uint64_t seed)
{
    const auto start = std::chrono::steady_clock::now();
    TaskLog log;
    log.task_id = data.task_id;

    auto params = method_trainable_set(model, method);
    log.trainable_params = count_values(params);

    Optimizer optimizer(config.optimizer, config.lr);
    Rng shuffle_rng(mix_seed(seed, {kShuffleTag, position}));
    Rng dropout_rng(mix_seed(seed, {kDropoutTag, position}));

    std::vector<std::size_t> order(data.train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<std::uint32_t> labels;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (std::size_t begin = 0; begin < order.size(); begin += config.batch) {
            const std::size_t end = std::min(order.size(), begin + config.batch);
            const std::span<const std::size_t> idx(order.data() + begin, end - begin);
            const Batch batch = make_batch(data, data.train, idx);
            labels.clear();
            for (auto i : idx)
                labels.push_back(data.train[i].label);

            Graph g;
            Var loss = method_loss(g, model, method, batch, labels, &dropout_rng);
            const double value = loss.value()[0];
            if (!std::isfinite(value))
                throw NumericError("loss became non-finite at step " + std::to_string(log.steps) + " of task " +
                                   std::to_string(data.task_id));
            g.backward(loss);
            optimizer.step(params);
            if (log.steps == 0)
                log.first_loss = value;
            log.last_loss = value;
            ++log.steps;
        }
    }
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return log;
}

namespace {

std::vector<std::uint32_t> argmax_rows(const Tensor &logits)
{
    std::vector<std::uint32_t> out(logits.rows());
    for (std::size_t r = 0; r < out.size(); ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < logits.cols(); ++c)
            if (logits.at(r, c) > logits.at(r, best))
                best = c;
        out[r] = static_cast<std::uint32_t>(best);
    }
    return out;
}

} // namespace

std::vector<std::uint32_t> predict(Backbone &model, const Batch &batch)
{
    return argmax_rows(model.logits(batch));
}

double evaluate(Backbone &model, const Dataset &data, GateProbe *probe)
{
    if (data.eval.empty())
        throw UsageError("task " + std::to_string(data.task_id) + " has an empty eval split");
    std::size_t correct = 0;
    std::vector<std::size_t> idx;
    for (std::size_t begin = 0; begin < data.eval.size(); begin += kEvalChunk) {
        const std::size_t end = std::min(data.eval.size(), begin + kEvalChunk);
        idx.resize(end - begin);
        std::iota(idx.begin(), idx.end(), begin);
        const auto pred = argmax_rows(model.logits(make_batch(data, data.eval, idx), probe));
        for (std::size_t r = 0; r < idx.size(); ++r)
            correct += pred[r] == data.eval[idx[r]].label;
    }
    return static_cast<double>(correct) / static_cast<double>(data.eval.size());
}

std::vector<Dataset> generate_stream(const TaskStream &stream)
{
    std::vector<Dataset> out;
    out.reserve(stream.tasks.size());
    for (const auto &spec : stream.tasks)
        out.push_back(generate_task(spec));
    return out;
}

MetricsReport run_stream(const TaskStream &stream, const MethodSpec &method, const ExperimentConfig &config,
                         std::uint64_t seed, const RunHooks &hooks, std::unique_ptr<Backbone> *final_model)
{
    config.validate();
    MetricsReport report;
    report.method = std::string(to_string(method.name));
    report.seed = seed;
    report.order_id = stream.order_id;
    report.config_digest = config.digest();
    for (const auto &spec : stream.tasks)
        report.task_ids.push_back(spec.task_id);

    const auto data = generate_stream(stream);
    const std::size_t n = data.size();
    std::unique_ptr<Backbone> model;

    try {
        if (method.name == Method::mtl) {
            model = fresh_model(method, config, seed);
            Dataset joint = data.front();
            joint.task_id = 0;
            joint.eval.clear();
            for (std::size_t i = 1; i < n; ++i)
                joint.train.insert(joint.train.end(), data[i].train.begin(), data[i].train.end());
            report.logs.push_back(train_task(*model, method, joint, config, 0, seed));
            std::vector<double> final_row;
            for (const auto &d : data)
                final_row.push_back(evaluate(*model, d));
            // One joint model: every checkpoint row reports its final accuracies.
            for (std::size_t t = 0; t < n; ++t)
                report.accuracy.emplace_back(final_row.begin(), final_row.begin() + static_cast<std::ptrdiff_t>(t + 1));
            if (hooks.after_task)
                hooks.after_task(n - 1, *model);
        } else if (method.name == Method::pertaskft) {
            std::vector<double> own;
            for (std::size_t t = 0; t < n; ++t) {
                model = fresh_model(method, config, seed);
                report.logs.push_back(train_task(*model, method, data[t], config, t, seed));
                own.push_back(evaluate(*model, data[t]));
                report.accuracy.push_back(own);
                if (hooks.after_task)
                    hooks.after_task(t, *model);
            }
        } else {
            model = fresh_model(method, config, seed);
            for (std::size_t t = 0; t < n; ++t) {
                begin_method_task(*model, method, t, config.lambda_for_task(t), seed);
                if (method.name == Method::amlora)
                    for (auto *site : model->registry())
                        site->selector.set_lambda(config.lambda_for_task(t));
                report.logs.push_back(train_task(*model, method, data[t], config, t, seed));
                end_method_task(*model, method);
                std::vector<double> row;
                for (std::size_t i = 0; i <= t; ++i)
                    row.push_back(evaluate(*model, data[i]));
                report.accuracy.push_back(std::move(row));
                if (hooks.after_task)
                    hooks.after_task(t, *model);
            }
        }
    } catch (const Error &e) {
        if (model)
            record_sizes(report, *model);
        report.error = e.what();
        throw StreamAborted(report.method + " seed " + std::to_string(seed) + " order " + stream.order_id +
                                " aborted: " + e.what(),
                            std::move(report));
    }

    record_sizes(report, *model);
    report.complete = true;
    if (final_model)
        *final_model = std::move(model);
    return report;
}

MetricsReport run_experiment(const ExperimentConfig &config, Method method, const std::string &order_id,
                             std::uint64_t seed, const RunHooks &hooks, std::unique_ptr<Backbone> *final_model)
{
    const TaskStream stream = make_stream(config.stream_options(), order_id, seed);
    return run_stream(stream, MethodSpec::from_config(method, config), config, seed, hooks, final_model);
}

ExperimentConfig gradcheck_toy_config()
{
    ExperimentConfig c;
    c.model.embed_dim = 8;
    c.model.num_layers = 1;
    c.model.num_heads = 2;
    c.model.seq_len = 4;
    c.model.vocab_size = 16;
    c.model.num_classes = 2;
    c.model.ffn_mult = 2;
    c.model.dropout_rate = 0.0;
    c.tasks = 2;
    c.tokens_per_class = 2;
    c.train_per_task = 8;
    c.eval_per_task = 4;
    c.rank = 2;
    c.alpha = 4.0;
    c.methods = {Method::amlora};
    return c;
}

GradCheckReport gradcheck_amlora_toy(std::uint64_t seed, double lambda)
{
    ExperimentConfig c = gradcheck_toy_config();
    c.lambda = lambda;
    const MethodSpec method{Method::amlora, lambda, SelectorVariant::ar};
    auto model = fresh_model(method, c, seed);
    const auto data = generate_stream(make_stream(c.stream_options(), "1", seed));

    Rng rng(mix_seed(seed, {0x6763ULL}));
    auto randomize = [&rng](Parameter &p, double std) { p.value = gaussian(p.value.shape(), std, rng); };
    for (std::size_t t = 0; t < 2; ++t) {
        begin_method_task(*model, method, t, lambda, seed);
        for (auto *site : model->registry()) {
            randomize(site->stack.adapters().back().a, 0.5);
            randomize(site->stack.adapters().back().b, 0.5);
        }
        if (t == 0)
            end_method_task(*model, method);
    }
    for (auto *site : model->registry())
        for (auto &head : site->selector.heads())
            randomize(head, 0.5);

    const Dataset &task = data[1];
    std::vector<std::size_t> idx{0, 1, 2, 3};
    const Batch batch = make_batch(task, task.train, idx);
    std::vector<std::uint32_t> labels;
    for (auto i : idx)
        labels.push_back(task.train[i].label);

    const auto params = method_trainable_set(*model, method);
    return finite_diff_report(
        [&](Graph &g) { return method_loss(g, *model, method, batch, labels, nullptr); }, params);
}

} // namespace amlora
