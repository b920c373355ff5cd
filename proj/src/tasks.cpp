#include <amlora/tasks.hpp>

#include <amlora/errors.hpp>
#include <amlora/random.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <unordered_set>

namespace amlora {

GeneratorKind parse_generator(std::string_view text)
{
    if (text == "token_signature")
        return GeneratorKind::token_signature;
    if (text == "rotated_gaussian")
        return GeneratorKind::rotated_gaussian;
    throw ConfigError("unknown task generator '" + std::string(text) + "'");
}

std::string_view to_string(GeneratorKind kind)
{
    return kind == GeneratorKind::token_signature ? "token_signature" : "rotated_gaussian";
}

std::uint64_t example_hash(const Example &example)
{
    // FNV-1a over label, tokens and feature bits.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const void *data, std::size_t n) {
        const auto *bytes = static_cast<const unsigned char *>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ULL;
        }
    };
    mix(&example.label, sizeof example.label);
    mix(example.tokens.data(), example.tokens.size() * sizeof(std::uint32_t));
    mix(example.features.data(), example.features.size() * sizeof(double));
    return h;
}

namespace {

void validate(const TaskSpec &spec)
{
    if (spec.num_classes < 2)
        throw ConfigError("a task needs at least two classes");
    if (spec.train_per_class == 0 || spec.eval_per_class == 0)
        throw ConfigError("task splits must be non-empty");
    if (spec.generator == GeneratorKind::token_signature) {
        if (spec.tokens_per_class == 0 || spec.seq_len == 0)
            throw ConfigError("token_signature tasks need tokens_per_class and seq_len > 0");
        const std::size_t end = spec.signature_offset + spec.num_classes * spec.tokens_per_class;
        if (end > spec.vocab_size)
            throw ConfigError("task " + std::to_string(spec.task_id) + " needs signature tokens up to " +
                              std::to_string(end) + " but the vocabulary holds " + std::to_string(spec.vocab_size));
        if (spec.background_end > spec.vocab_size || spec.background_begin > spec.background_end)
            throw ConfigError("background token range lies outside the vocabulary");
        if (spec.background_begin == spec.background_end && spec.p_sig < 1.0)
            throw ConfigError("background vocabulary is empty but p_sig < 1");
        if (!(spec.p_sig >= 0.0 && spec.p_sig <= 1.0))
            throw ConfigError("p_sig must lie in [0, 1]");
    } else if (spec.feature_dim < 2) {
        throw ConfigError("rotated_gaussian tasks need feature_dim >= 2");
    }
}

Example draw(const TaskSpec &spec, std::uint32_t label, Rng &rng)
{
    Example ex;
    ex.label = label;
    if (spec.generator == GeneratorKind::token_signature) {
        std::bernoulli_distribution use_signature(spec.p_sig);
        std::uniform_int_distribution<std::size_t> sig(0, spec.tokens_per_class - 1);
        const std::size_t bg_span = spec.background_end - spec.background_begin;
        std::uniform_int_distribution<std::size_t> bg(0, bg_span ? bg_span - 1 : 0);
        ex.tokens.resize(spec.seq_len);
        for (auto &t : ex.tokens) {
            if (bg_span == 0 || use_signature(rng))
                t = static_cast<std::uint32_t>(spec.signature_offset + label * spec.tokens_per_class + sig(rng));
            else
                t = static_cast<std::uint32_t>(spec.background_begin + bg(rng));
        }
    } else {
        std::normal_distribution<double> noise(0.0, spec.noise);
        const double angle =
            2.0 * std::numbers::pi * static_cast<double>(label) / static_cast<double>(spec.num_classes) + spec.rotation;
        ex.features.resize(spec.feature_dim);
        for (auto &f : ex.features)
            f = noise(rng);
        ex.features[0] += spec.radius * std::cos(angle);
        ex.features[1] += spec.radius * std::sin(angle);
    }
    return ex;
}

std::vector<Example> draw_split(const TaskSpec &spec, std::size_t per_class, Rng &rng,
                                const std::unordered_set<std::uint64_t> *exclude)
{
    std::vector<Example> out;
    out.reserve(per_class * spec.num_classes);
    for (std::size_t i = 0; i < per_class; ++i)
        for (std::uint32_t c = 0; c < spec.num_classes; ++c) {
            for (int attempt = 0;; ++attempt) {
                Example ex = draw(spec, c, rng);
                if (!exclude || !exclude->count(example_hash(ex))) {
                    out.push_back(std::move(ex));
                    break;
                }
                if (attempt > 1000)
                    throw ConfigError("task " + std::to_string(spec.task_id) +
                                      " cannot produce eval examples disjoint from its train split");
            }
        }
    return out;
}

} // namespace

Dataset generate_task(const TaskSpec &spec)
{
    validate(spec);
    Dataset data;
    data.task_id = spec.task_id;
    data.generator = spec.generator;
    data.num_classes = spec.num_classes;
    data.seq_len = spec.generator == GeneratorKind::token_signature ? spec.seq_len : 0;
    data.feature_dim = spec.generator == GeneratorKind::rotated_gaussian ? spec.feature_dim : 0;

    Rng train_rng(mix_seed(spec.seed, {0x747261696eULL}));
    Rng eval_rng(mix_seed(spec.seed, {0x6576616cULL}));
    data.train = draw_split(spec, spec.train_per_class, train_rng, nullptr);
    std::unordered_set<std::uint64_t> seen;
    for (const auto &ex : data.train)
        seen.insert(example_hash(ex));
    data.eval = draw_split(spec, spec.eval_per_class, eval_rng, &seen);
    return data;
}

Batch make_batch(const Dataset &data, std::span<const Example> pool, std::span<const std::size_t> indices)
{
    Batch batch;
    batch.size = indices.size();
    if (data.generator == GeneratorKind::token_signature) {
        batch.tokens.reserve(indices.size() * data.seq_len);
        for (auto i : indices)
            batch.tokens.insert(batch.tokens.end(), pool[i].tokens.begin(), pool[i].tokens.end());
    } else {
        batch.features = Tensor({indices.size(), data.feature_dim});
        for (std::size_t r = 0; r < indices.size(); ++r)
            std::copy(pool[indices[r]].features.begin(), pool[indices[r]].features.end(),
                      batch.features.data().begin() + static_cast<std::ptrdiff_t>(r * data.feature_dim));
    }
    return batch;
}

Batch make_batch(const Dataset &data, std::span<const Example> pool)
{
    std::vector<std::size_t> all(pool.size());
    for (std::size_t i = 0; i < all.size(); ++i)
        all[i] = i;
    return make_batch(data, pool, all);
}

std::vector<std::size_t> task_order(std::string_view order_id, std::size_t num_tasks)
{
    std::vector<std::size_t> order(num_tasks);
    for (std::size_t i = 0; i < num_tasks; ++i)
        order[i] = i;
    if (order_id == "1")
        return order;
    if (order_id == "2") {
        if (num_tasks >= 2)
            std::swap(order[num_tasks - 1], order[num_tasks - 2]);
        return order;
    }
    if (order_id == "3") {
        std::reverse(order.begin(), order.end());
        return order;
    }
    throw ConfigError("unknown task order '" + std::string(order_id) + "' (expected 1, 2 or 3)");
}

TaskStream make_stream(const StreamOptions &o, std::string_view order_id, std::uint64_t seed)
{
    if (o.num_tasks == 0)
        throw UsageError("a task stream needs at least one task");
    if (o.num_classes == 0 || o.train_per_task % o.num_classes != 0 || o.eval_per_task % o.num_classes != 0)
        throw ConfigError("per-task example counts must be positive multiples of the class count");
    const std::size_t signature_tokens = o.num_tasks * o.num_classes * o.tokens_per_class;
    if (o.generator == GeneratorKind::token_signature && signature_tokens >= o.vocab_size)
        throw ConfigError(std::to_string(o.num_tasks) + " tasks x " + std::to_string(o.num_classes) + " classes x " +
                          std::to_string(o.tokens_per_class) + " signature tokens exceed the vocabulary of " +
                          std::to_string(o.vocab_size));
    const std::size_t background_end = o.vocab_size - signature_tokens;

    TaskStream stream;
    stream.order_id = std::string(order_id);
    for (std::size_t idx : task_order(order_id, o.num_tasks)) {
        TaskSpec spec;
        spec.task_id = static_cast<int>(idx) + 1;
        spec.generator = o.generator;
        spec.num_classes = o.num_classes;
        spec.train_per_class = o.train_per_task / o.num_classes;
        spec.eval_per_class = o.eval_per_task / o.num_classes;
        spec.seed = mix_seed(seed, {0x7461736bULL, idx});
        spec.vocab_size = o.vocab_size;
        spec.seq_len = o.seq_len;
        spec.tokens_per_class = o.tokens_per_class;
        spec.signature_offset = background_end + idx * o.num_classes * o.tokens_per_class;
        spec.background_begin = 0;
        spec.background_end = background_end;
        spec.p_sig = o.p_sig;
        spec.feature_dim = o.feature_dim;
        spec.rotation = std::numbers::pi * static_cast<double>(idx) / static_cast<double>(o.num_classes * o.num_tasks);
        stream.tasks.push_back(spec);
    }
    return stream;
}

} // namespace amlora
