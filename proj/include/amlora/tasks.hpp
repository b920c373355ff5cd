#pragma once

#include <amlora/model.hpp>

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace amlora {

enum class GeneratorKind { token_signature, rotated_gaussian };

GeneratorKind parse_generator(std::string_view text);
std::string_view to_string(GeneratorKind kind);

/// Recipe for one synthetic classification task.
///
/// token_signature: class c of this task owns tokens_per_class signature ids
/// starting at signature_offset + c * tokens_per_class. Each position draws a
/// signature token of the example's class with probability p_sig and a
/// background token from [background_begin, background_end) otherwise.
///
/// rotated_gaussian: class means sit on a circle of `radius` in the first two
/// feature dimensions, rotated by `rotation` radians; isotropic noise elsewhere.
struct TaskSpec {
    int task_id = 0;
    GeneratorKind generator = GeneratorKind::token_signature;
    std::size_t num_classes = 4;
    std::size_t train_per_class = 250;
    std::size_t eval_per_class = 100;
    std::uint64_t seed = 0;

    std::size_t vocab_size = 128;
    std::size_t seq_len = 16;
    std::size_t tokens_per_class = 4;
    std::size_t signature_offset = 64;
    std::size_t background_begin = 0;
    std::size_t background_end = 64;
    double p_sig = 0.4;

    std::size_t feature_dim = 32;
    double rotation = 0.0;
    double radius = 3.0;
    double noise = 1.0;
};

struct Example {
    std::vector<std::uint32_t> tokens;
    std::vector<double> features;
    std::uint32_t label = 0;
};

struct Dataset {
    int task_id = 0;
    GeneratorKind generator = GeneratorKind::token_signature;
    std::size_t num_classes = 0;
    std::size_t seq_len = 0;
    std::size_t feature_dim = 0;
    std::vector<Example> train;
    std::vector<Example> eval;
};

/// Pure function of the spec. Eval examples whose content also occurs in the
/// train split are redrawn, so the splits never intersect.
Dataset generate_task(const TaskSpec &spec);

std::uint64_t example_hash(const Example &example);

/// Packs the selected examples into a model batch.
Batch make_batch(const Dataset &data, std::span<const Example> pool, std::span<const std::size_t> indices);
Batch make_batch(const Dataset &data, std::span<const Example> pool);

struct TaskStream {
    std::string order_id;
    std::vector<TaskSpec> tasks;
};

struct StreamOptions {
    GeneratorKind generator = GeneratorKind::token_signature;
    std::size_t num_tasks = 4;
    std::size_t num_classes = 4;
    std::size_t train_per_task = 1000;
    std::size_t eval_per_task = 400;
    std::size_t vocab_size = 128;
    std::size_t seq_len = 16;
    std::size_t tokens_per_class = 4;
    double p_sig = 0.4;
    std::size_t feature_dim = 32;
};

/// Built-in orders over the same task specs: "1" identity, "2" last two
/// swapped, "3" reversed.
std::vector<std::size_t> task_order(std::string_view order_id, std::size_t num_tasks);

/// Task specs laid out in one vocabulary (shared background block first, then
/// one disjoint signature block per task), permuted by `order_id`.
TaskStream make_stream(const StreamOptions &options, std::string_view order_id, std::uint64_t seed);

} // namespace amlora
