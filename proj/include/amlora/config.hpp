#pragma once

#include <amlora/model.hpp>
#include <amlora/optim.hpp>
#include <amlora/selector.hpp>
#include <amlora/tasks.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace amlora {

enum class Method { seqft, sinlora, inclora, pertaskft, mtl, amlora };

Method parse_method(std::string_view text);
std::string_view to_string(Method method);

/// Everything one experiment grid needs. Defaults follow the reference
/// fine-tuning recipe (one epoch, lr 1e-4, batch 8, dropout 0.1, r 8,
/// alpha 32, lambda 1e-5).
struct ExperimentConfig {
    ModelConfig model;

    GeneratorKind generator = GeneratorKind::token_signature;
    std::size_t tasks = 4;
    std::size_t train_per_task = 1000;
    std::size_t eval_per_task = 400;
    std::size_t tokens_per_class = 4;
    double p_sig = 0.4;

    std::size_t epochs = 1;
    std::size_t batch = 8;
    double lr = 1e-4;
    OptimizerKind optimizer = OptimizerKind::adam;

    std::size_t rank = 8;
    double alpha = 32.0;
    double lambda = 1e-5;
    /// Per-task lambda overrides in stream order; empty means `lambda` everywhere.
    std::vector<double> lambda_schedule;
    SelectorVariant variant = SelectorVariant::ar;

    std::vector<Method> methods{Method::amlora};
    std::vector<std::string> orders{"1"};
    std::vector<std::uint64_t> seeds{0};

    void validate() const;
    double lambda_for_task(std::size_t position) const;
    StreamOptions stream_options() const;

    /// Applies one `key=value` setting. Unknown keys throw ConfigError naming the key.
    void set(std::string_view key, std::string_view value);
    /// Canonical `key=value` lines, one per documented key, in fixed order.
    std::string to_text() const;
    /// 16-hex-digit FNV-1a digest of to_text().
    std::string digest() const;
};

/// Parses flat `key=value` text; '#' starts a comment, blank lines are ignored.
ExperimentConfig parse_config(std::string_view text, ExperimentConfig base = {});
ExperimentConfig load_config(const std::filesystem::path &path);

/// Splits "a=b" into key and value; throws ConfigError when '=' is missing.
std::pair<std::string, std::string> split_assignment(std::string_view text);

} // namespace amlora
