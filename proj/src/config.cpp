#include <amlora/config.hpp>

#include <amlora/errors.hpp>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace amlora {

Method parse_method(std::string_view text)
{
    if (text == "seqft")
        return Method::seqft;
    if (text == "sinlora")
        return Method::sinlora;
    if (text == "inclora")
        return Method::inclora;
    if (text == "pertaskft")
        return Method::pertaskft;
    if (text == "mtl")
        return Method::mtl;
    if (text == "amlora")
        return Method::amlora;
    throw ConfigError("unknown method '" + std::string(text) + "'");
}

std::string_view to_string(Method method)
{
    switch (method) {
    case Method::seqft:
        return "seqft";
    case Method::sinlora:
        return "sinlora";
    case Method::inclora:
        return "inclora";
    case Method::pertaskft:
        return "pertaskft";
    case Method::mtl:
        return "mtl";
    case Method::amlora:
        return "amlora";
    }
    return "?";
}

namespace {

std::string_view trim(std::string_view s)
{
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos)
        return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_list(std::string_view text)
{
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = text.find(',', start);
        out.push_back(trim(text.substr(start, comma == std::string_view::npos ? text.npos : comma - start)));
        if (comma == std::string_view::npos)
            break;
        start = comma + 1;
    }
    return out;
}

std::uint64_t parse_uint(std::string_view key, std::string_view text)
{
    std::uint64_t value = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size() || text.empty())
        throw ConfigError("key '" + std::string(key) + "': '" + std::string(text) + "' is not a non-negative integer");
    return value;
}

double parse_double(std::string_view key, std::string_view text)
{
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size() || text.empty() || !std::isfinite(value))
        throw ConfigError("key '" + std::string(key) + "': '" + std::string(text) + "' is not a finite number");
    return value;
}

std::string format_double(double v)
{
    // Shortest text that parses back to the same double.
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

template <typename T, typename F> std::string join(const std::vector<T> &items, F &&fmt)
{
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i)
            out += ",";
        out += fmt(items[i]);
    }
    return out;
}

} // namespace

std::pair<std::string, std::string> split_assignment(std::string_view text)
{
    const auto eq = text.find('=');
    if (eq == std::string_view::npos)
        throw ConfigError("expected key=value, got '" + std::string(text) + "'");
    return {std::string(trim(text.substr(0, eq))), std::string(trim(text.substr(eq + 1)))};
}

void ExperimentConfig::set(std::string_view key, std::string_view value)
{
    auto size = [&] { return static_cast<std::size_t>(parse_uint(key, value)); };
    if (key == "backbone")
        model.backbone = parse_backbone(value);
    else if (key == "d")
        model.embed_dim = size();
    else if (key == "layers")
        model.num_layers = size();
    else if (key == "heads")
        model.num_heads = size();
    else if (key == "seq_len")
        model.seq_len = size();
    else if (key == "vocab")
        model.vocab_size = size();
    else if (key == "ffn_mult")
        model.ffn_mult = size();
    else if (key == "dropout")
        model.dropout_rate = parse_double(key, value);
    else if (key == "sites")
        model.adapter_sites = parse_sites(value);
    else if (key == "classes")
        model.num_classes = size();
    else if (key == "generator")
        generator = parse_generator(value);
    else if (key == "tasks")
        tasks = size();
    else if (key == "train_per_task")
        train_per_task = size();
    else if (key == "eval_per_task")
        eval_per_task = size();
    else if (key == "tokens_per_class")
        tokens_per_class = size();
    else if (key == "p_sig")
        p_sig = parse_double(key, value);
    else if (key == "epochs")
        epochs = size();
    else if (key == "batch")
        batch = size();
    else if (key == "lr")
        lr = parse_double(key, value);
    else if (key == "optimizer")
        optimizer = parse_optimizer_kind(value);
    else if (key == "r")
        rank = size();
    else if (key == "alpha")
        alpha = parse_double(key, value);
    else if (key == "lambda")
        lambda = parse_double(key, value);
    else if (key == "lambda_schedule") {
        lambda_schedule.clear();
        if (!value.empty())
            for (auto item : split_list(value))
                lambda_schedule.push_back(parse_double(key, item));
    } else if (key == "variant")
        variant = parse_selector_variant(value);
    else if (key == "method") {
        methods.clear();
        for (auto item : split_list(value))
            methods.push_back(parse_method(item));
    } else if (key == "order") {
        orders.clear();
        for (auto item : split_list(value)) {
            task_order(item, 1);
            orders.emplace_back(item);
        }
    } else if (key == "seed") {
        seeds.clear();
        for (auto item : split_list(value))
            seeds.push_back(parse_uint(key, item));
    } else
        throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void ExperimentConfig::validate() const
{
    model.validate();
    if (tasks == 0)
        throw ConfigError("tasks must be at least 1");
    if (epochs == 0 || batch == 0)
        throw ConfigError("epochs and batch must be positive");
    if (!(lr >= 0.0))
        throw ConfigError("lr must be non-negative");
    if (!(alpha > 0.0))
        throw ConfigError("alpha must be positive");
    if (!(lambda >= 0.0))
        throw ConfigError("lambda must be non-negative");
    for (double l : lambda_schedule)
        if (!(l >= 0.0))
            throw ConfigError("lambda_schedule entries must be non-negative");
    if (!lambda_schedule.empty() && lambda_schedule.size() != tasks)
        throw ConfigError("lambda_schedule has " + std::to_string(lambda_schedule.size()) + " entries for " +
                          std::to_string(tasks) + " tasks");
    if (methods.empty() || orders.empty() || seeds.empty())
        throw ConfigError("method, order and seed lists must be non-empty");
    if (generator == GeneratorKind::rotated_gaussian && model.backbone != BackboneKind::mlp)
        throw ConfigError("rotated_gaussian tasks produce dense features and need the mlp backbone");
    if (generator == GeneratorKind::token_signature && model.backbone != BackboneKind::transformer)
        throw ConfigError("token_signature tasks produce token ids and need the transformer backbone");
    const std::size_t d_min = model.embed_dim;
    if (rank < 1 || 2 * rank > d_min)
        throw ConfigError("r=" + std::to_string(rank) + " must satisfy 1 <= r <= d/2");
}

double ExperimentConfig::lambda_for_task(std::size_t position) const
{
    return lambda_schedule.empty() ? lambda : lambda_schedule.at(position);
}

StreamOptions ExperimentConfig::stream_options() const
{
    StreamOptions o;
    o.generator = generator;
    o.num_tasks = tasks;
    o.num_classes = model.num_classes;
    o.train_per_task = train_per_task;
    o.eval_per_task = eval_per_task;
    o.vocab_size = model.vocab_size;
    o.seq_len = model.seq_len;
    o.tokens_per_class = tokens_per_class;
    o.p_sig = p_sig;
    o.feature_dim = model.embed_dim;
    return o;
}

std::string ExperimentConfig::to_text() const
{
    std::ostringstream out;
    out << "backbone=" << to_string(model.backbone) << "\n"
        << "d=" << model.embed_dim << "\n"
        << "layers=" << model.num_layers << "\n"
        << "heads=" << model.num_heads << "\n"
        << "seq_len=" << model.seq_len << "\n"
        << "vocab=" << model.vocab_size << "\n"
        << "ffn_mult=" << model.ffn_mult << "\n"
        << "dropout=" << format_double(model.dropout_rate) << "\n"
        << "sites=" << sites_string(model.adapter_sites) << "\n"
        << "classes=" << model.num_classes << "\n"
        << "generator=" << to_string(generator) << "\n"
        << "tasks=" << tasks << "\n"
        << "train_per_task=" << train_per_task << "\n"
        << "eval_per_task=" << eval_per_task << "\n"
        << "tokens_per_class=" << tokens_per_class << "\n"
        << "p_sig=" << format_double(p_sig) << "\n"
        << "epochs=" << epochs << "\n"
        << "batch=" << batch << "\n"
        << "lr=" << format_double(lr) << "\n"
        << "optimizer=" << to_string(optimizer) << "\n"
        << "r=" << rank << "\n"
        << "alpha=" << format_double(alpha) << "\n"
        << "lambda=" << format_double(lambda) << "\n"
        << "lambda_schedule=" << join(lambda_schedule, format_double) << "\n"
        << "variant=" << to_string(variant) << "\n"
        << "method=" << join(methods, [](Method m) { return std::string(to_string(m)); }) << "\n"
        << "order=" << join(orders, [](const std::string &s) { return s; }) << "\n"
        << "seed=" << join(seeds, [](std::uint64_t s) { return std::to_string(s); }) << "\n";
    return out.str();
}

std::string ExperimentConfig::digest() const
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : to_text()) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

ExperimentConfig parse_config(std::string_view text, ExperimentConfig base)
{
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto nl = text.find('\n', start);
        std::string_view line = text.substr(start, nl == std::string_view::npos ? text.npos : nl - start);
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos)
            line = line.substr(0, hash);
        line = trim(line);
        if (!line.empty()) {
            try {
                const auto [key, value] = split_assignment(line);
                base.set(key, value);
            } catch (const ConfigError &e) {
                throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
            }
        }
        if (nl == std::string_view::npos)
            break;
        start = nl + 1;
    }
    return base;
}

ExperimentConfig load_config(const std::filesystem::path &path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot open config file '" + path.string() + "'");
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_config(buffer.str());
}

} // namespace amlora
