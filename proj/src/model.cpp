#include <amlora/model.hpp>

#include <amlora/errors.hpp>
#include <amlora/ops.hpp>

#include <algorithm>

namespace amlora {

BackboneKind parse_backbone(std::string_view text)
{
    if (text == "transformer")
        return BackboneKind::transformer;
    if (text == "mlp")
        return BackboneKind::mlp;
    throw ConfigError("unknown backbone '" + std::string(text) + "' (expected transformer or mlp)");
}

std::string_view to_string(BackboneKind kind)
{
    return kind == BackboneKind::transformer ? "transformer" : "mlp";
}

Site parse_site(std::string_view text)
{
    if (text == "query")
        return Site::query;
    if (text == "key")
        return Site::key;
    if (text == "value")
        return Site::value;
    if (text == "output")
        return Site::output;
    if (text == "ffn")
        return Site::ffn;
    throw ConfigError("unknown adapter site '" + std::string(text) + "'");
}

std::string_view to_string(Site site)
{
    switch (site) {
    case Site::query:
        return "query";
    case Site::key:
        return "key";
    case Site::value:
        return "value";
    case Site::output:
        return "output";
    case Site::ffn:
        return "ffn";
    }
    return "?";
}

std::vector<Site> parse_sites(std::string_view text)
{
    std::vector<Site> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        const std::size_t comma = text.find(',', start);
        const std::string_view item = text.substr(start, comma == std::string_view::npos ? text.npos : comma - start);
        if (item.empty())
            throw ConfigError("empty entry in adapter site list '" + std::string(text) + "'");
        const Site s = parse_site(item);
        if (std::find(out.begin(), out.end(), s) != out.end())
            throw ConfigError("adapter site '" + std::string(item) + "' listed twice");
        out.push_back(s);
        if (comma == std::string_view::npos)
            break;
        start = comma + 1;
    }
    return out;
}

std::string sites_string(const std::vector<Site> &sites)
{
    std::string out;
    for (std::size_t i = 0; i < sites.size(); ++i) {
        if (i)
            out += ",";
        out += to_string(sites[i]);
    }
    return out;
}

void ModelConfig::validate() const
{
    if (vocab_size == 0 || embed_dim == 0 || num_layers == 0 || num_heads == 0 || seq_len == 0 || num_classes == 0 ||
        ffn_mult == 0)
        throw ConfigError("model dimensions must all be positive");
    if (embed_dim % num_heads != 0)
        throw ConfigError("embed_dim " + std::to_string(embed_dim) + " is not divisible by num_heads " +
                          std::to_string(num_heads));
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
        throw ConfigError("dropout_rate must lie in [0, 1)");
    if (num_classes < 2)
        throw ConfigError("a classifier needs at least two classes");
    if (backbone == BackboneKind::mlp)
        for (Site s : adapter_sites)
            if (s != Site::ffn)
                throw ConfigError("mlp backbone only exposes the ffn adapter site, got '" +
                                  std::string(to_string(s)) + "'");
}

void GateProbe::add(const std::string &site, const Tensor &gates)
{
    Entry &e = sites[site];
    if (e.sum.size() != gates.cols()) {
        e.sum.assign(gates.cols(), 0.0);
        e.rows = 0;
    }
    for (std::size_t i = 0; i < gates.rows(); ++i)
        for (std::size_t j = 0; j < gates.cols(); ++j)
            e.sum[j] += gates.at(i, j);
    e.rows += gates.rows();
}

std::vector<double> GateProbe::mean(const std::string &site) const
{
    auto it = sites.find(site);
    if (it == sites.end() || it->second.rows == 0)
        return {};
    std::vector<double> out = it->second.sum;
    for (auto &v : out)
        v /= static_cast<double>(it->second.rows);
    return out;
}

Var AdaptedLinear::forward(Graph &g, Var x, AdapterMode mode, double dropout, Rng *rng, GateProbe *probe)
{
    Var base = ops::linear(x, g.param(weight));
    if (rng && dropout > 0.0)
        base = ops::dropout(base, dropout, *rng);
    base = ops::add_bias(base, g.param(bias));
    if (!adaptable || mode == AdapterMode::none || !stack.configured() || stack.task_count() == 0)
        return base;
    if (mode == AdapterMode::sum) {
        for (auto &adapter : stack.adapters())
            if (!adapter.zero)
                base = ops::add(base, adapter_apply(g, adapter, x));
        return base;
    }
    Var gates;
    Var mixed = gated_adapter_sum(g, stack, selector, x, probe ? &gates : nullptr);
    if (probe)
        probe->add(name, gates.value());
    return ops::add(base, mixed);
}

std::unique_ptr<AdaptedLinear> Backbone::make_projection(std::string name, Site site, std::size_t layer,
                                                         std::size_t d_out, std::size_t d_in, Rng &rng)
{
    auto p = std::make_unique<AdaptedLinear>();
    p->name = std::move(name);
    p->site = site;
    p->layer = layer;
    p->adaptable = std::find(config_.adapter_sites.begin(), config_.adapter_sites.end(), site) !=
                   config_.adapter_sites.end();
    p->weight = Parameter(p->name + ".weight", gaussian({d_out, d_in}, 0.02, rng));
    p->bias = Parameter(p->name + ".bias", Tensor::zeros({d_out}));
    return p;
}

Backbone::Backbone(ModelConfig config, std::uint64_t seed) : config_(std::move(config))
{
    config_.validate();
    Rng rng(mix_seed(seed, {0x6d6f64656cULL}));
    const std::size_t d = config_.embed_dim;
    if (config_.backbone == BackboneKind::transformer) {
        embedding_ = Parameter("embedding", gaussian({config_.vocab_size, d}, 0.02, rng));
        positions_ = Parameter("positions", gaussian({config_.seq_len, d}, 0.02, rng));
    }
    for (std::size_t l = 0; l < config_.num_layers; ++l) {
        Layer layer;
        const std::string prefix = "layer" + std::to_string(l) + ".";
        if (config_.backbone == BackboneKind::transformer) {
            const std::size_t hidden = d * config_.ffn_mult;
            layer.query = make_projection(prefix + "query", Site::query, l, d, d, rng);
            layer.key = make_projection(prefix + "key", Site::key, l, d, d, rng);
            layer.value = make_projection(prefix + "value", Site::value, l, d, d, rng);
            layer.output = make_projection(prefix + "output", Site::output, l, d, d, rng);
            layer.ffn = make_projection(prefix + "ffn", Site::ffn, l, hidden, d, rng);
            layer.ffn_out = make_projection(prefix + "ffn_out", Site::ffn, l, d, hidden, rng);
            layer.ffn_out->adaptable = false;
        } else {
            layer.ffn = make_projection(prefix + "ffn", Site::ffn, l, d, d, rng);
        }
        layers_.push_back(std::move(layer));
    }
    head_weight_ = Parameter("head.weight", gaussian({config_.num_classes, d}, 0.02, rng));
    head_bias_ = Parameter("head.bias", Tensor::zeros({config_.num_classes}));
}

std::unique_ptr<Backbone> build_model(const ModelConfig &config, std::uint64_t seed)
{
    return std::make_unique<Backbone>(config, seed);
}

Var Backbone::forward(Graph &g, const Batch &batch, Mode mode, Rng *rng, GateProbe *probe)
{
    Rng *drop_rng = mode == Mode::train ? rng : nullptr;
    const double p = config_.dropout_rate;
    const std::size_t d = config_.embed_dim;
    Var x;
    if (config_.backbone == BackboneKind::transformer) {
        const std::size_t L = config_.seq_len;
        if (batch.size == 0 || batch.tokens.size() != batch.size * L)
            throw DimensionError("transformer batch must hold " + std::to_string(batch.size) + " x " +
                                 std::to_string(L) + " token ids, got " + std::to_string(batch.tokens.size()));
        x = ops::embedding(g.param(embedding_), batch.tokens);
        x = ops::add_positional(x, g.param(positions_), L);
        for (auto &layer : layers_) {
            Var h = ops::layer_norm(x);
            Var q = layer.query->forward(g, h, adapter_mode_, p, drop_rng, probe);
            Var k = layer.key->forward(g, h, adapter_mode_, p, drop_rng, probe);
            Var v = layer.value->forward(g, h, adapter_mode_, p, drop_rng, probe);
            Var a = ops::attention(q, k, v, L, config_.num_heads);
            x = ops::add(x, layer.output->forward(g, a, adapter_mode_, p, drop_rng, probe));
            h = ops::layer_norm(x);
            Var f = ops::relu(layer.ffn->forward(g, h, adapter_mode_, p, drop_rng, probe));
            x = ops::add(x, layer.ffn_out->forward(g, f, adapter_mode_, p, drop_rng, probe));
        }
        x = ops::mean_pool(ops::layer_norm(x), L);
    } else {
        if (batch.features.rank() != 2 || batch.features.shape()[0] != batch.size || batch.features.shape()[1] != d)
            throw DimensionError("mlp batch must be [" + std::to_string(batch.size) + " x " + std::to_string(d) +
                                 "] features, got " + shape_string(batch.features.shape()));
        x = g.constant(batch.features);
        for (auto &layer : layers_)
            x = ops::relu(layer.ffn->forward(g, x, adapter_mode_, p, drop_rng, probe));
    }
    return ops::add_bias(ops::linear(x, g.param(head_weight_)), g.param(head_bias_));
}

Tensor Backbone::logits(const Batch &batch, GateProbe *probe)
{
    Graph g;
    return forward(g, batch, Mode::eval, nullptr, probe).value();
}

std::vector<AdaptedLinear *> Backbone::all_projections()
{
    std::vector<AdaptedLinear *> out;
    for (auto &layer : layers_)
        for (auto *p : {layer.query.get(), layer.key.get(), layer.value.get(), layer.output.get(), layer.ffn.get(),
                        layer.ffn_out.get()})
            if (p)
                out.push_back(p);
    return out;
}

std::vector<AdaptedLinear *> Backbone::registry()
{
    std::vector<AdaptedLinear *> out;
    for (auto *p : all_projections())
        if (p->adaptable)
            out.push_back(p);
    return out;
}

std::vector<Parameter *> Backbone::base_parameters()
{
    std::vector<Parameter *> out;
    if (config_.backbone == BackboneKind::transformer) {
        out.push_back(&embedding_);
        out.push_back(&positions_);
    }
    for (auto *p : all_projections()) {
        out.push_back(&p->weight);
        out.push_back(&p->bias);
    }
    out.push_back(&head_weight_);
    out.push_back(&head_bias_);
    return out;
}

std::size_t Backbone::base_parameter_count()
{
    std::size_t total = 0;
    for (auto *p : base_parameters())
        total += p->value.size();
    return total;
}

void Backbone::set_base_trainable(bool trainable)
{
    for (auto *p : base_parameters())
        p->trainable = trainable;
}

void Backbone::attach_adapter_stacks(std::size_t rank, double alpha)
{
    for (auto *p : registry())
        p->stack = AdapterStack(p->d_out(), p->d_in(), rank, alpha);
}

void Backbone::attach_selectors(SelectorVariant variant, double lambda)
{
    for (auto *p : registry())
        p->selector = AttentionalSelector(p->stack.size(), p->d_out(), variant, lambda);
}

} // namespace amlora
