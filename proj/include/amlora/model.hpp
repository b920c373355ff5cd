#pragma once

#include <amlora/adapters.hpp>
#include <amlora/graph.hpp>
#include <amlora/random.hpp>
#include <amlora/selector.hpp>

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace amlora {

enum class BackboneKind { transformer, mlp };
enum class Site { query, key, value, output, ffn };
enum class Mode { train, eval };

/// How adapted projections combine their adapters with the base path.
enum class AdapterMode {
    none,  // base only
    sum,   // W0 x + sum_i dW_i x
    gated, // W0 x + sum_i g_i (dW_i x)
};

BackboneKind parse_backbone(std::string_view text);
std::string_view to_string(BackboneKind kind);
Site parse_site(std::string_view text);
std::string_view to_string(Site site);
/// "query,value" -> {query, value}; duplicates and unknown names are config errors.
std::vector<Site> parse_sites(std::string_view text);
std::string sites_string(const std::vector<Site> &sites);

struct ModelConfig {
    BackboneKind backbone = BackboneKind::transformer;
    std::size_t vocab_size = 128;
    std::size_t embed_dim = 32;
    std::size_t num_layers = 2;
    std::size_t num_heads = 4;
    std::size_t seq_len = 16;
    std::size_t num_classes = 4;
    std::size_t ffn_mult = 4;
    double dropout_rate = 0.1;
    std::vector<Site> adapter_sites{Site::query, Site::value};

    /// Throws ConfigError describing the first violated constraint.
    void validate() const;
    std::size_t head_dim() const { return embed_dim / num_heads; }
};

/// A batch of token sequences (b x L ids, row-major) or dense features (b x d).
struct Batch {
    std::size_t size = 0;
    std::vector<std::uint32_t> tokens;
    Tensor features;
};

/// Accumulates mean gate rows per adapted site for inspection.
struct GateProbe {
    struct Entry {
        std::vector<double> sum;
        std::size_t rows = 0;
    };
    std::map<std::string, Entry> sites;

    void add(const std::string &site, const Tensor &gates);
    std::vector<double> mean(const std::string &site) const;
};

/// A frozen projection W0 (d_out x d_in) with bias, plus the adapter stack and
/// selector that may be attached to it.
struct AdaptedLinear {
    std::string name;
    Site site = Site::ffn;
    std::size_t layer = 0;
    bool adaptable = false;
    Parameter weight;
    Parameter bias;
    AdapterStack stack;
    AttentionalSelector selector;

    std::size_t d_out() const { return weight.value.shape()[0]; }
    std::size_t d_in() const { return weight.value.shape()[1]; }

    /// Dropout, when active, touches only W0 x.
    Var forward(Graph &g, Var x, AdapterMode mode, double dropout, Rng *rng, GateProbe *probe);
};

/// Desk-scale classifier: a pre-norm transformer encoder with mean pooling, or
/// a ReLU MLP over dense features. All projections are AdaptedLinear slots; the
/// ones named by adapter_sites form the adapter registry.
class Backbone {
public:
    Backbone(ModelConfig config, std::uint64_t seed);
    Backbone(const Backbone &) = delete;
    Backbone &operator=(const Backbone &) = delete;

    const ModelConfig &config() const noexcept { return config_; }

    /// Logits [b x C]. `rng` drives dropout in train mode and may be null.
    Var forward(Graph &g, const Batch &batch, Mode mode, Rng *rng = nullptr, GateProbe *probe = nullptr);
    /// Eval-mode logits without keeping a graph around.
    Tensor logits(const Batch &batch, GateProbe *probe = nullptr);

    /// Adapter attachment points, ordered by layer then site.
    std::vector<AdaptedLinear *> registry();
    std::vector<AdaptedLinear *> all_projections();
    std::vector<Parameter *> base_parameters();
    std::size_t base_parameter_count();
    void set_base_trainable(bool trainable);

    AdapterMode adapter_mode() const noexcept { return adapter_mode_; }
    void set_adapter_mode(AdapterMode mode) noexcept { adapter_mode_ = mode; }

    /// Installs empty adapter stacks (zero adapter only) on every registry slot.
    void attach_adapter_stacks(std::size_t rank, double alpha);
    /// Installs selectors matching the current stacks.
    void attach_selectors(SelectorVariant variant, double lambda);

    Parameter &embedding() { return embedding_; }
    Parameter &positions() { return positions_; }
    Parameter &head_weight() { return head_weight_; }
    Parameter &head_bias() { return head_bias_; }

private:
    struct Layer {
        std::unique_ptr<AdaptedLinear> query, key, value, output, ffn, ffn_out;
    };

    std::unique_ptr<AdaptedLinear> make_projection(std::string name, Site site, std::size_t layer, std::size_t d_out,
                                                   std::size_t d_in, Rng &rng);

    ModelConfig config_;
    AdapterMode adapter_mode_ = AdapterMode::none;
    Parameter embedding_;
    Parameter positions_;
    std::vector<Layer> layers_;
    Parameter head_weight_;
    Parameter head_bias_;
};

/// Deterministic initialization from (config, seed): weights N(0, 0.02^2), biases 0.
std::unique_ptr<Backbone> build_model(const ModelConfig &config, std::uint64_t seed);

} // namespace amlora
