#include <amlora/checkpoint.hpp>

#include <amlora/io.hpp>

#include <bit>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace amlora {

namespace {

const std::string kMagic = "AMLORA-CKPT";

std::string_view mode_name(AdapterMode mode)
{
    switch (mode) {
    case AdapterMode::none:
        return "none";
    case AdapterMode::sum:
        return "sum";
    case AdapterMode::gated:
        return "gated";
    }
    return "?";
}

AdapterMode parse_mode(std::string_view text)
{
    if (text == "none")
        return AdapterMode::none;
    if (text == "sum")
        return AdapterMode::sum;
    if (text == "gated")
        return AdapterMode::gated;
    throw FormatError("checkpoint names unknown adapter mode '" + std::string(text) + "'");
}

class Writer {
public:
    void u32(std::uint32_t v) { put(v, 4); }
    void u64(std::uint64_t v) { put(v, 8); }
    void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
    void bytes(std::string_view s) { out_.append(s); }

    void tensor(const std::string &name, const Tensor &t)
    {
        u32(static_cast<std::uint32_t>(name.size()));
        bytes(name);
        u32(static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape())
            u64(d);
        for (double v : t.data())
            f64(v);
        ++records_;
    }

    std::string &buffer() { return out_; }
    std::size_t records() const { return records_; }

private:
    void put(std::uint64_t v, int n)
    {
        for (int i = 0; i < n; ++i)
            out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    std::string out_;
    std::size_t records_ = 0;
};

class Reader {
public:
    explicit Reader(std::string_view data) : data_(data) {}

    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
    std::uint64_t u64() { return get(8); }
    double f64() { return std::bit_cast<double>(get(8)); }
    std::string_view bytes(std::size_t n)
    {
        need(n);
        auto s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == data_.size(); }

    std::pair<std::string, Tensor> tensor()
    {
        std::string name(bytes(u32()));
        const std::uint32_t rank = u32();
        if (rank == 0 || rank > 8)
            throw FormatError("record '" + name + "' has implausible rank " + std::to_string(rank));
        Shape shape(rank);
        std::size_t volume = 1;
        for (auto &d : shape) {
            d = u64();
            if (d == 0 || d > (data_.size() / 8) + 1)
                throw FormatError("record '" + name + "' has implausible dimension " + std::to_string(d));
            volume *= d;
        }
        need(volume * 8);
        std::vector<double> values(volume);
        for (auto &v : values)
            v = f64();
        return {std::move(name), Tensor(std::move(shape), std::move(values))};
    }

private:
    void need(std::size_t n) const
    {
        if (data_.size() - pos_ < n)
            throw FormatError("checkpoint is truncated at byte " + std::to_string(pos_));
    }
    std::uint64_t get(int n)
    {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }

    std::string_view data_;
    std::size_t pos_ = 0;
};

std::string format_double(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

void save_checkpoint(Backbone &model, const ExperimentConfig &config, const std::filesystem::path &path)
{
    std::string meta = config.to_text();
    meta += "adapter_mode=" + std::string(mode_name(model.adapter_mode())) + "\n";
    const auto sites = model.registry();
    if (!sites.empty() && !sites.front()->selector.heads().empty())
        meta += "selector_lambda=" + format_double(sites.front()->selector.lambda()) + "\n";

    Writer body;
    for (auto *p : model.base_parameters())
        body.tensor(p->name, p->value);
    for (auto *site : sites) {
        const AdapterStack &stack = site->stack;
        if (!stack.configured())
            continue;
        for (std::size_t i = 1; i < stack.size(); ++i) {
            const LoraAdapter &ad = stack[i];
            Tensor packed({ad.rank, ad.d_in + ad.d_out});
            for (std::size_t r = 0; r < ad.rank; ++r) {
                for (std::size_t c = 0; c < ad.d_in; ++c)
                    packed.at(r, c) = ad.a.value.at(r, c);
                for (std::size_t c = 0; c < ad.d_out; ++c)
                    packed.at(r, ad.d_in + c) = ad.b.value.at(c, r);
            }
            body.tensor(site->name + "/adapter/" + std::to_string(ad.task_id), packed);
        }
        const auto &heads = site->selector.heads();
        for (std::size_t i = 0; i < heads.size(); ++i)
            body.tensor(site->name + "/head/" + std::to_string(i), heads[i].value);
    }

    Writer file;
    file.bytes(kMagic + " " + std::to_string(kCheckpointVersion) + "\n");
    file.u64(meta.size());
    file.bytes(meta);
    file.u64(body.records());
    file.bytes(body.buffer());
    write_file_atomic(path, file.buffer());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path &path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open checkpoint '" + path.string() + "'");
    std::stringstream buffer;
    buffer << in.rdbuf();
    const std::string data = buffer.str();

    const auto nl = data.find('\n');
    if (nl == std::string::npos || data.compare(0, kMagic.size() + 1, kMagic + " ") != 0)
        throw FormatError("'" + path.string() + "' is not an AM-LoRA checkpoint");
    const std::string version_text = data.substr(kMagic.size() + 1, nl - kMagic.size() - 1);
    int version = 0;
    const auto [ptr, ec] = std::from_chars(version_text.data(), version_text.data() + version_text.size(), version);
    if (ec != std::errc() || ptr != version_text.data() + version_text.size())
        throw FormatError("checkpoint header has a malformed version '" + version_text + "'");
    if (version != kCheckpointVersion)
        throw IncompatibleCheckpoint("checkpoint format version " + std::to_string(version) +
                                     " is incompatible with this build (expects " +
                                     std::to_string(kCheckpointVersion) + ")");

    Reader r(std::string_view(data).substr(nl + 1));
    const std::string meta(r.bytes(r.u64()));
    ExperimentConfig config;
    AdapterMode mode = AdapterMode::none;
    double selector_lambda = -1.0;
    {
        std::istringstream lines(meta);
        std::string line;
        while (std::getline(lines, line)) {
            if (line.empty())
                continue;
            const auto [key, value] = split_assignment(line);
            if (key == "adapter_mode")
                mode = parse_mode(value);
            else if (key == "selector_lambda")
                selector_lambda = std::stod(value);
            else {
                try {
                    config.set(key, value);
                } catch (const ConfigError &e) {
                    throw FormatError(std::string("checkpoint metadata: ") + e.what());
                }
            }
        }
    }

    std::map<std::string, Tensor> records;
    const std::uint64_t count = r.u64();
    for (std::uint64_t i = 0; i < count; ++i) {
        auto [name, t] = r.tensor();
        if (!records.emplace(name, std::move(t)).second)
            throw FormatError("duplicate checkpoint record '" + name + "'");
    }
    if (!r.done())
        throw FormatError("trailing bytes after the last checkpoint record");

    LoadedCheckpoint out;
    out.config = config;
    auto model = std::make_unique<Backbone>(config.model, 0);
    model->set_adapter_mode(mode);
    model->set_base_trainable(false);

    auto take = [&records](const std::string &name) -> Tensor {
        auto it = records.find(name);
        if (it == records.end())
            throw FormatError("checkpoint lacks record '" + name + "'");
        Tensor t = std::move(it->second);
        records.erase(it);
        return t;
    };

    for (auto *p : model->base_parameters()) {
        Tensor t = take(p->name);
        if (t.shape() != p->value.shape())
            throw FormatError("record '" + p->name + "' has shape " + shape_string(t.shape()) + ", expected " +
                              shape_string(p->value.shape()));
        p->value = std::move(t);
    }

    std::size_t adapter_records = 0, head_records = 0;
    bool first_site = true;
    for (auto *site : model->registry()) {
        std::size_t adapters_here = 0, heads_here = 0;
        const std::string adapter_prefix = site->name + "/adapter/";
        const std::string head_prefix = site->name + "/head/";
        bool any = false;
        for (const auto &[name, t] : records)
            any = any || name.starts_with(adapter_prefix) || name.starts_with(head_prefix);
        if (any || mode != AdapterMode::none) {
            site->stack = AdapterStack(site->d_out(), site->d_in(), config.rank, config.alpha);
            for (int task = 1;; ++task) {
                auto it = records.find(adapter_prefix + std::to_string(task));
                if (it == records.end())
                    break;
                const Tensor packed = take(it->first);
                if (packed.rank() != 2 || packed.cols() != site->d_in() + site->d_out())
                    throw FormatError("adapter record for " + site->name + " task " + std::to_string(task) +
                                      " has shape " + shape_string(packed.shape()));
                const std::size_t rank = packed.shape()[0];
                LoraAdapter ad = new_adapter(site->d_out(), site->d_in(), rank, config.alpha, task, 0);
                for (std::size_t row = 0; row < rank; ++row) {
                    for (std::size_t c = 0; c < site->d_in(); ++c)
                        ad.a.value.at(row, c) = packed.at(row, c);
                    for (std::size_t c = 0; c < site->d_out(); ++c)
                        ad.b.value.at(c, row) = packed.at(row, site->d_in() + c);
                }
                site->stack.restore(std::move(ad));
                ++adapters_here;
            }
        }
        if (records.count(head_prefix + "0")) {
            site->selector = AttentionalSelector(1, site->d_out(), config.variant,
                                                 selector_lambda >= 0.0 ? selector_lambda : config.lambda);
            site->selector.heads()[0].value = take(head_prefix + "0").reshaped({site->d_out(), 1});
            for (std::size_t i = 1;; ++i) {
                auto it = records.find(head_prefix + std::to_string(i));
                if (it == records.end())
                    break;
                site->selector.restore_head(take(it->first));
            }
            site->selector.freeze_all();
            heads_here = site->selector.size();
            if (heads_here != site->stack.size())
                throw FormatError(site->name + " has " + std::to_string(heads_here) + " score heads for " +
                                  std::to_string(site->stack.size()) + " adapters");
        }
        if (first_site) {
            adapter_records = adapters_here;
            head_records = heads_here;
            first_site = false;
        } else if (adapters_here != adapter_records || heads_here != head_records) {
            throw FormatError("adapter or head counts differ between sites");
        }
    }
    if (!records.empty())
        throw FormatError("checkpoint holds unexpected record '" + records.begin()->first + "'");

    out.model = std::move(model);
    out.adapter_records = adapter_records;
    out.head_records = head_records;
    return out;
}

} // namespace amlora
