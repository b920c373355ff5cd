// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
//
//   acceptance [--only 1,5,...] [--known-failure 6,...]
//
// Exit status is 0 when every criterion passes or fails only where listed by
// --known-failure; a listed criterion that passes is reported as well.

#include <amlora/checkpoint.hpp>
#include <amlora/harness.hpp>
#include <amlora/ops.hpp>
#include <amlora/ortho.hpp>
#include <amlora/random.hpp>
#include <amlora/report.hpp>
#include <amlora/selector.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

using namespace amlora;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start)
{
    return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string f(const char *pattern, double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, pattern, v);
    return buf;
}

double mean(const std::vector<double> &v)
{
    double s = 0.0;
    for (double x : v)
        s += x;
    return s / static_cast<double>(v.size());
}

double sample_sd(const std::vector<double> &v)
{
    const double m = mean(v);
    double s = 0.0;
    for (double x : v)
        s += (x - m) * (x - m);
    return v.size() > 1 ? std::sqrt(s / static_cast<double>(v.size() - 1)) : 0.0;
}

// Runs on the default stream, shared between criteria 6, 7 and 8.
struct RunKey {
    Method method;
    SelectorVariant variant;
    double lambda;
    std::uint64_t seed;
    auto tie() const { return std::tuple(static_cast<int>(method), static_cast<int>(variant), lambda, seed); }
    bool operator<(const RunKey &o) const { return tie() < o.tie(); }
};

struct RunResult {
    MetricsReport report;
    double head_sparsity = 0.0; // share of head entries with |w| < 1e-3
};

std::map<RunKey, RunResult> g_runs;

const RunResult &default_run(Method method, SelectorVariant variant, double lambda, std::uint64_t seed)
{
    const RunKey key{method, variant, lambda, seed};
    if (auto it = g_runs.find(key); it != g_runs.end())
        return it->second;
    ExperimentConfig c;
    c.variant = variant;
    c.lambda = lambda;
    std::unique_ptr<Backbone> model;
    RunResult r;
    r.report = run_experiment(c, method, "1", seed, {}, &model);
    if (method == Method::amlora) {
        std::size_t small = 0, total = 0;
        for (auto *site : model->registry())
            for (const auto &head : site->selector.heads())
                for (double w : head.value.data()) {
                    small += std::abs(w) < 1e-3;
                    ++total;
                }
        r.head_sparsity = static_cast<double>(small) / static_cast<double>(total);
    }
    return g_runs.emplace(key, std::move(r)).first->second;
}

Verdict gradient_oracle()
{
    const auto start = Clock::now();
    const GradCheckReport r = gradcheck_amlora_toy(0);
    const double secs = seconds_since(start);
    return {r.max_relative_error < 1e-4 && secs < 10.0,
            "max relative error " + f("%.2e", r.max_relative_error) + " over " + std::to_string(r.probed) +
                " coordinates in " + f("%.2f", secs) + " s"};
}

Verdict gate_normalization()
{
    Rng rng(2024);
    std::uniform_int_distribution<std::size_t> n_dist(1, 8), b_dist(1, 16), d_dist(2, 12);
    std::uniform_real_distribution<double> scale(1e-3, 50.0);
    double worst = 0.0;
    bool nonneg = true;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t d_in = d_dist(rng), d_out = d_dist(rng), n = n_dist(rng);
        AdapterStack stack(d_out, d_in, 1, 2.0);
        for (std::size_t t = 0; t < n; ++t) {
            stack.begin_task(rng());
            stack.adapters().back().b.value = gaussian({d_out, 1}, scale(rng), rng);
            stack.end_task();
        }
        AttentionalSelector sel = selector_init(stack.size(), d_out, SelectorVariant::ar, 0.0, 0);
        for (auto &h : sel.heads())
            h.value = gaussian(h.value.shape(), scale(rng), rng);
        Graph g;
        Var gates;
        gated_adapter_sum(g, stack, sel, g.constant(gaussian({b_dist(rng), d_in}, scale(rng), rng)), &gates);
        const Tensor &gv = gates.value();
        for (std::size_t r = 0; r < gv.rows(); ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < gv.cols(); ++c) {
                nonneg = nonneg && gv.at(r, c) >= 0.0;
                s += gv.at(r, c);
            }
            worst = std::max(worst, std::abs(s - 1.0));
        }
    }
    return {worst <= 1e-10 && nonneg, "1000 fuzzed pairs, worst |row sum - 1| = " + f("%.2e", worst)};
}

Verdict freezing_invariance()
{
    ExperimentConfig c;
    c.tasks = 3;
    std::string detail;
    bool ok = true;
    for (Method m : {Method::inclora, Method::amlora}) {
        std::vector<Tensor> before;
        auto grab = [](Backbone &model) {
            std::vector<Tensor> out;
            for (auto *site : model.registry())
                for (std::size_t i = 1; i <= 2; ++i) {
                    out.push_back(site->stack[i].a.value);
                    out.push_back(site->stack[i].b.value);
                }
            return out;
        };
        RunHooks hooks;
        hooks.after_task = [&](std::size_t pos, Backbone &model) {
            if (pos == 1)
                before = grab(model);
        };
        std::unique_ptr<Backbone> model;
        run_experiment(c, m, "1", 0, hooks, &model);
        const auto after = grab(*model);
        std::size_t bytes = 0, differing = 0;
        for (std::size_t i = 0; i < before.size(); ++i) {
            const std::span<const double> a = before[i].data(), b = after[i].data();
            bytes += a.size_bytes();
            if (a.size() != b.size() || std::memcmp(a.data(), b.data(), a.size_bytes()) != 0)
                ++differing;
        }
        ok = ok && differing == 0 && !before.empty();
        detail += std::string(detail.empty() ? "" : ", ") + std::string(to_string(m)) + " " +
                  std::to_string(before.size()) + " buffers (" + std::to_string(bytes) + " bytes) " +
                  (differing ? std::to_string(differing) + " changed" : "unchanged");
    }
    return {ok, detail};
}

Verdict uniform_gate_reduction()
{
    const std::size_t d_in = 12, d_out = 10;
    double worst = 0.0;
    for (std::size_t n : {1u, 2u, 4u}) {
        AdapterStack stack(d_out, d_in, 4, 8.0);
        for (std::size_t t = 0; t < n; ++t) {
            stack.begin_task(mix_seed(7, {t}));
            stack.adapters().back().b.value = gaussian({d_out, 4}, 1.0, mix_seed(8, {t}));
            stack.end_task();
        }
        AttentionalSelector sel = selector_init(stack.size(), d_out, SelectorVariant::ar, 0.0, 0);
        Parameter w0("w0", gaussian({d_out, d_in}, 1.0, 3));
        const Tensor x = gaussian({6, d_in}, 1.0, 4);
        Tensor expected({x.rows(), d_out});
        for (std::size_t r = 0; r < x.rows(); ++r)
            for (std::size_t o = 0; o < d_out; ++o)
                for (std::size_t k = 0; k < d_in; ++k)
                    expected.at(r, o) += w0.value.at(o, k) * x.at(r, k);
        for (std::size_t i = 1; i <= n; ++i) {
            const Tensor delta = adapter_apply(stack[i], x);
            for (std::size_t k = 0; k < expected.size(); ++k)
                expected[k] += delta[k] / static_cast<double>(n + 1);
        }
        Graph g;
        const Tensor got = mixed_forward(g, w0, stack, sel, g.constant(x)).value();
        worst = std::max(worst, max_abs_diff(got, expected));
    }
    return {worst <= 1e-10, "n in {1,2,4}, max deviation " + f("%.2e", worst)};
}

Verdict ortho_counterexamples()
{
    const auto start = Clock::now();
    bool ok = true;
    const auto one = ortho::counterexample_1d();
    ok = ok && one.f_ax(0) == 1.0 && one.f_abx(0) == -1.0 && one.residual == 0.0;
    const auto two = ortho::counterexample_2d();
    ok = ok && two.f_ax == Eigen::Vector2d(1.0, 0.0) && two.f_abx == Eigen::Vector2d(0.0, 1.0) && two.residual == 0.0;
    for (std::size_t n : {2u, 3u, 4u, 8u, 16u}) {
        const auto r = ortho::counterexample_nd(n);
        const auto k = static_cast<Eigen::Index>(n);
        ok = ok && r.f_ax == Eigen::VectorXd::Unit(k, 0) && r.f_abx == Eigen::VectorXd::Unit(k, k - 1) &&
             r.residual == 0.0 && r.deviation == std::sqrt(2.0);
    }
    const double secs = seconds_since(start);
    return {ok && secs < 1.0, "1d (1,-1), 2d (1,0)/(0,1), nd e1/en with deviation sqrt(2) for n in {2,3,4,8,16}, "
                              "residual 0, " + f("%.4f", secs) + " s"};
}

Verdict forgetting_ordering()
{
    const auto start = Clock::now();
    std::map<Method, std::vector<double>> avg;
    std::vector<double> seqft_drop;
    for (Method m : {Method::seqft, Method::inclora, Method::amlora})
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const MetricsReport &r = default_run(m, SelectorVariant::ar, 1e-5, seed).report;
            avg[m].push_back(r.final_average());
            if (m == Method::seqft)
                seqft_drop.push_back(r.accuracy[0][0] - r.accuracy.back()[0]);
        }
    const double secs = seconds_since(start);
    const double am = mean(avg[Method::amlora]), inc = mean(avg[Method::inclora]), seq = mean(avg[Method::seqft]);
    const double drop = mean(seqft_drop);
    const bool ok = am > inc && inc > seq && drop >= 0.10 && secs < 600.0;
    return {ok, "mean final avg amlora " + f("%.4f", am) + ", inclora " + f("%.4f", inc) + ", seqft " +
                    f("%.4f", seq) + "; seqft task-1 drop " + f("%.1f", 100.0 * drop) + " pp; " + f("%.0f", secs) +
                    " s"};
}

Verdict ablation_direction()
{
    std::vector<double> ar, nr, ar_l1;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        ar.push_back(default_run(Method::amlora, SelectorVariant::ar, 0.0, seed).report.final_average());
        nr.push_back(default_run(Method::amlora, SelectorVariant::nr, 0.0, seed).report.final_average());
        ar_l1.push_back(default_run(Method::amlora, SelectorVariant::ar, 1e-5, seed).report.final_average());
    }
    // "Within noise": no more than two standard errors of the difference below AR.
    const double se = std::sqrt((sample_sd(ar) * sample_sd(ar) + sample_sd(ar_l1) * sample_sd(ar_l1)) / 5.0);
    const bool l1_ok = mean(ar_l1) >= mean(ar) - 2.0 * se;
    return {mean(ar) >= mean(nr), "AR " + f("%.4f", mean(ar)) + " >= NR " + f("%.4f", mean(nr)) + "; AR+L1 " +
                                      f("%.4f", mean(ar_l1)) + (l1_ok ? " within noise of or above AR" :
                                                                       " below AR by more than 2 SE") +
                                      " (2 SE = " + f("%.4f", 2.0 * se) + ")"};
}

Verdict sparsity_monotonicity()
{
    std::vector<double> frac;
    std::string detail;
    for (double lambda : {0.0, 1e-5, 1e-3, 1e-1}) {
        std::vector<double> v;
        for (std::uint64_t seed = 0; seed < 3; ++seed)
            v.push_back(default_run(Method::amlora, SelectorVariant::ar, lambda, seed).head_sparsity);
        frac.push_back(mean(v));
        detail += std::string(detail.empty() ? "" : ", ") + "lambda " + f("%g", lambda) + ": " + f("%.4f", frac.back());
    }
    bool ok = true;
    for (std::size_t i = 1; i < frac.size(); ++i)
        ok = ok && frac[i] >= frac[i - 1];
    return {ok, "share of |w| < 1e-3: " + detail};
}

Verdict overhead_accounting()
{
    const MetricsReport &r = default_run(Method::amlora, SelectorVariant::ar, 1e-5, 0).report;
    const ExperimentConfig c;
    const std::size_t n = r.task_ids.size();
    const std::size_t expected = (n + 1) * c.model.embed_dim;
    const double share = static_cast<double>(r.selector_params_per_site) / static_cast<double>(r.base_params);
    const double total_share = static_cast<double>(r.selector_params_total) / static_cast<double>(r.base_params);
    const bool ok = r.selector_params_per_site == expected &&
                    r.selector_params_total == expected * r.adapted_sites && share < 0.01;
    return {ok, "per site " + std::to_string(r.selector_params_per_site) + " = (" + std::to_string(n) + "+1)*" +
                    std::to_string(c.model.embed_dim) + ", " + f("%.3f", 100.0 * share) + "% of " +
                    std::to_string(r.base_params) + " base params (all " + std::to_string(r.adapted_sites) +
                    " sites: " + f("%.2f", 100.0 * total_share) + "%)"};
}

std::string slurp(const fs::path &p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

Verdict determinism_and_persistence()
{
    const fs::path dir = fs::temp_directory_path() / "amlora_acceptance";
    fs::remove_all(dir);
    ExperimentConfig c;
    c.methods = {Method::amlora};
    std::unique_ptr<Backbone> model;
    for (const char *sub : {"a", "b"})
        emit_report({run_experiment(c, Method::amlora, "1", 3, {}, &model)}, c, dir / sub);
    const std::string a = slurp(dir / "a" / "metrics.csv");
    const bool same_metrics = !a.empty() && a == slurp(dir / "b" / "metrics.csv");

    save_checkpoint(*model, c, dir / "model.ckpt");
    LoadedCheckpoint loaded = load_checkpoint(dir / "model.ckpt");
    bool same_logits = true;
    std::size_t rows = 0;
    for (const auto &d : generate_stream(make_stream(c.stream_options(), "1", 3))) {
        const Batch b = make_batch(d, d.eval);
        same_logits = same_logits && model->logits(b).bit_equal(loaded.model->logits(b));
        rows += b.size;
    }
    fs::remove_all(dir);
    return {same_metrics && same_logits,
            std::string("metrics.csv ") + (same_metrics ? "byte-identical" : "differs") + " across reruns; " +
                "checkpoint logits " + (same_logits ? "bit-exact" : "differ") + " on " + std::to_string(rows) +
                " eval rows"};
}

std::set<int> parse_list(const char *text)
{
    std::set<int> out;
    std::stringstream ss(text);
    for (std::string item; std::getline(ss, item, ',');)
        if (!item.empty())
            out.insert(std::stoi(item));
    return out;
}

} // namespace

int main(int argc, char **argv)
{
    std::set<int> only, known;
    for (int i = 1; i + 1 < argc; i += 2) {
        if (!std::strcmp(argv[i], "--only"))
            only = parse_list(argv[i + 1]);
        else if (!std::strcmp(argv[i], "--known-failure"))
            known = parse_list(argv[i + 1]);
        else {
            std::fprintf(stderr, "usage: acceptance [--only 1,2,...] [--known-failure 6,...]\n");
            return 2;
        }
    }

    const std::vector<std::pair<const char *, std::function<Verdict()>>> criteria{
        {"gradient oracle", gradient_oracle},
        {"gate normalization", gate_normalization},
        {"freezing invariance", freezing_invariance},
        {"uniform-gate reduction", uniform_gate_reduction},
        {"orthogonality counterexamples", ortho_counterexamples},
        {"forgetting ordering", forgetting_ordering},
        {"ablation direction", ablation_direction},
        {"sparsity monotonicity", sparsity_monotonicity},
        {"overhead accounting", overhead_accounting},
        {"determinism and persistence", determinism_and_persistence},
    };

    int unexpected = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i + 1);
        if (!only.empty() && !only.count(id))
            continue;
        Verdict v;
        try {
            v = criteria[i].second();
        } catch (const std::exception &e) {
            v = {false, std::string("threw: ") + e.what()};
        }
        std::string note;
        if (known.count(id))
            note = v.pass ? " [listed as known failure but passed]" : " [known failure]";
        else if (!v.pass)
            ++unexpected;
        std::printf("%s %2d %s: %s%s\n", v.pass ? "PASS" : "FAIL", id, criteria[i].first, v.detail.c_str(),
                    note.c_str());
        std::fflush(stdout);
    }
    return unexpected ? 1 : 0;
}
