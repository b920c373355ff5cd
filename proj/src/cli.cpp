#include <amlora/cli.hpp>

#include <amlora/checkpoint.hpp>
#include <amlora/config.hpp>
#include <amlora/errors.hpp>
#include <amlora/harness.hpp>
#include <amlora/io.hpp>
#include <amlora/ortho.hpp>
#include <amlora/report.hpp>

#include <CLI11.hpp>

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <optional>
#include <sstream>
#include <thread>

namespace amlora::cli {

namespace {

struct ConfigArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::vector<std::uint64_t> seeds;
};

struct CommonArgs {
    ConfigArgs config;
    std::string out_dir;
    std::size_t jobs = 1;
    bool save_checkpoints = false;
    std::string checkpoint;

    std::size_t n = 8;
    std::size_t trials = 1000;
    std::string nonlinearity = "mlp";
    std::uint64_t seed = 0;
    double lambda = 1e-2;
};

void add_config_flags(CLI::App *sub, ConfigArgs &args)
{
    sub->add_option("--config", args.config_path, "key=value config file");
    sub->add_option("--override", args.overrides, "key=value settings applied after the config file")
        ->allow_extra_args();
    sub->add_option("--seeds", args.seeds, "comma-separated seed list")->delimiter(',');
}

ExperimentConfig resolve_config(const ConfigArgs &args)
{
    ExperimentConfig config;
    if (!args.config_path.empty())
        config = load_config(args.config_path);
    for (const auto &item : args.overrides) {
        const auto [key, value] = split_assignment(item);
        config.set(key, value);
    }
    if (!args.seeds.empty())
        config.seeds = args.seeds;
    config.validate();
    return config;
}

std::filesystem::path resolve_out_dir(const std::string &flag)
{
    if (!flag.empty())
        return flag;
    if (const char *env = std::getenv("AMLORA_OUT"); env && *env)
        return env;
    return "amlora_out";
}

std::string fmt(const char *pattern, double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, pattern, v);
    return buf;
}

struct Cell {
    Method method;
    std::string order;
    std::uint64_t seed;
};

int cmd_run(const CommonArgs &args, std::ostream &out, std::ostream &err)
{
    const ExperimentConfig config = resolve_config(args.config);
    const auto out_dir = resolve_out_dir(args.out_dir);
    ensure_directory(out_dir);
    if (args.save_checkpoints)
        ensure_directory(out_dir / "checkpoints");

    std::vector<Cell> cells;
    for (auto method : config.methods)
        for (const auto &order : config.orders)
            for (auto seed : config.seeds)
                cells.push_back({method, order, seed});

    std::vector<MetricsReport> reports(cells.size());
    std::vector<std::string> errors(cells.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < cells.size(); i = next++) {
            const Cell &c = cells[i];
            try {
                std::unique_ptr<Backbone> model;
                reports[i] = run_experiment(config, c.method, c.order, c.seed, {},
                                            args.save_checkpoints ? &model : nullptr);
                if (model)
                    save_checkpoint(*model, config,
                                    out_dir / "checkpoints" /
                                        (reports[i].method + "-seed" + std::to_string(c.seed) + "-order" + c.order +
                                         ".ckpt"));
            } catch (const StreamAborted &e) {
                reports[i] = e.partial();
                errors[i] = e.what();
            } catch (const std::exception &e) {
                reports[i].method = std::string(to_string(c.method));
                reports[i].seed = c.seed;
                reports[i].order_id = c.order;
                reports[i].error = e.what();
                reports[i].complete = false;
                errors[i] = e.what();
            }
        }
    };
    const std::size_t jobs = std::max<std::size_t>(1, std::min(args.jobs, cells.size()));
    std::vector<std::thread> pool;
    for (std::size_t j = 1; j < jobs; ++j)
        pool.emplace_back(worker);
    worker();
    for (auto &t : pool)
        t.join();

    emit_report(reports, config, out_dir);

    std::size_t failed = 0;
    std::vector<SummaryRow> summary;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        const auto &r = reports[i];
        out << (r.complete ? "ok     " : "FAILED ") << r.method << " seed " << r.seed << " order " << r.order_id;
        if (r.complete) {
            out << "  avg " << fmt("%.4f", r.final_average()) << "  forgetting " << fmt("%.4f", r.mean_forgetting())
                << "\n";
            summary.push_back({r.method, r.seed, r.order_id, r.final_average(), r.mean_forgetting(),
                               r.trainable_params()});
        } else {
            out << "  " << errors[i] << "\n";
            ++failed;
        }
    }
    if (!summary.empty())
        out << format_method_table(summary);
    out << "config digest " << config.digest() << ", outputs in " << out_dir.string() << "\n";
    if (failed) {
        err << failed << " of " << cells.size() << " runs failed\n";
        return kExitFailure;
    }
    return kExitOk;
}

int cmd_verify_ortho(const CommonArgs &args, std::ostream &out)
{
    bool all = true;
    auto line = [&](bool ok, const std::string &name, const std::string &detail) {
        out << (ok ? "PASS " : "FAIL ") << name << ": " << detail << "\n";
        all = all && ok;
    };

    const auto one = ortho::counterexample_1d();
    line(one.f_ax(0) == 1.0 && one.f_abx(0) == -1.0 && one.residual == 0.0, "1d",
         "sin(Ax)=" + fmt("%g", one.f_ax(0)) + " sin((A+B)x)=" + fmt("%g", one.f_abx(0)) +
             " residual=" + fmt("%g", one.residual) + " deviation=" + fmt("%g", one.deviation));

    const auto two = ortho::counterexample_2d();
    const bool two_ok = two.f_ax == Eigen::Vector2d(1.0, 0.0) && two.f_abx == Eigen::Vector2d(0.0, 1.0) &&
                        two.residual == 0.0 && std::abs(two.deviation - std::sqrt(2.0)) <= 1e-12;
    line(two_ok, "2d", "f(Ax)=(1,0) f((A+B)x)=(0,1) residual=" + fmt("%g", two.residual) +
                           " deviation=" + fmt("%.15g", two.deviation));

    bool nd_ok = true;
    std::size_t checked = 0;
    for (std::size_t n = 2; n <= 64; ++n) {
        const auto rec = ortho::counterexample_nd(n);
        const auto last = static_cast<Eigen::Index>(n - 1);
        nd_ok = nd_ok && rec.f_ax == Eigen::VectorXd::Unit(last + 1, 0) &&
                rec.f_abx == Eigen::VectorXd::Unit(last + 1, last) && rec.residual == 0.0 &&
                std::abs(rec.deviation - std::sqrt(2.0)) <= 1e-12;
        ++checked;
    }
    line(nd_ok, "nd", "n=2.." + std::to_string(checked + 1) + ": f(Ax)=e1 f((A+B)x)=en deviation=sqrt(2) residual=0");

    ortho::StudyOptions o;
    o.n = args.n;
    o.trials = args.trials;
    o.nonlinearity = ortho::parse_nonlinearity(args.nonlinearity);
    o.seed = args.seed;
    const auto study = ortho::random_orthogonality_study(o);
    ortho::StudyOptions control = o;
    control.zero_b = true;
    ortho::random_orthogonality_study(control);
    line(!study.records.empty() && study.max_residual < 1e-10, "study",
         "n=" + std::to_string(study.n) + " trials=" + std::to_string(study.trials) + " f=" + args.nonlinearity +
             " skipped=" + std::to_string(study.skipped) + " max_residual=" + fmt("%.3g", study.max_residual) +
             " deviating=" + fmt("%.4f", study.fraction_deviating) + " median_deviation=" +
             fmt("%.4g", study.median_deviation));
    if (!args.out_dir.empty()) {
        ensure_directory(args.out_dir);
        ortho::write_ortho_report(study, std::filesystem::path(args.out_dir) / "ortho_report.csv");
    }
    return all ? kExitOk : kExitFailure;
}

int cmd_grad_check(const CommonArgs &args, std::ostream &out)
{
    const auto report = gradcheck_amlora_toy(args.seed, args.lambda);
    const bool ok = report.max_relative_error < 1e-4;
    out << (ok ? "PASS" : "FAIL") << " max relative error " << fmt("%.3e", report.max_relative_error) << " over "
        << report.probed << " coordinates (" << report.skipped << " frozen skipped), worst at "
        << report.worst_coordinate << "\n";
    return ok ? kExitOk : kExitFailure;
}

int cmd_inspect_gates(const CommonArgs &args, std::ostream &out)
{
    ExperimentConfig config;
    std::unique_ptr<Backbone> model;
    if (!args.checkpoint.empty()) {
        auto loaded = load_checkpoint(args.checkpoint);
        config = loaded.config;
        model = std::move(loaded.model);
    } else {
        config = resolve_config(args.config);
        run_experiment(config, Method::amlora, config.orders.front(), config.seeds.front(), {}, &model);
    }
    if (model->adapter_mode() != AdapterMode::gated)
        throw UsageError("inspect-gates needs an amlora model; this one has no selector");

    const auto stream = make_stream(config.stream_options(), config.orders.front(), config.seeds.front());
    const auto data = generate_stream(stream);
    std::ostringstream csv;
    csv << "site,eval_task,adapter,mean_gate\n";
    GateProbe overall;
    for (const auto &d : data) {
        GateProbe probe;
        const double acc = evaluate(*model, d, &probe);
        out << "task " << d.task_id << " accuracy " << fmt("%.4f", acc) << "\n";
        for (const auto &[site, entry] : probe.sites) {
            const auto mean = probe.mean(site);
            out << "  " << site;
            for (std::size_t i = 0; i < mean.size(); ++i) {
                out << (i ? " " : "  ") << fmt("%.3f", mean[i]);
                csv << site << "," << d.task_id << "," << i << "," << fmt("%.9g", mean[i]) << "\n";
            }
            out << "\n";
            auto &agg = overall.sites[site];
            if (agg.sum.size() != entry.sum.size())
                agg.sum.assign(entry.sum.size(), 0.0);
            for (std::size_t i = 0; i < entry.sum.size(); ++i)
                agg.sum[i] += entry.sum[i];
            agg.rows += entry.rows;
        }
    }
    out << "all tasks\n";
    for (const auto &[site, entry] : overall.sites) {
        out << "  " << site;
        const auto mean = overall.mean(site);
        for (std::size_t i = 0; i < mean.size(); ++i) {
            out << (i ? " " : "  ") << fmt("%.3f", mean[i]);
            csv << site << ",all," << i << "," << fmt("%.9g", mean[i]) << "\n";
        }
        out << "\n";
    }
    const auto out_dir = resolve_out_dir(args.out_dir);
    ensure_directory(out_dir);
    write_file_atomic(out_dir / "gates.csv", csv.str());
    return kExitOk;
}

int cmd_report(const CommonArgs &args, std::ostream &out, std::ostream &err)
{
    const auto dir = resolve_out_dir(args.out_dir);
    const auto metrics = read_metrics_csv(dir / "metrics.csv");
    const auto written = read_summary_csv(dir / "summary.csv");
    const auto recomputed = summarize_metrics(metrics);

    std::map<std::tuple<std::string, std::uint64_t, std::string>, const SummaryRow *> by_key;
    for (const auto &r : recomputed)
        by_key[{r.method, r.seed, r.order_id}] = &r;
    std::size_t mismatches = 0;
    for (const auto &w : written) {
        auto it = by_key.find({w.method, w.seed, w.order_id});
        if (it == by_key.end() || std::abs(it->second->avg_accuracy - w.avg_accuracy) > 1e-9 ||
            std::abs(it->second->mean_forgetting - w.mean_forgetting) > 1e-9) {
            err << "summary row " << w.method << " seed " << w.seed << " order " << w.order_id
                << " disagrees with metrics.csv\n";
            ++mismatches;
        }
    }
    out << format_method_table(written);
    return mismatches ? kExitFailure : kExitOk;
}

} // namespace

int parse_and_dispatch(int argc, const char *const *argv, std::ostream &out, std::ostream &err)
{
    CLI::App app{"Continual learning with attentionally mixed low-rank adapters"};
    app.require_subcommand(1);
    CommonArgs args;

    auto *run = app.add_subcommand("run", "train the (method x order x seed) grid and write CSV reports");
    add_config_flags(run, args.config);
    run->add_option("--out-dir", args.out_dir, "output directory (default: $AMLORA_OUT, then ./amlora_out)");
    run->add_option("--jobs", args.jobs, "grid cells to run concurrently")->check(CLI::PositiveNumber);
    run->add_flag("--save-checkpoints", args.save_checkpoints, "write each run's final model");

    auto *ortho = app.add_subcommand("verify-ortho", "check the orthogonality counterexamples and random study");
    ortho->add_option("--n", args.n, "dimension of the random study")->check(CLI::PositiveNumber);
    ortho->add_option("--trials", args.trials, "random study trials");
    ortho->add_option("--nonlinearity", args.nonlinearity, "sin, relu, mlp or identity");
    ortho->add_option("--seed", args.seed);
    ortho->add_option("--out-dir", args.out_dir, "write ortho_report.csv here");

    auto *grad = app.add_subcommand("grad-check", "finite differences on the full amlora loss of a toy model");
    grad->add_option("--seed", args.seed);
    grad->add_option("--lambda", args.lambda, "L1 weight on the selector heads");

    auto *gates = app.add_subcommand("inspect-gates", "mean gate per adapter, site and task");
    add_config_flags(gates, args.config);
    gates->add_option("--checkpoint", args.checkpoint, "inspect a saved model instead of training one");
    gates->add_option("--out-dir", args.out_dir, "write gates.csv here");

    auto *report = app.add_subcommand("report", "re-aggregate metrics.csv and check it against summary.csv");
    report->add_option("--out-dir", args.out_dir, "directory holding metrics.csv and summary.csv");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitInvalid;
    }

    try {
        if (*run)
            return cmd_run(args, out, err);
        if (*ortho)
            return cmd_verify_ortho(args, out);
        if (*grad)
            return cmd_grad_check(args, out);
        if (*gates)
            return cmd_inspect_gates(args, out);
        return cmd_report(args, out, err);
    } catch (const ConfigError &e) {
        err << "error: " << e.what() << "\n";
        return kExitInvalid;
    } catch (const UsageError &e) {
        err << "error: " << e.what() << "\n";
        return kExitInvalid;
    } catch (const ValidationError &e) {
        err << "error: " << e.what() << "\n";
        return kExitInvalid;
    } catch (const std::exception &e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
}

} // namespace amlora::cli
