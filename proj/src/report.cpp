#include <amlora/report.hpp>

#include <amlora/errors.hpp>
#include <amlora/io.hpp>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>

namespace amlora {

namespace {

std::string num(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

std::string quoted(const std::string &s)
{
    std::string out = "\"";
    for (char c : s) {
        if (c == '"')
            out += '"';
        out += c == '\n' ? ' ' : c;
    }
    return out + "\"";
}

void check_triangle(const MetricsReport &r)
{
    for (std::size_t t = 0; t < r.accuracy.size(); ++t)
        if (r.accuracy[t].size() != t + 1)
            throw UsageError("accuracy row " + std::to_string(t) + " of " + r.method + " seed " +
                             std::to_string(r.seed) + " has " + std::to_string(r.accuracy[t].size()) +
                             " entries; a triangular matrix needs " + std::to_string(t + 1));
    if (r.accuracy.size() > r.task_ids.size())
        throw UsageError("more accuracy rows than stream tasks");
}

std::vector<std::string> split_csv(const std::string &line)
{
    std::vector<std::string> out;
    std::string cur;
    bool in_quotes = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (in_quotes) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                in_quotes = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            in_quotes = true;
        } else if (c == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(std::move(cur));
    return out;
}

struct CsvTable {
    std::map<std::string, std::size_t> columns;
    std::vector<std::vector<std::string>> rows;

    const std::string &get(const std::vector<std::string> &row, const std::string &col) const
    {
        auto it = columns.find(col);
        if (it == columns.end())
            throw FormatError("CSV lacks column '" + col + "'");
        return row.at(it->second);
    }
};

CsvTable read_csv(const std::filesystem::path &path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open '" + path.string() + "'");
    CsvTable table;
    std::string line;
    if (!std::getline(in, line))
        throw FormatError("'" + path.string() + "' is empty");
    const auto header = split_csv(line);
    for (std::size_t i = 0; i < header.size(); ++i)
        table.columns[header[i]] = i;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        auto row = split_csv(line);
        if (row.size() != header.size())
            throw FormatError("'" + path.string() + "': row with " + std::to_string(row.size()) + " fields under a " +
                              std::to_string(header.size()) + "-column header");
        table.rows.push_back(std::move(row));
    }
    return table;
}

template <typename T> T parse_number(const std::string &text)
{
    T value{};
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size())
        throw FormatError("'" + text + "' is not a number");
    return value;
}

} // namespace

void emit_report(const std::vector<MetricsReport> &reports, const ExperimentConfig &config,
                 const std::filesystem::path &out_dir)
{
    for (const auto &r : reports)
        check_triangle(r);
    ensure_directory(out_dir);

    std::ostringstream metrics, summary, trajectory, overhead, status;
    metrics << "method,seed,order_id,after_task,eval_task,accuracy\n";
    summary << "method,seed,avg_accuracy,mean_forgetting,trainable_params,order_id\n";
    trajectory << "method,seed,order_id,task_id,after_task,accuracy\n";
    overhead << "method,seed,order_id,base_params,adapted_sites,adapter_params,selector_params_per_site,"
                "selector_params_total,selector_fraction_per_site\n";
    status << "method,seed,order_id,status,error\n";

    for (const auto &r : reports) {
        const std::string key = r.method + "," + std::to_string(r.seed) + "," + r.order_id;
        for (std::size_t t = 0; t < r.accuracy.size(); ++t)
            for (std::size_t i = 0; i <= t; ++i)
                metrics << key << "," << t + 1 << "," << i + 1 << "," << num(r.accuracy[t][i]) << "\n";
        for (std::size_t i = 0; i < r.accuracy.size(); ++i)
            for (std::size_t t = i; t < r.accuracy.size(); ++t)
                trajectory << key << "," << r.task_ids[i] << "," << t + 1 << "," << num(r.accuracy[t][i]) << "\n";
        if (r.complete) {
            summary << r.method << "," << r.seed << "," << num(r.final_average()) << "," << num(r.mean_forgetting())
                    << "," << r.trainable_params() << "," << r.order_id << "\n";
            const double fraction = r.base_params ? static_cast<double>(r.selector_params_per_site) /
                                                        static_cast<double>(r.base_params)
                                                  : 0.0;
            overhead << key << "," << r.base_params << "," << r.adapted_sites << "," << r.adapter_params_total << ","
                     << r.selector_params_per_site << "," << r.selector_params_total << "," << num(fraction) << "\n";
        }
        status << key << "," << (r.complete ? "ok" : "failed") << "," << quoted(r.error) << "\n";
    }

    write_file_atomic(out_dir / "metrics.csv", metrics.str());
    write_file_atomic(out_dir / "trajectory.csv", trajectory.str());
    write_file_atomic(out_dir / "overhead.csv", overhead.str());
    write_file_atomic(out_dir / "status.csv", status.str());
    write_file_atomic(out_dir / "config.cfg", "# digest " + config.digest() + "\n" + config.to_text());
    // Aggregate summary last, so its presence marks a finished write.
    write_file_atomic(out_dir / "summary.csv", summary.str());
}

std::vector<MetricRow> read_metrics_csv(const std::filesystem::path &path)
{
    const CsvTable table = read_csv(path);
    std::vector<MetricRow> out;
    for (const auto &row : table.rows) {
        MetricRow m;
        m.method = table.get(row, "method");
        m.seed = parse_number<std::uint64_t>(table.get(row, "seed"));
        m.order_id = table.get(row, "order_id");
        m.after_task = parse_number<std::size_t>(table.get(row, "after_task"));
        m.eval_task = parse_number<std::size_t>(table.get(row, "eval_task"));
        m.accuracy = parse_number<double>(table.get(row, "accuracy"));
        out.push_back(std::move(m));
    }
    return out;
}

std::vector<SummaryRow> read_summary_csv(const std::filesystem::path &path)
{
    const CsvTable table = read_csv(path);
    std::vector<SummaryRow> out;
    for (const auto &row : table.rows) {
        SummaryRow s;
        s.method = table.get(row, "method");
        s.seed = parse_number<std::uint64_t>(table.get(row, "seed"));
        s.order_id = table.columns.count("order_id") ? table.get(row, "order_id") : "";
        s.avg_accuracy = parse_number<double>(table.get(row, "avg_accuracy"));
        s.mean_forgetting = parse_number<double>(table.get(row, "mean_forgetting"));
        s.trainable_params = parse_number<std::size_t>(table.get(row, "trainable_params"));
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<SummaryRow> summarize_metrics(const std::vector<MetricRow> &rows)
{
    using Key = std::tuple<std::string, std::uint64_t, std::string>;
    std::map<Key, std::map<std::pair<std::size_t, std::size_t>, double>> runs;
    std::vector<Key> order;
    for (const auto &m : rows) {
        Key key{m.method, m.seed, m.order_id};
        if (!runs.count(key))
            order.push_back(key);
        runs[key][{m.after_task, m.eval_task}] = m.accuracy;
    }
    std::vector<SummaryRow> out;
    for (const auto &key : order) {
        const auto &cells = runs[key];
        std::size_t n = 0;
        for (const auto &[pos, acc] : cells)
            n = std::max(n, pos.first);
        auto at = [&](std::size_t t, std::size_t i) {
            auto it = cells.find({t, i});
            if (it == cells.end())
                throw FormatError("metrics lack after_task " + std::to_string(t) + ", eval_task " + std::to_string(i));
            return it->second;
        };
        SummaryRow s;
        std::tie(s.method, s.seed, s.order_id) = key;
        for (std::size_t i = 1; i <= n; ++i)
            s.avg_accuracy += at(n, i);
        s.avg_accuracy /= static_cast<double>(n);
        for (std::size_t i = 1; i < n; ++i) {
            double best = at(n, i);
            for (std::size_t t = i; t < n; ++t)
                best = std::max(best, at(t, i));
            s.mean_forgetting += best - at(n, i);
        }
        if (n > 1)
            s.mean_forgetting /= static_cast<double>(n - 1);
        out.push_back(std::move(s));
    }
    return out;
}

std::string format_method_table(const std::vector<SummaryRow> &rows)
{
    std::map<std::string, std::vector<const SummaryRow *>> by_method;
    std::vector<std::string> order;
    for (const auto &r : rows) {
        if (!by_method.count(r.method))
            order.push_back(r.method);
        by_method[r.method].push_back(&r);
    }
    auto stats = [](const std::vector<double> &v) {
        double mean = 0.0;
        for (double x : v)
            mean += x;
        mean /= static_cast<double>(v.size());
        double var = 0.0;
        for (double x : v)
            var += (x - mean) * (x - mean);
        const double sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
        return std::pair{mean, sd};
    };
    std::ostringstream out;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-10s %5s %18s %18s %12s\n", "method", "runs", "avg_accuracy", "mean_forgetting",
                  "trainable");
    out << buf;
    for (const auto &m : order) {
        std::vector<double> acc, fgt;
        std::size_t params = 0;
        for (const auto *r : by_method[m]) {
            acc.push_back(r->avg_accuracy);
            fgt.push_back(r->mean_forgetting);
            params = std::max(params, r->trainable_params);
        }
        const auto [am, as] = stats(acc);
        const auto [fm, fs] = stats(fgt);
        std::snprintf(buf, sizeof buf, "%-10s %5zu %10.4f +- %.4f %10.4f +- %.4f %12zu\n", m.c_str(), acc.size(), am,
                      as, fm, fs, params);
        out << buf;
    }
    return out.str();
}

} // namespace amlora
