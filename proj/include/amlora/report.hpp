#pragma once

#include <amlora/config.hpp>
#include <amlora/harness.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace amlora {

/// Writes into out_dir:
///   metrics.csv     method,seed,order_id,after_task,eval_task,accuracy
///   summary.csv     method,seed,avg_accuracy,mean_forgetting,trainable_params,order_id
///   trajectory.csv  method,seed,order_id,task_id,after_task,accuracy
///   overhead.csv    parameter accounting per run
///   status.csv      one line per run, complete or failed
///   config.cfg      canonical config text, digest in its first line
/// after_task and eval_task are 1-based stream positions. Incomplete reports
/// contribute their measured rows but no summary line. Every file is written
/// to a temporary name first and renamed into place.
void emit_report(const std::vector<MetricsReport> &reports, const ExperimentConfig &config,
                 const std::filesystem::path &out_dir);

struct MetricRow {
    std::string method;
    std::uint64_t seed = 0;
    std::string order_id;
    std::size_t after_task = 0;
    std::size_t eval_task = 0;
    double accuracy = 0.0;
};

struct SummaryRow {
    std::string method;
    std::uint64_t seed = 0;
    std::string order_id;
    double avg_accuracy = 0.0;
    double mean_forgetting = 0.0;
    std::size_t trainable_params = 0;
};

std::vector<MetricRow> read_metrics_csv(const std::filesystem::path &path);
std::vector<SummaryRow> read_summary_csv(const std::filesystem::path &path);

/// Rebuilds each run's accuracy triangle from metrics rows and recomputes
/// average accuracy and mean forgetting. trainable_params stays 0.
std::vector<SummaryRow> summarize_metrics(const std::vector<MetricRow> &rows);

/// Human-readable table: mean and sample standard deviation over seeds and orders per method.
std::string format_method_table(const std::vector<SummaryRow> &rows);

} // namespace amlora
