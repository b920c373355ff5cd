#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace amlora::ortho {

/// One evaluation of f(Ax) against f((A+B)x) for orthogonal A and B.
struct CounterexampleRecord {
    std::size_t n = 0;
    std::string function_tag;
    Eigen::MatrixXd a;
    Eigen::MatrixXd b;
    Eigen::VectorXd x;
    Eigen::VectorXd f_ax;
    Eigen::VectorXd f_abx;
    /// Frobenius norm of A^T B (for single-row A and B, of A B^T).
    double residual = 0.0;
    /// ||f(Ax) - f((A+B)x)||_2
    double deviation = 0.0;
};

using VectorFn = std::function<Eigen::VectorXd(const Eigen::VectorXd &)>;

CounterexampleRecord evaluate_pair(std::string function_tag, const Eigen::MatrixXd &a, const Eigen::MatrixXd &b,
                                   const Eigen::VectorXd &x, const VectorFn &f);

/// f = sin, A = (1, 0), B = (0, -1), x = (pi/2, pi). A and B are the rows of
/// a 1x2 map, so orthogonality is their inner product.
CounterexampleRecord counterexample_1d();
/// A = diag(1, 0), B = diag(0, 1), x = (1, -1), f(v) = (v1 + v2, -v2).
CounterexampleRecord counterexample_2d();
/// A = e1 e1^T, B = en en^T, x = e1 - en, f(v) = (v1 + vn, 0, ..., 0, -vn). Needs n >= 2.
CounterexampleRecord counterexample_nd(std::size_t n);

/// The explicit n x n matrix of the nD f.
Eigen::MatrixXd nd_function_matrix(std::size_t n);

enum class Nonlinearity { sin, relu, mlp, identity };

Nonlinearity parse_nonlinearity(std::string_view text);
std::string_view to_string(Nonlinearity f);

struct TrialRecord {
    std::size_t trial = 0;
    std::size_t n = 0;
    std::size_t rank_a = 0;
    double residual = 0.0;
    double deviation = 0.0;
};

struct StudySummary {
    std::size_t n = 0;
    std::size_t trials = 0;
    std::size_t skipped = 0;
    Nonlinearity nonlinearity = Nonlinearity::mlp;
    std::vector<TrialRecord> records;
    double max_residual = 0.0;
    double mean_deviation = 0.0;
    double median_deviation = 0.0;
    double max_deviation = 0.0;
    /// Share of completed trials whose deviation exceeds 1e-6.
    double fraction_deviating = 0.0;
};

struct StudyOptions {
    std::size_t n = 8;
    std::size_t trials = 1000;
    Nonlinearity nonlinearity = Nonlinearity::mlp;
    std::uint64_t seed = 0;
    /// Control arm: B is replaced by zero after projection.
    bool zero_b = false;
};

/// Random A of random rank k, B projected onto the orthogonal complement of
/// A's column space, random x. Trials with full-rank A have no room for a
/// nonzero B and are counted as skipped. A trial whose residual exceeds 1e-10
/// after projection aborts the study with NumericError.
StudySummary random_orthogonality_study(const StudyOptions &options);

/// Writes trial,n,residual,deviation rows (write to temp file, then rename).
void write_ortho_report(const StudySummary &summary, const std::filesystem::path &path);

} // namespace amlora::ortho
